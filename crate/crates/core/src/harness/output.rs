//! CSV and JSON artifacts.
//!
//! CSV files start with the producing configuration as `# ` comment lines,
//! then a header row, then one row per sample. Floats are written in the
//! shortest decimal form that parses back to the same `f64`.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::diagnostics::WeightedSamples;
use crate::error::{LfsError, Result};
use crate::harness::config::RunConfig;
use crate::model::ParamVector;

const CONFIG_BEGIN: &str = "# lfs-config";
const CONFIG_END: &str = "# end-config";

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: RunConfig,
    pub seed: u64,
    pub code_version: String,
}

impl Provenance {
    pub fn of(config: &RunConfig) -> Self {
        Self {
            config: config.echo(),
            seed: config.seed,
            code_version: CODE_VERSION.to_string(),
        }
    }
}

/// CSV table under construction.
pub struct CsvTable {
    text: String,
    columns: usize,
}

impl CsvTable {
    pub fn new(config: &RunConfig, header: &[String]) -> Self {
        let mut text = String::new();
        text.push_str(CONFIG_BEGIN);
        text.push('\n');
        for line in config.echo().to_toml().lines() {
            if line.is_empty() {
                text.push_str("#\n");
            } else {
                let _ = writeln!(text, "# {line}");
            }
        }
        text.push_str(CONFIG_END);
        text.push('\n');
        text.push_str(&header.join(","));
        text.push('\n');
        Self {
            text,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        debug_assert_eq!(cells.len(), self.columns);
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::F(x) => write!(self.text, "{x}"),
                Cell::U(x) => write!(self.text, "{x}"),
                Cell::B(x) => write!(self.text, "{}", u8::from(*x)),
                Cell::S(x) => write!(self.text, "{x}"),
            }
            .expect("writing to a String");
        }
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

pub enum Cell<'a> {
    F(f64),
    U(u64),
    B(bool),
    S(&'a str),
}

pub fn theta_header(dim: usize) -> Vec<String> {
    (0..dim).map(|d| format!("theta_{d}")).collect()
}

/// The TOML text between the configuration markers of a CSV file.
pub fn embedded_config(csv: &str) -> Result<String> {
    let mut lines = csv.lines();
    if lines.next() != Some(CONFIG_BEGIN) {
        return Err(LfsError::config(
            "CSV file does not start with an embedded configuration",
        ));
    }
    let mut out = String::new();
    for line in lines {
        if line == CONFIG_END {
            return Ok(out);
        }
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| LfsError::config("unterminated embedded configuration"))?;
        out.push_str(body.strip_prefix(' ').unwrap_or(body));
        out.push('\n');
    }
    Err(LfsError::config("unterminated embedded configuration"))
}

/// Header and numeric rows of a CSV artifact, comments skipped.
pub fn read_table(csv: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| LfsError::config("empty CSV"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| {
            l.split(',')
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|e| LfsError::config(format!("bad CSV cell '{c}': {e}")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

/// Samples of a run CSV: the `theta_*` columns, weighted by the `weight`
/// column when present.
pub fn read_samples(csv: &str) -> Result<WeightedSamples> {
    let (header, rows) = read_table(csv)?;
    let theta_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("theta_"))
        .map(|(i, _)| i)
        .collect();
    let thetas: Vec<ParamVector> = rows
        .iter()
        .map(|r| ParamVector::new(theta_cols.iter().map(|&c| r[c]).collect()))
        .collect();
    match header.iter().position(|h| h == "weight") {
        Some(w) => {
            WeightedSamples::weighted(&thetas, &rows.iter().map(|r| r[w]).collect::<Vec<_>>())
        }
        None => WeightedSamples::unweighted(&thetas),
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports always serialise");
    s.push('\n');
    s
}

/// Files produced by one command, keyed by suffix (`csv`, `json`, ...).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub files: Vec<(String, String)>,
}

impl Artifacts {
    pub fn add(&mut self, suffix: &str, contents: String) {
        self.files.push((suffix.to_string(), contents));
    }

    pub fn get(&self, suffix: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|(s, _)| s == suffix)
            .map(|(_, c)| c.as_str())
    }

    /// Writes `<dir>/<prefix>.<suffix>` for every file and returns the paths.
    pub fn write(&self, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        self.files
            .iter()
            .map(|(suffix, contents)| {
                let path = dir.join(format!("{prefix}.{suffix}"));
                std::fs::write(&path, contents)?;
                Ok(path)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_config_round_trips() {
        let cfg = RunConfig {
            s: 7,
            kernel: crate::harness::config::KernelSection {
                weights: Some(vec![1.5]),
                ..Default::default()
            },
            ..Default::default()
        };
        let mut t = CsvTable::new(&cfg, &["theta_0".to_string()]);
        t.row(&[Cell::F(0.1)]);
        let csv = t.finish();
        assert_eq!(
            RunConfig::from_toml(&embedded_config(&csv).unwrap()).unwrap(),
            cfg
        );
    }

    #[test]
    fn floats_round_trip_exactly() {
        let xs = [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            1e300,
            f64::MIN_POSITIVE,
            123456789.12345679,
        ];
        let mut t = CsvTable::new(
            &RunConfig::default(),
            &["theta_0".to_string(), "weight".to_string()],
        );
        for x in xs {
            t.row(&[Cell::F(x), Cell::F(1.0)]);
        }
        let (_, rows) = read_table(&t.finish()).unwrap();
        for (r, x) in rows.iter().zip(xs) {
            assert_eq!(r[0].to_bits(), x.to_bits());
        }
    }

    #[test]
    fn malformed_inputs() {
        assert!(embedded_config("theta_0\n1\n").is_err());
        assert!(embedded_config("# lfs-config\n# s = 1\n").is_err());
        assert!(read_table("# c\nx\nnot-a-number\n").is_err());
    }
}
