//! Smoothing kernels `K_h` and the pooled kernel over `S` simulated summaries.
//!
//! A multivariate summary difference `u = t_y - t` is first reduced to a
//! scalar distance by a [`SummaryDistance`], then scaled by the bandwidth and
//! pushed through a standard one-dimensional kernel profile. Each profile
//! keeps its usual normalising constant so that `K_h` is a proper density in
//! one dimension.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

use crate::error::{LfsError, Result};
use crate::model::{AuxiliaryBundle, SummaryVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Uniform,
    Epanechnikov,
    Gaussian,
}

impl KernelKind {
    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Uniform => "uniform",
            KernelKind::Epanechnikov => "epanechnikov",
            KernelKind::Gaussian => "gaussian",
        }
    }

    /// Whether the profile vanishes for scaled distances above one.
    pub fn has_compact_support(&self) -> bool {
        !matches!(self, KernelKind::Gaussian)
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for KernelKind {
    type Err = LfsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(KernelKind::Uniform),
            "epanechnikov" => Ok(KernelKind::Epanechnikov),
            "gaussian" => Ok(KernelKind::Gaussian),
            other => Err(LfsError::config(format!("unknown kernel `{other}`"))),
        }
    }
}

/// Reduction of a summary difference vector to a nonnegative scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "norm", rename_all = "kebab-case")]
pub enum SummaryDistance {
    #[default]
    Euclidean,
    WeightedEuclidean {
        weights: Vec<f64>,
    },
}

impl SummaryDistance {
    pub fn weighted(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(LfsError::config(
                "distance weights must be positive and finite",
            ));
        }
        Ok(SummaryDistance::WeightedEuclidean { weights })
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        match self {
            SummaryDistance::Euclidean => u.iter().map(|x| x * x).sum::<f64>().sqrt(),
            SummaryDistance::WeightedEuclidean { weights } => {
                debug_assert_eq!(weights.len(), u.len());
                u.iter()
                    .zip(weights)
                    .map(|(x, w)| w * x * x)
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            SummaryDistance::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            SummaryDistance::WeightedEuclidean { weights } => a
                .iter()
                .zip(b)
                .zip(weights)
                .map(|((x, y), w)| w * (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Scale factor `c` with `distance(a, b) = c |a - b|` for one-dimensional
    /// summaries.
    pub fn scale_1d(&self) -> f64 {
        match self {
            SummaryDistance::Euclidean => 1.0,
            SummaryDistance::WeightedEuclidean { weights } => weights[0].sqrt(),
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            SummaryDistance::WeightedEuclidean { weights } if weights.len() != dim => {
                Err(LfsError::config(format!(
                    "distance has {} weights but summaries have dimension {dim}",
                    weights.len()
                )))
            }
            _ => Ok(()),
        }
    }
}

/// A kernel kind, a positive bandwidth and the distance used to reduce
/// summary differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingKernel {
    kind: KernelKind,
    bandwidth: f64,
    #[serde(default)]
    distance: SummaryDistance,
}

impl SmoothingKernel {
    pub fn new(kind: KernelKind, bandwidth: f64) -> Result<Self> {
        Self::with_distance(kind, bandwidth, SummaryDistance::Euclidean)
    }

    pub fn with_distance(
        kind: KernelKind,
        bandwidth: f64,
        distance: SummaryDistance,
    ) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(LfsError::config(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self {
            kind,
            bandwidth,
            distance,
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn distance(&self) -> &SummaryDistance {
        &self.distance
    }

    /// Same kind and distance at another bandwidth.
    pub fn at_bandwidth(&self, bandwidth: f64) -> Result<Self> {
        Self::with_distance(self.kind, bandwidth, self.distance.clone())
    }

    /// Profile value at scaled distance `d = ||u|| / h`.
    fn profile(&self, d: f64) -> f64 {
        let h = self.bandwidth;
        match self.kind {
            KernelKind::Uniform => {
                if d <= 1.0 {
                    0.5 / h
                } else {
                    0.0
                }
            }
            KernelKind::Epanechnikov => {
                if d <= 1.0 {
                    0.75 / h * (1.0 - d * d)
                } else {
                    0.0
                }
            }
            KernelKind::Gaussian => (-0.5 * d * d).exp() / (h * (2.0 * PI).sqrt()),
        }
    }

    fn log_profile(&self, d: f64) -> f64 {
        match self.kind {
            KernelKind::Gaussian => -0.5 * d * d - self.bandwidth.ln() - 0.5 * (2.0 * PI).ln(),
            _ => self.profile(d).ln(),
        }
    }

    /// `K_h(u)` for a summary difference `u`.
    pub fn evaluate(&self, u: &[f64]) -> f64 {
        self.profile(self.distance.norm(u) / self.bandwidth)
    }

    /// `K_h(t_y - t)`.
    pub fn evaluate_pair(&self, t_y: &[f64], t: &[f64]) -> f64 {
        self.profile(self.distance.distance(t_y, t) / self.bandwidth)
    }

    pub fn log_evaluate_pair(&self, t_y: &[f64], t: &[f64]) -> f64 {
        self.log_profile(self.distance.distance(t_y, t) / self.bandwidth)
    }

    /// Mean of `K_h(t_y - t^s)` over the given summaries.
    pub fn pooled_evaluate(&self, t_y: &[f64], summaries: &[SummaryVector]) -> Result<f64> {
        if summaries.is_empty() {
            return Err(LfsError::config(
                "pooled kernel needs at least one simulated summary",
            ));
        }
        let total: f64 = summaries.iter().map(|t| self.evaluate_pair(t_y, t)).sum();
        Ok(total / summaries.len() as f64)
    }

    /// `log K̃_h(t_y, t^{1:S})`, computed with a log-sum-exp so that Gaussian
    /// terms far in the tails do not underflow. Zero pooled mass gives `-inf`.
    pub fn log_pooled(&self, t_y: &[f64], bundle: &AuxiliaryBundle) -> f64 {
        let s = bundle.len();
        if s == 1 {
            return self.log_evaluate_pair(t_y, bundle.get(0));
        }
        match self.kind {
            KernelKind::Gaussian => {
                let mut max = f64::NEG_INFINITY;
                let mut logs = Vec::with_capacity(s);
                for t in bundle.iter() {
                    let l = self.log_evaluate_pair(t_y, t);
                    max = max.max(l);
                    logs.push(l);
                }
                if max == f64::NEG_INFINITY {
                    return max;
                }
                let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
                max + (sum / s as f64).ln()
            }
            _ => {
                let total: f64 = bundle.iter().map(|t| self.evaluate_pair(t_y, t)).sum();
                (total / s as f64).ln()
            }
        }
    }

    /// `K_h(0)`, the largest value `evaluate` can return.
    pub fn sup_value(&self) -> f64 {
        self.profile(0.0)
    }
}
