//! Sample summaries and goodness-of-fit statistics used to check sampler
//! output against oracles and against each other.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LfsError, Result};
use crate::model::ParamVector;
use crate::rng::{SeedStreams, Stream, StreamTag};

/// A population of parameter draws with normalised weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSamples {
    dim: usize,
    thetas: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedSamples {
    pub fn unweighted(rows: &[ParamVector]) -> Result<Self> {
        let w = vec![1.0; rows.len()];
        Self::weighted(rows, &w)
    }

    /// Normalises `weights`, which must be nonnegative with positive sum.
    pub fn weighted(rows: &[ParamVector], weights: &[f64]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.len())
            .ok_or_else(|| LfsError::config("empty sample"))?;
        if rows.len() != weights.len() || rows.iter().any(|r| r.len() != dim) {
            return Err(LfsError::config(
                "sample rows and weights disagree in shape",
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) || weights.iter().any(|w| *w < 0.0) {
            return Err(LfsError::config(
                "sample weights must be nonnegative with positive finite sum",
            ));
        }
        Ok(Self {
            dim,
            thetas: rows.iter().flat_map(|r| r.iter().copied()).collect(),
            weights: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn from_log_weights(rows: &[ParamVector], log_weights: &[f64]) -> Result<Self> {
        let normalized = normalize_log_weights(log_weights)
            .ok_or_else(|| LfsError::config("all weights are zero"))?;
        Self::weighted(rows, &normalized)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.thetas[i * self.dim..(i + 1) * self.dim]
    }

    pub fn marginal(&self, d: usize) -> Vec<f64> {
        self.thetas
            .iter()
            .skip(d)
            .step_by(self.dim)
            .copied()
            .collect()
    }
}

/// Exponentiates and normalises log weights; `None` if every weight is zero.
pub fn normalize_log_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return None;
    }
    let unnorm: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Some(unnorm.into_iter().map(|w| w / total).collect())
}

/// `log Σ exp(x_i)`.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Effective sample size `1 / Σ w²` of normalised weights.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Weighted mean and (population) variance per dimension.
pub fn weighted_moments(samples: &WeightedSamples) -> (Vec<f64>, Vec<f64>) {
    let mut means = vec![0.0; samples.dim];
    let mut vars = vec![0.0; samples.dim];
    for d in 0..samples.dim {
        let xs = samples.marginal(d);
        let mean: f64 = xs.iter().zip(&samples.weights).map(|(x, w)| w * x).sum();
        let var: f64 = xs
            .iter()
            .zip(&samples.weights)
            .map(|(x, w)| w * (x - mean) * (x - mean))
            .sum();
        means[d] = mean;
        vars[d] = var;
    }
    (means, vars)
}

fn sorted_pairs(xs: &[f64], ws: &[f64]) -> Vec<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ws.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

fn ks_one_dim(xs: &[f64], ws: &[f64], cdf: &dyn Fn(f64) -> f64) -> f64 {
    let pairs = sorted_pairs(xs, ws);
    let mut d = 0.0f64;
    let mut cum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let x = pairs[i].0;
        let before = cum;
        while i < pairs.len() && pairs[i].0 == x {
            cum += pairs[i].1;
            i += 1;
        }
        let f = cdf(x);
        d = d.max((before - f).abs()).max((cum.min(1.0) - f).abs());
    }
    d
}

/// Kolmogorov–Smirnov distance between the weighted empirical CDF and an
/// oracle CDF. With several dimensions, one CDF per marginal is expected and
/// the largest per-marginal statistic is returned.
pub fn ks_statistic(samples: &WeightedSamples, cdfs: &[&dyn Fn(f64) -> f64]) -> Result<f64> {
    if cdfs.len() != samples.dim {
        return Err(LfsError::config(format!(
            "need {} marginal CDFs, got {}",
            samples.dim,
            cdfs.len()
        )));
    }
    Ok((0..samples.dim)
        .map(|d| ks_one_dim(&samples.marginal(d), &samples.weights, cdfs[d]))
        .fold(0.0, f64::max))
}

/// Asymptotic Kolmogorov tail probability `P(K > λ)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample comparison with its statistic and p-values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleKs {
    pub statistic: f64,
    pub asymptotic_p: f64,
    pub permutation_p: Option<f64>,
}

struct PooledRanks {
    /// End index (exclusive) of each run of tied values in sorted order.
    tie_ends: Vec<usize>,
    labels: Vec<bool>,
    n_a: usize,
    n_b: usize,
}

impl PooledRanks {
    fn new(a: &[f64], b: &[f64]) -> Self {
        let mut pooled: Vec<(f64, bool)> = a
            .iter()
            .map(|&x| (x, true))
            .chain(b.iter().map(|&x| (x, false)))
            .collect();
        pooled.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut tie_ends = Vec::new();
        for i in 0..pooled.len() {
            if i + 1 == pooled.len() || pooled[i + 1].0 != pooled[i].0 {
                tie_ends.push(i + 1);
            }
        }
        Self {
            tie_ends,
            labels: pooled.iter().map(|p| p.1).collect(),
            n_a: a.len(),
            n_b: b.len(),
        }
    }

    fn statistic(&self, labels: &[bool]) -> f64 {
        let (mut ca, mut cb, mut start, mut d) = (0usize, 0usize, 0usize, 0.0f64);
        for &end in &self.tie_ends {
            for &l in &labels[start..end] {
                if l {
                    ca += 1;
                } else {
                    cb += 1;
                }
            }
            start = end;
            d = d.max((ca as f64 / self.n_a as f64 - cb as f64 / self.n_b as f64).abs());
        }
        d
    }
}

/// Two-sample Kolmogorov–Smirnov test. When `permutations > 0`, the
/// p-value is also computed by relabelling the pooled sample that many times
/// using streams derived from `streams`.
pub fn ks_two_sample(
    a: &[f64],
    b: &[f64],
    permutations: usize,
    streams: &SeedStreams,
) -> Result<TwoSampleKs> {
    if a.is_empty() || b.is_empty() {
        return Err(LfsError::config("two-sample KS needs two nonempty samples"));
    }
    let ranks = PooledRanks::new(a, b);
    let statistic = ranks.statistic(&ranks.labels);
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * statistic;
    let asymptotic_p = kolmogorov_survival(lambda);
    let permutation_p = (permutations > 0).then(|| {
        let exceed: usize = (0..permutations)
            .into_par_iter()
            .map(|p| {
                let mut rng = streams.stream(StreamTag::Diagnostics, p as u64, 0);
                let mut labels = ranks.labels.clone();
                labels.shuffle(&mut rng);
                usize::from(ranks.statistic(&labels) >= statistic - 1e-12)
            })
            .sum();
        (1 + exceed) as f64 / (1 + permutations) as f64
    });
    Ok(TwoSampleKs {
        statistic,
        asymptotic_p,
        permutation_p,
    })
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means with `⌊√n⌋` batches.
pub fn batch_means_se(series: &[f64]) -> f64 {
    let n = series.len();
    let batches = (n as f64).sqrt().floor().max(2.0) as usize;
    let size = n / batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| series[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// Mean and standard error of independent replicate values.
pub fn replicate_mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Percentile bootstrap interval of `statistic` over `groups`, resampling
/// within each group independently.
pub fn bootstrap_ci(
    groups: &[Vec<f64>],
    statistic: &(dyn Fn(&[Vec<f64>]) -> f64 + Sync),
    resamples: usize,
    level: f64,
    rng: &mut Stream,
) -> (f64, f64) {
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let drawn: Vec<Vec<f64>> = groups
                .iter()
                .map(|g| {
                    (0..g.len())
                        .map(|_| g[rng.random_range(0..g.len())])
                        .collect()
                })
                .collect();
            statistic(&drawn)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let idx = |q: f64| ((q * (resamples - 1) as f64).round() as usize).min(resamples - 1);
    (stats[idx(alpha)], stats[idx(1.0 - alpha)])
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;
    use statrs::function::erf::erfc;

    fn pv(x: f64) -> ParamVector {
        ParamVector::new(vec![x])
    }

    fn phi(x: f64) -> f64 {
        0.5 * erfc(-x / std::f64::consts::SQRT_2)
    }

    #[test]
    fn moments_examples() {
        let s = WeightedSamples::unweighted(&[pv(-1.0), pv(1.0)]).unwrap();
        assert_eq!(weighted_moments(&s), (vec![0.0], vec![1.0]));
        let s = WeightedSamples::weighted(&[pv(3.0), pv(-7.0)], &[1.0, 0.0]).unwrap();
        assert_eq!(weighted_moments(&s), (vec![3.0], vec![0.0]));
    }

    #[test]
    fn moments_of_a_million_normals() {
        let mut rng = SeedStreams::new(5).stream(StreamTag::Test, 0, 0);
        let rows: Vec<ParamVector> = (0..1_000_000)
            .map(|_| pv(rng.sample(StandardNormal)))
            .collect();
        let (_, var) = weighted_moments(&WeightedSamples::unweighted(&rows).unwrap());
        assert!((var[0] - 1.0).abs() < 0.005);
    }

    #[test]
    fn ess_examples() {
        assert!((ess(&[0.01; 100]) - 100.0).abs() < 1e-9);
        assert_eq!(ess(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(ess(&[0.5, 0.5, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn ks_point_mass_is_far() {
        let s = WeightedSamples::unweighted(&[pv(0.3)]).unwrap();
        assert!(ks_statistic(&s, &[&phi]).unwrap() >= 0.5);
        // one nonzero weight reduces to the n = 1 case
        let w = WeightedSamples::weighted(&[pv(0.3), pv(-2.0), pv(1.0)], &[0.0, 1.0, 0.0]).unwrap();
        let single = WeightedSamples::unweighted(&[pv(-2.0)]).unwrap();
        assert_eq!(
            ks_statistic(&w, &[&phi]).unwrap(),
            ks_statistic(&single, &[&phi]).unwrap()
        );
    }

    #[test]
    fn ks_critical_value_under_the_null() {
        const SEED: u64 = 1;
        let streams = SeedStreams::new(SEED);
        let n = 10_000;
        let critical = 1.63 / (n as f64).sqrt();
        let passes = (0..100)
            .filter(|&r| {
                let mut rng = streams.stream(StreamTag::Test, r, 0);
                let rows: Vec<ParamVector> =
                    (0..n).map(|_| pv(rng.sample(StandardNormal))).collect();
                ks_statistic(&WeightedSamples::unweighted(&rows).unwrap(), &[&phi]).unwrap()
                    < critical
            })
            .count();
        assert!(passes >= 99, "{passes} of 100");
    }

    #[test]
    fn ks_null_rejection_rate_is_nominal() {
        // 1.63/√n is the 1% critical value; the rate over many replicates
        // must sit within 4 binomial SDs of 0.01
        let streams = SeedStreams::new(78);
        let n = 2_000;
        let reps = 4_000u64;
        let critical = 1.63 / (n as f64).sqrt();
        let fails = (0..reps)
            .into_par_iter()
            .filter(|&r| {
                let mut rng = streams.stream(StreamTag::Test, r, 0);
                let rows: Vec<ParamVector> =
                    (0..n).map(|_| pv(rng.sample(StandardNormal))).collect();
                ks_statistic(&WeightedSamples::unweighted(&rows).unwrap(), &[&phi]).unwrap()
                    >= critical
            })
            .count() as f64;
        let sd = (reps as f64 * 0.01 * 0.99).sqrt();
        assert!(
            (fails - reps as f64 * 0.01).abs() < 4.0 * sd,
            "{fails} rejections in {reps}"
        );
    }

    #[test]
    fn ks_dimension_mismatch() {
        let s = WeightedSamples::unweighted(&[ParamVector::new(vec![0.0, 1.0])]).unwrap();
        assert!(ks_statistic(&s, &[&phi]).is_err());
        assert!(ks_statistic(&s, &[&phi, &phi]).is_ok());
    }

    #[test]
    fn two_sample_ks_null_and_shift() {
        let streams = SeedStreams::new(8);
        let mut rng = streams.stream(StreamTag::Test, 0, 0);
        let a: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
        let c: Vec<f64> = b.iter().map(|x| x + 0.3).collect();
        let same = ks_two_sample(&a, &b, 199, &streams).unwrap();
        assert!(same.asymptotic_p > 0.01 && same.permutation_p.unwrap() > 0.01);
        let shifted = ks_two_sample(&a, &c, 199, &streams).unwrap();
        assert!(shifted.asymptotic_p < 1e-6 && shifted.permutation_p.unwrap() <= 0.005);
        assert!(ks_two_sample(&a, &[], 0, &streams).is_err());
    }

    #[test]
    fn kolmogorov_tail_reference_values() {
        // P(K > 1.358) ≈ 0.05 and P(K > 1.628) ≈ 0.01
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_survival(1.628) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn log_weights_normalise() {
        let w = normalize_log_weights(&[0.0, f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(w, vec![0.5, 0.0, 0.5]);
        assert!(normalize_log_weights(&[f64::NEG_INFINITY; 3]).is_none());
        assert!((log_sum_exp([1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn batch_means_of_iid_series() {
        let mut rng = SeedStreams::new(9).stream(StreamTag::Test, 0, 0);
        let xs: Vec<f64> = (0..40_000).map(|_| rng.sample(StandardNormal)).collect();
        let se = batch_means_se(&xs);
        assert!((se / (1.0 / 200.0) - 1.0).abs() < 0.25, "{se}");
    }
}
