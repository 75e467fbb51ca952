//! Priors, simulators and analytic oracles.
//!
//! A [`Model`] bundles the prior `π(θ)`, a simulator drawing summaries
//! `t ~ f(t|θ)`, and optionally an [`AnalyticOracle`] for the smoothed
//! marginal posterior `π_M(θ|t_y) ∝ π(θ) ∫ K_h(t_y - t) f(t|θ) dt`. Samplers
//! never evaluate `f` pointwise; only the oracles use the closed forms.

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::{beta::beta_reg, erf::erfc};
use std::f64::consts::{PI, SQRT_2};
use std::ops::Deref;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{LfsError, Result};
use crate::kernel::{KernelKind, SmoothingKernel};
use crate::quadrature;
use crate::rng::Stream;

macro_rules! real_vector {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(components: Vec<f64>) -> Self {
                Self(components)
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];

            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
    };
}

real_vector!(
    /// A point `θ` in parameter space.
    ParamVector
);
real_vector!(
    /// A summary statistic vector `t = T(x)`.
    SummaryVector
);

/// The `S` simulated summaries `t^{1:S}` attached to one parameter value,
/// stored contiguously in simulation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryBundle {
    dim: usize,
    data: Vec<f64>,
}

impl AuxiliaryBundle {
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(LfsError::config(format!(
                "bundle needs S >= 1 summaries of dimension {dim}, got {} values",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_summaries(summaries: &[SummaryVector]) -> Result<Self> {
        let dim = summaries.first().map(|t| t.len()).unwrap_or(0);
        if summaries.iter().any(|t| t.len() != dim) {
            return Err(LfsError::config(
                "bundle summaries must share one dimension",
            ));
        }
        Self::from_flat(
            dim,
            summaries.iter().flat_map(|t| t.iter().copied()).collect(),
        )
    }

    /// Number of summaries `S`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, s: usize) -> &[f64] {
        &self.data[s * self.dim..(s + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_summaries(&self) -> Vec<SummaryVector> {
        self.iter()
            .map(|t| SummaryVector::new(t.to_vec()))
            .collect()
    }
}

/// Prior, simulator and (optionally) oracle of a likelihood-free model.
///
/// Implementations must be immutable: `simulate` is called concurrently from
/// many workers, each with its own stream.
pub trait Model: Send + Sync {
    fn name(&self) -> &str;

    fn param_dim(&self) -> usize;

    fn summary_dim(&self) -> usize;

    fn prior_sample(&self, rng: &mut Stream) -> ParamVector;

    /// `log π(θ)`, `-inf` outside the support.
    fn prior_logdensity(&self, theta: &[f64]) -> f64;

    /// Per-dimension prior scale, used to size default proposals.
    fn prior_scale(&self) -> Vec<f64>;

    /// Writes one summary `t ~ f(t|θ)` into `out`. Only called for `θ` in
    /// the prior support.
    fn simulate_one(&self, theta: &[f64], rng: &mut Stream, out: &mut [f64]);

    /// Smoothed marginal posterior for the observed summaries and kernel.
    fn oracle(&self, _t_y: &[f64], kernel: &SmoothingKernel) -> Result<AnalyticOracle> {
        Err(LfsError::Capability {
            model: self.name().to_string(),
            kernel: kernel.kind().to_string(),
        })
    }

    fn in_support(&self, theta: &[f64]) -> bool {
        self.prior_logdensity(theta) > f64::NEG_INFINITY
    }

    /// `S` conditionally independent summaries at `θ`.
    fn simulate(&self, theta: &[f64], s: usize, rng: &mut Stream) -> Result<AuxiliaryBundle> {
        if s == 0 {
            return Err(LfsError::config("S must be at least 1"));
        }
        if theta.len() != self.param_dim() || !self.in_support(theta) {
            return Err(LfsError::Domain {
                model: self.name().to_string(),
                theta: theta.to_vec(),
            });
        }
        let dim = self.summary_dim();
        let mut data = vec![0.0; s * dim];
        for out in data.chunks_exact_mut(dim) {
            self.simulate_one(theta, rng, out);
        }
        AuxiliaryBundle::from_flat(dim, data)
    }
}

/// Normalised smoothed marginal posterior `π_M(θ|t_y)` of a toy model.
#[derive(Clone)]
pub enum AnalyticOracle {
    Normal {
        mean: f64,
        variance: f64,
    },
    /// Mixture of `Beta(a, b)` densities with normalised weights.
    BetaMixture {
        components: Vec<(f64, f64, f64)>,
    },
    /// Closed-form unnormalised density normalised by quadrature on `[lo, hi]`.
    Numeric(NumericOracle),
}

#[derive(Clone)]
pub struct NumericOracle {
    unnormalized: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    lo: f64,
    hi: f64,
    breaks: Vec<f64>,
    norm: f64,
    mean: f64,
    variance: f64,
}

const ORACLE_TOL: f64 = 1e-9;

impl NumericOracle {
    pub fn new(
        unnormalized: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        lo: f64,
        hi: f64,
        breaks: Vec<f64>,
    ) -> Self {
        let f = &unnormalized;
        let norm = quadrature::integrate_with_breaks(|x| f(x), lo, hi, &breaks, ORACLE_TOL * 1e-3);
        let tol = ORACLE_TOL * 1e-3 * norm;
        let mean = quadrature::integrate_with_breaks(|x| x * f(x), lo, hi, &breaks, tol) / norm;
        let variance = quadrature::integrate_with_breaks(
            |x| (x - mean) * (x - mean) * f(x),
            lo,
            hi,
            &breaks,
            tol,
        ) / norm;
        Self {
            unnormalized,
            lo,
            hi,
            breaks,
            norm,
            mean,
            variance,
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn beta_logpdf(x: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - statrs::function::beta::ln_beta(a, b)
}

impl AnalyticOracle {
    pub fn density(&self, theta: f64) -> f64 {
        match self {
            AnalyticOracle::Normal { mean, variance } => {
                let sd = variance.sqrt();
                normal_pdf((theta - mean) / sd) / sd
            }
            AnalyticOracle::BetaMixture { components } => {
                if !(0.0..=1.0).contains(&theta) {
                    return 0.0;
                }
                components
                    .iter()
                    .map(|&(w, a, b)| w * beta_logpdf(theta, a, b).exp())
                    .sum()
            }
            AnalyticOracle::Numeric(n) => {
                if theta < n.lo || theta > n.hi {
                    0.0
                } else {
                    (n.unnormalized)(theta) / n.norm
                }
            }
        }
    }

    pub fn cdf(&self, theta: f64) -> f64 {
        match self {
            AnalyticOracle::Normal { mean, variance } => {
                normal_cdf((theta - mean) / variance.sqrt())
            }
            AnalyticOracle::BetaMixture { components } => {
                let x = theta.clamp(0.0, 1.0);
                components
                    .iter()
                    .map(|&(w, a, b)| w * beta_reg(a, b, x))
                    .sum::<f64>()
                    .clamp(0.0, 1.0)
            }
            AnalyticOracle::Numeric(n) => {
                if theta <= n.lo {
                    return 0.0;
                }
                if theta >= n.hi {
                    return 1.0;
                }
                let f = &n.unnormalized;
                let mass = quadrature::integrate_with_breaks(
                    |x| f(x),
                    n.lo,
                    theta,
                    &n.breaks,
                    ORACLE_TOL * 1e-3 * n.norm,
                );
                (mass / n.norm).clamp(0.0, 1.0)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            AnalyticOracle::Normal { mean, .. } => *mean,
            AnalyticOracle::BetaMixture { components } => {
                components.iter().map(|&(w, a, b)| w * a / (a + b)).sum()
            }
            AnalyticOracle::Numeric(n) => n.mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            AnalyticOracle::Normal { variance, .. } => *variance,
            AnalyticOracle::BetaMixture { components } => {
                let mean = self.mean();
                let second: f64 = components
                    .iter()
                    .map(|&(w, a, b)| w * a * (a + 1.0) / ((a + b) * (a + b + 1.0)))
                    .sum();
                second - mean * mean
            }
            AnalyticOracle::Numeric(n) => n.variance,
        }
    }
}

impl std::fmt::Debug for AnalyticOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnalyticOracle::Normal { mean, variance } => write!(f, "Normal({mean}, {variance})"),
            AnalyticOracle::BetaMixture { components } => write!(f, "BetaMixture({components:?})"),
            AnalyticOracle::Numeric(n) => {
                write!(f, "Numeric(mean {}, variance {})", n.mean, n.variance)
            }
        }
    }
}

/// Normalised smoothed marginal posterior density `π_M(θ|t_y)` at `θ`.
pub fn oracle_density(
    model: &dyn Model,
    theta: &[f64],
    t_y: &[f64],
    kernel: &SmoothingKernel,
) -> Result<f64> {
    let oracle = model.oracle(t_y, kernel)?;
    Ok(oracle.density(theta[0]))
}

/// `θ ~ N(μ0, σ0²)`, one summary `t | θ ~ N(θ, τ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMean {
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub tau: f64,
}

impl Default for NormalMean {
    fn default() -> Self {
        Self {
            prior_mean: 0.0,
            prior_sd: 1.0,
            tau: 1.0,
        }
    }
}

impl NormalMean {
    pub fn new(prior_mean: f64, prior_sd: f64, tau: f64) -> Result<Self> {
        if !(prior_sd > 0.0
            && tau > 0.0
            && prior_mean.is_finite()
            && prior_sd.is_finite()
            && tau.is_finite())
        {
            return Err(LfsError::config(
                "normal-mean needs finite prior_mean and positive prior_sd, tau",
            ));
        }
        Ok(Self {
            prior_mean,
            prior_sd,
            tau,
        })
    }

    /// `∫ K_h(t_y - t) N(t; θ, τ²) dt` in closed form.
    fn smoothed_likelihood(kind: KernelKind, h: f64, tau: f64, t_y: f64, theta: f64) -> f64 {
        match kind {
            KernelKind::Gaussian => {
                let sd = (tau * tau + h * h).sqrt();
                normal_pdf((t_y - theta) / sd) / sd
            }
            KernelKind::Uniform => {
                let hi = (t_y + h - theta) / tau;
                let lo = (t_y - h - theta) / tau;
                (normal_cdf(hi) - normal_cdf(lo)) / (2.0 * h)
            }
            KernelKind::Epanechnikov => {
                let alpha = (t_y - h - theta) / tau;
                let beta = (t_y + h - theta) / tau;
                let m0 = normal_cdf(beta) - normal_cdf(alpha);
                let m1 = normal_pdf(alpha) - normal_pdf(beta);
                let m2 = m0 + alpha * normal_pdf(alpha) - beta * normal_pdf(beta);
                // t - t_y = c + τ z with z standard normal
                let c = theta - t_y;
                let sq = c * c * m0 + 2.0 * c * tau * m1 + tau * tau * m2;
                (0.75 / h * (m0 - sq / (h * h))).max(0.0)
            }
        }
    }
}

impl Model for NormalMean {
    fn name(&self) -> &str {
        "normal-mean"
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn summary_dim(&self) -> usize {
        1
    }

    fn prior_sample(&self, rng: &mut Stream) -> ParamVector {
        let z: f64 = rng.sample(StandardNormal);
        ParamVector::new(vec![self.prior_mean + self.prior_sd * z])
    }

    fn prior_logdensity(&self, theta: &[f64]) -> f64 {
        let z = (theta[0] - self.prior_mean) / self.prior_sd;
        -0.5 * z * z - self.prior_sd.ln() - 0.5 * (2.0 * PI).ln()
    }

    fn prior_scale(&self) -> Vec<f64> {
        vec![self.prior_sd]
    }

    fn simulate_one(&self, theta: &[f64], rng: &mut Stream, out: &mut [f64]) {
        let z: f64 = rng.sample(StandardNormal);
        out[0] = theta[0] + self.tau * z;
    }

    fn oracle(&self, t_y: &[f64], kernel: &SmoothingKernel) -> Result<AnalyticOracle> {
        let h = kernel.bandwidth() / kernel.distance().scale_1d();
        let ty = t_y[0];
        match kernel.kind() {
            KernelKind::Gaussian => {
                let lik_var = self.tau * self.tau + h * h;
                let prior_var = self.prior_sd * self.prior_sd;
                let variance = 1.0 / (1.0 / prior_var + 1.0 / lik_var);
                let mean = variance * (self.prior_mean / prior_var + ty / lik_var);
                Ok(AnalyticOracle::Normal { mean, variance })
            }
            kind => {
                let (m, sd, tau) = (self.prior_mean, self.prior_sd, self.tau);
                let f = move |theta: f64| {
                    normal_pdf((theta - m) / sd) / sd
                        * Self::smoothed_likelihood(kind, h, tau, ty, theta)
                };
                let lo = m.min(ty) - 12.0 * sd.max(tau + h);
                let hi = m.max(ty) + 12.0 * sd.max(tau + h);
                Ok(AnalyticOracle::Numeric(NumericOracle::new(
                    Arc::new(f),
                    lo,
                    hi,
                    vec![ty - h, ty, ty + h],
                )))
            }
        }
    }
}

/// `θ ~ Uniform(0, 1)`, summary = number of successes in `m` Bernoulli(θ) trials.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliCount {
    pub trials: u64,
}

impl Default for BernoulliCount {
    fn default() -> Self {
        Self { trials: 20 }
    }
}

impl BernoulliCount {
    pub fn new(trials: u64) -> Result<Self> {
        if trials == 0 {
            return Err(LfsError::config("bernoulli-count needs at least one trial"));
        }
        Ok(Self { trials })
    }
}

impl Model for BernoulliCount {
    fn name(&self) -> &str {
        "bernoulli-count"
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn summary_dim(&self) -> usize {
        1
    }

    fn prior_sample(&self, rng: &mut Stream) -> ParamVector {
        ParamVector::new(vec![rng.random::<f64>()])
    }

    fn prior_logdensity(&self, theta: &[f64]) -> f64 {
        if (0.0..=1.0).contains(&theta[0]) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn prior_scale(&self) -> Vec<f64> {
        vec![(1.0f64 / 12.0).sqrt()]
    }

    fn simulate_one(&self, theta: &[f64], rng: &mut Stream, out: &mut [f64]) {
        let successes = Binomial::new(self.trials, theta[0])
            .expect("θ checked against support")
            .sample(rng);
        out[0] = successes as f64;
    }

    /// With a uniform prior, `Σ_t K_h(t_y - t) C(m,t) θ^t (1-θ)^{m-t}` is a
    /// mixture of `Beta(t+1, m-t+1)` densities weighted by `K_h(t_y - t)`,
    /// because every binomial term integrates to `1/(m+1)`.
    fn oracle(&self, t_y: &[f64], kernel: &SmoothingKernel) -> Result<AnalyticOracle> {
        let m = self.trials as f64;
        let raw: Vec<(f64, f64, f64)> = (0..=self.trials)
            .map(|t| {
                let t = t as f64;
                (kernel.evaluate_pair(t_y, &[t]), t + 1.0, m - t + 1.0)
            })
            .filter(|c| c.0 > 0.0)
            .collect();
        let total: f64 = raw.iter().map(|c| c.0).sum();
        if raw.is_empty() || total <= 0.0 {
            return Err(LfsError::config(
                "kernel gives zero weight to every attainable count",
            ));
        }
        Ok(AnalyticOracle::BetaMixture {
            components: raw.into_iter().map(|(w, a, b)| (w / total, a, b)).collect(),
        })
    }
}

/// Wraps a model and counts every `simulate_one` call.
pub struct CountingModel<M> {
    inner: M,
    calls: AtomicU64,
}

impl<M: Model> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) -> u64 {
        self.calls.swap(0, Ordering::SeqCst)
    }
}

impl<M: Model> Model for CountingModel<M> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    fn summary_dim(&self) -> usize {
        self.inner.summary_dim()
    }

    fn prior_sample(&self, rng: &mut Stream) -> ParamVector {
        self.inner.prior_sample(rng)
    }

    fn prior_logdensity(&self, theta: &[f64]) -> f64 {
        self.inner.prior_logdensity(theta)
    }

    fn prior_scale(&self) -> Vec<f64> {
        self.inner.prior_scale()
    }

    fn simulate_one(&self, theta: &[f64], rng: &mut Stream, out: &mut [f64]) {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.simulate_one(theta, rng, out)
    }

    fn oracle(&self, t_y: &[f64], kernel: &SmoothingKernel) -> Result<AnalyticOracle> {
        self.inner.oracle(t_y, kernel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedStreams, StreamTag};

    fn stream(seed: u64) -> Stream {
        SeedStreams::new(seed).stream(StreamTag::Test, 0, 0)
    }

    #[test]
    fn normal_prior_draws() {
        let model = NormalMean::default();
        let mut rng = stream(1);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| model.prior_sample(&mut rng)[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert_eq!(
            model.prior_sample(&mut stream(42)),
            model.prior_sample(&mut stream(42))
        );
    }

    #[test]
    fn bernoulli_prior_support() {
        let model = BernoulliCount::default();
        let mut rng = stream(2);
        assert!((0..10_000).all(|_| (0.0..=1.0).contains(&model.prior_sample(&mut rng)[0])));
        assert_eq!(model.prior_logdensity(&[1.5]), f64::NEG_INFINITY);
        assert_eq!(model.prior_logdensity(&[0.3]), 0.0);
    }

    #[test]
    fn normal_prior_logdensity_at_zero() {
        let v = NormalMean::default().prior_logdensity(&[0.0]);
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn normal_simulator_variance() {
        let model = NormalMean::default();
        let b = model.simulate(&[0.0], 100_000, &mut stream(3)).unwrap();
        let n = b.len() as f64;
        let mean = b.iter().map(|t| t[0]).sum::<f64>() / n;
        let var = b.iter().map(|t| (t[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn bundle_shapes_and_support() {
        let normal = NormalMean::default();
        assert_eq!(normal.simulate(&[0.4], 1, &mut stream(4)).unwrap().len(), 1);
        let bern = BernoulliCount::default();
        let b = bern.simulate(&[0.5], 1000, &mut stream(5)).unwrap();
        assert!(b
            .iter()
            .all(|t| t[0] >= 0.0 && t[0] <= 20.0 && t[0].fract() == 0.0));
        assert!(matches!(
            bern.simulate(&[1.2], 3, &mut stream(6)),
            Err(LfsError::Domain { .. })
        ));
        assert!(normal.simulate(&[0.0], 0, &mut stream(6)).is_err());
    }

    #[test]
    fn bundle_construction_errors() {
        assert!(AuxiliaryBundle::from_flat(1, vec![]).is_err());
        assert!(AuxiliaryBundle::from_flat(2, vec![1.0, 2.0, 3.0]).is_err());
        let mixed = [
            SummaryVector::new(vec![1.0]),
            SummaryVector::new(vec![1.0, 2.0]),
        ];
        assert!(AuxiliaryBundle::from_summaries(&mixed).is_err());
    }

    #[test]
    fn lag_one_correlation_within_bundle() {
        let s = 40_000;
        let b = NormalMean::default()
            .simulate(&[0.7], s, &mut stream(7))
            .unwrap();
        let x: Vec<f64> = b.iter().map(|t| t[0]).collect();
        let mean = x.iter().sum::<f64>() / s as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let cov: f64 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        assert!((cov / var).abs() < 4.0 / (s as f64).sqrt());
    }

    #[test]
    fn gaussian_oracle_closed_form() {
        let model = NormalMean::default();
        let k = SmoothingKernel::new(KernelKind::Gaussian, 1.0).unwrap();
        let d = oracle_density(&model, &[0.0], &[0.0], &k).unwrap();
        assert!((d - 0.488_602_511_902_919_9).abs() < 1e-12);
        let wide = model
            .oracle(
                &[0.0],
                &SmoothingKernel::new(KernelKind::Gaussian, 100.0).unwrap(),
            )
            .unwrap();
        assert!((wide.variance() - 1.0).abs() < 1e-3);
    }

    /// Direct quadrature of `π(θ) ∫ K_h(t_y - t) f(t|θ) dt` as a check on the
    /// closed-form smoothed likelihoods.
    fn brute_force_posterior(kind: KernelKind, h: f64, ty: f64, theta: f64) -> f64 {
        let k = SmoothingKernel::new(kind, h).unwrap();
        let inner = quadrature::integrate_with_breaks(
            |t| k.evaluate_pair(&[ty], &[t]) * normal_pdf(t - theta),
            theta - 12.0,
            theta + 12.0,
            &[ty - h, ty + h],
            1e-13,
        );
        normal_pdf(theta) * inner
    }

    #[test]
    fn oracles_match_brute_force_quadrature() {
        let model = NormalMean::default();
        let ty = 0.4;
        for kind in [
            KernelKind::Uniform,
            KernelKind::Epanechnikov,
            KernelKind::Gaussian,
        ] {
            for h in [0.3, 1.0, 2.5] {
                let k = SmoothingKernel::new(kind, h).unwrap();
                let oracle = model.oracle(&[ty], &k).unwrap();
                let z = quadrature::integrate(
                    |x| brute_force_posterior(kind, h, ty, x),
                    -12.0,
                    12.0,
                    1e-11,
                );
                for theta in [-1.5, 0.0, 0.4, 2.0] {
                    let expected = brute_force_posterior(kind, h, ty, theta) / z;
                    let got = oracle.density(theta);
                    assert!(
                        (got - expected).abs() < 1e-8,
                        "{kind} h={h} θ={theta}: {got} vs {expected}"
                    );
                }
            }
        }
    }

    #[test]
    fn oracle_normalisation_and_cdf() {
        let model = NormalMean::default();
        for kind in [
            KernelKind::Uniform,
            KernelKind::Epanechnikov,
            KernelKind::Gaussian,
        ] {
            let oracle = model
                .oracle(&[0.0], &SmoothingKernel::new(kind, 0.8).unwrap())
                .unwrap();
            let mass = quadrature::integrate(|x| oracle.density(x), -10.0, 10.0, 1e-12);
            assert!((mass - 1.0).abs() < 1e-6, "{kind}: {mass}");
            let mut prev = 0.0;
            for i in -60..=60 {
                let c = oracle.cdf(i as f64 * 0.1);
                assert!(c >= prev - 1e-12);
                prev = c;
            }
            assert!(oracle.cdf(-20.0) < 1e-12 && oracle.cdf(20.0) > 1.0 - 1e-12);
        }
    }

    #[test]
    fn bernoulli_exact_match_is_beta() {
        let model = BernoulliCount::default();
        let k = SmoothingKernel::new(KernelKind::Uniform, 0.5).unwrap();
        let oracle = model.oracle(&[7.0], &k).unwrap();
        // Summation oracle: Σ_t K(t_y - t) Binom(t; m, θ), normalised over θ.
        let unnorm = |theta: f64| -> f64 {
            (0..=20u64)
                .map(|t| {
                    let lc = statrs::function::factorial::ln_binomial(20, t);
                    k.evaluate_pair(&[7.0], &[t as f64])
                        * (lc + t as f64 * theta.ln() + (20 - t) as f64 * (1.0 - theta).ln()).exp()
                })
                .sum()
        };
        let z = quadrature::integrate(unnorm, 0.0, 1.0, 1e-13);
        for theta in [0.1, 0.35, 0.6] {
            let beta = beta_logpdf(theta, 8.0, 14.0).exp();
            assert!((oracle.density(theta) - beta).abs() < 1e-10);
            assert!((unnorm(theta) / z - beta).abs() < 1e-7);
        }
        assert!((oracle.mean() - 8.0 / 22.0).abs() < 1e-12);
    }

    #[test]
    fn missing_oracle_is_a_capability_error() {
        struct NoOracle;
        impl Model for NoOracle {
            fn name(&self) -> &str {
                "no-oracle"
            }
            fn param_dim(&self) -> usize {
                1
            }
            fn summary_dim(&self) -> usize {
                1
            }
            fn prior_sample(&self, _: &mut Stream) -> ParamVector {
                ParamVector::new(vec![0.0])
            }
            fn prior_logdensity(&self, _: &[f64]) -> f64 {
                0.0
            }
            fn prior_scale(&self) -> Vec<f64> {
                vec![1.0]
            }
            fn simulate_one(&self, theta: &[f64], _: &mut Stream, out: &mut [f64]) {
                out[0] = theta[0];
            }
        }
        let k = SmoothingKernel::new(KernelKind::Gaussian, 1.0).unwrap();
        assert!(matches!(
            oracle_density(&NoOracle, &[0.0], &[0.0], &k),
            Err(LfsError::Capability { .. })
        ));
    }

    #[test]
    fn counting_model_counts_single_simulations() {
        let model = CountingModel::new(NormalMean::default());
        let mut rng = stream(8);
        model.simulate(&[0.0], 7, &mut rng).unwrap();
        model.simulate(&[0.0], 3, &mut rng).unwrap();
        assert_eq!(model.calls(), 10);
        assert_eq!(model.reset(), 10);
        assert_eq!(model.calls(), 0);
    }
}
