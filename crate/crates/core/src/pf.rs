//! Bootstrap particle filter primitives.
//!
//! States are stored row-major in one flat buffer (`N * dim`), weights in
//! the log domain. The operations here are shared by the model-averaging
//! filter and every baseline.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{FusionError, Result};
use crate::ssm::{StateVector, TransitionModel};

/// Snap tolerance when splitting `N * w_i` into integer and residual parts.
const COUNT_SNAP: f64 = 1e-9;

/// `ln sum exp(x_i)`, stable for large magnitudes. Empty input gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Weighted sample approximation of a posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    dim: usize,
    states: Vec<f64>,
    log_weights: Vec<f64>,
}

impl ParticleSet {
    /// Equally weighted set from a flat row-major state buffer.
    pub fn uniform(dim: usize, states: Vec<f64>) -> Result<Self> {
        if dim == 0 || states.is_empty() {
            return Err(FusionError::EmptyParticleSet);
        }
        if !states.len().is_multiple_of(dim) {
            return Err(FusionError::DimensionMismatch {
                expected: dim,
                actual: states.len() % dim,
            });
        }
        let n = states.len() / dim;
        Ok(Self {
            dim,
            states,
            log_weights: vec![-(n as f64).ln(); n],
        })
    }

    /// Set with explicit log-weights, normalised on construction.
    pub fn with_log_weights(dim: usize, states: Vec<f64>, log_weights: Vec<f64>) -> Result<Self> {
        let mut set = Self::uniform(dim, states)?;
        if log_weights.len() != set.len() {
            return Err(FusionError::LengthMismatch {
                left: set.len(),
                right: log_weights.len(),
            });
        }
        let total = log_sum_exp(&log_weights);
        if !total.is_finite() {
            return Err(FusionError::WeightCollapse);
        }
        set.log_weights = log_weights.iter().map(|lw| lw - total).collect();
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Normalised linear weights.
    pub fn weights(&self) -> Vec<f64> {
        normalized_weights(&self.log_weights)
    }

    /// True when every log-weight is identical (e.g. straight after resampling).
    pub fn is_uniform(&self) -> bool {
        let first = self.log_weights[0];
        self.log_weights.iter().all(|&w| w == first)
    }

    pub(crate) fn propagate_in_place(&mut self, tm: &dyn TransitionModel, rng: &mut dyn RngCore) {
        let d = self.dim;
        let mut prev = vec![0.0; d];
        for row in self.states.chunks_exact_mut(d) {
            prev.copy_from_slice(row);
            tm.sample_into(&prev, row, rng);
        }
    }

    /// Resamples with the given normalised linear weights; output is uniform.
    pub(crate) fn resample_in_place(&mut self, weights: &[f64], rng: &mut dyn RngCore) {
        let counts = residual_counts(weights, rng);
        self.states = replicate(&self.states, self.dim, &counts);
        let n = self.len();
        self.log_weights.fill(-(n as f64).ln());
    }
}

fn normalized_weights(log_weights: &[f64]) -> Vec<f64> {
    let total = log_sum_exp(log_weights);
    log_weights.iter().map(|lw| (lw - total).exp()).collect()
}

/// Sampler for the initial state distribution.
pub trait PriorSampler: Send + Sync {
    fn dim(&self) -> usize;
    fn sample_into(&self, out: &mut [f64], rng: &mut dyn RngCore);
}

/// Gaussian prior with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub std_dev: Vec<f64>,
}

impl GaussianPrior {
    pub fn from_variances(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(FusionError::DimensionMismatch {
                expected: mean.len(),
                actual: variances.len(),
            });
        }
        if variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(FusionError::InvalidModel("prior variances must be non-negative".into()));
        }
        Ok(Self {
            mean,
            std_dev: variances.iter().map(|v| v.sqrt()).collect(),
        })
    }
}

impl PriorSampler for GaussianPrior {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample_into(&self, out: &mut [f64], rng: &mut dyn RngCore) {
        for ((o, m), s) in out.iter_mut().zip(&self.mean).zip(&self.std_dev) {
            let z: f64 = rng.sample(StandardNormal);
            *o = m + s * z;
        }
    }
}

/// Point mass at a fixed state.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass(pub Vec<f64>);

impl PriorSampler for PointMass {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn sample_into(&self, out: &mut [f64], _rng: &mut dyn RngCore) {
        out.copy_from_slice(&self.0);
    }
}

/// Draws `n` equally weighted particles from `prior`.
pub fn init_particles(prior: &dyn PriorSampler, n: usize, rng: &mut dyn RngCore) -> Result<ParticleSet> {
    if n == 0 {
        return Err(FusionError::EmptyParticleSet);
    }
    let d = prior.dim();
    let mut states = vec![0.0; n * d];
    for row in states.chunks_exact_mut(d) {
        prior.sample_into(row, rng);
    }
    ParticleSet::uniform(d, states)
}

/// Advances every particle through the transition prior; weights are untouched.
pub fn propagate(p: &ParticleSet, tm: &dyn TransitionModel, rng: &mut dyn RngCore) -> Result<ParticleSet> {
    if tm.dim() != p.dim() {
        return Err(FusionError::DimensionMismatch {
            expected: tm.dim(),
            actual: p.dim(),
        });
    }
    let mut out = p.clone();
    out.propagate_in_place(tm, rng);
    Ok(out)
}

/// Multiplies each weight by `exp(loglik_at(x_i))` and renormalises.
pub fn reweight(p: &ParticleSet, loglik_at: impl Fn(&[f64]) -> f64) -> Result<ParticleSet> {
    let mut log_weights: Vec<f64> = (0..p.len())
        .map(|i| p.log_weights[i] + loglik_at(p.state(i)))
        .collect();
    let total = log_sum_exp(&log_weights);
    if !total.is_finite() {
        return Err(FusionError::WeightCollapse);
    }
    for lw in &mut log_weights {
        *lw -= total;
    }
    Ok(ParticleSet {
        dim: p.dim,
        states: p.states.clone(),
        log_weights,
    })
}

/// Residual resampling: particle `i` is copied `floor(N w_i)` times, the
/// remaining slots are filled by multinomial draws over the residuals.
/// Returns the copy count of each particle.
pub fn residual_counts(weights: &[f64], rng: &mut dyn RngCore) -> Vec<usize> {
    let n = weights.len();
    let nf = n as f64;
    let mut counts = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut assigned = 0usize;
    for &w in weights {
        let scaled = w * nf;
        let whole = (scaled + COUNT_SNAP).floor();
        counts.push(whole as usize);
        residuals.push((scaled - whole).max(0.0));
        assigned += whole as usize;
    }
    // Rounding can only overshoot by a slot or two; take them back from the top.
    while assigned > n {
        let (imax, _) = counts.iter().enumerate().max_by_key(|(_, c)| **c).expect("n > 0");
        counts[imax] -= 1;
        assigned -= 1;
    }
    let remaining = n - assigned;
    if remaining == 0 {
        return counts;
    }
    let mut cumulative = residuals;
    let mut acc = 0.0;
    for c in cumulative.iter_mut() {
        acc += *c;
        *c = acc;
    }
    if acc <= 0.0 {
        // No residual mass left (only possible through rounding); fall back to the weights.
        let mut acc = 0.0;
        for (c, &w) in cumulative.iter_mut().zip(weights) {
            acc += w;
            *c = acc;
        }
    }
    let total = *cumulative.last().expect("n > 0");
    for _ in 0..remaining {
        let u: f64 = rng.random::<f64>() * total;
        let idx = cumulative.partition_point(|&c| c <= u).min(n - 1);
        counts[idx] += 1;
    }
    counts
}

fn replicate(states: &[f64], dim: usize, counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    let mut out = Vec::with_capacity(total * dim);
    for (i, &c) in counts.iter().enumerate() {
        let row = &states[i * dim..(i + 1) * dim];
        for _ in 0..c {
            out.extend_from_slice(row);
        }
    }
    out
}

/// Residual resampling to an equally weighted set of the same size.
pub fn residual_resample(p: &ParticleSet, rng: &mut dyn RngCore) -> ParticleSet {
    let mut out = p.clone();
    out.resample_in_place(&p.weights(), rng);
    out
}

/// `sum_i w_i x_i` over a flat state buffer.
pub fn weighted_mean(states: &[f64], dim: usize, weights: &[f64]) -> StateVector {
    let mut mean = vec![0.0; dim];
    for (row, &w) in states.chunks_exact(dim).zip(weights) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += w * x;
        }
    }
    StateVector::from_raw(mean)
}

/// Posterior-mean point estimate.
pub fn estimate_mean(p: &ParticleSet) -> StateVector {
    weighted_mean(&p.states, p.dim, &p.weights())
}
