//! Dynamic model averaging over modality-usefulness hypotheses.
//!
//! Each of the `2^n` candidate models treats a subset of the modalities as
//! useful (scored by their own likelihood) and the rest as useless (scored
//! by the constant `1 / V_i`). One propagation per step is shared by every
//! candidate; candidates differ only in how they reweight the particles.
//! The candidate posterior `pi` is updated from the predictive marginal
//! likelihood of each candidate, and the particles are finally weighted by
//! the `pi`-mixture of the per-candidate weights.

use rand::RngCore;

use crate::error::{FusionError, Result};
use crate::pf::{log_sum_exp, weighted_mean, ParticleSet};
use crate::ssm::{ObservationFrame, StateSpaceModel, StateVector};
use crate::tracker::{StepOutput, Tracker};

/// Largest supported modality count (`M <= 2^16`).
pub const MAX_MODALITIES: usize = 16;

/// Lower bound applied to every candidate probability after an update.
pub const PI_FLOOR: f64 = 1e-6;

/// Below this linear mass a weighting row is recomputed in the log domain.
const MIN_LINEAR_MASS: f64 = 1e-200;

/// Per-modality usefulness bits: `true` = useful.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UsefulnessVector(Vec<bool>);

impl UsefulnessVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn all_useful(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Label such as `"10"` (modality 0 first).
    pub fn label(&self) -> String {
        self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// Ordered candidate hypotheses, all-useful first.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateModelSet {
    modalities: usize,
    candidates: Vec<UsefulnessVector>,
}

impl CandidateModelSet {
    /// Arbitrary non-empty subset of hypotheses (e.g. only the all-useful one).
    pub fn restricted(modalities: usize, candidates: Vec<UsefulnessVector>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(FusionError::InvalidModel("candidate set is empty".into()));
        }
        if let Some(bad) = candidates.iter().find(|c| c.len() != modalities) {
            return Err(FusionError::DimensionMismatch {
                expected: modalities,
                actual: bad.len(),
            });
        }
        for (i, c) in candidates.iter().enumerate() {
            if candidates[..i].contains(c) {
                return Err(FusionError::InvalidModel(format!(
                    "duplicate candidate {}",
                    c.label()
                )));
            }
        }
        Ok(Self {
            modalities,
            candidates,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn modalities(&self) -> usize {
        self.modalities
    }

    pub fn get(&self, m: usize) -> &UsefulnessVector {
        &self.candidates[m]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, UsefulnessVector> {
        self.candidates.iter()
    }

    pub fn labels(&self) -> Vec<String> {
        self.candidates.iter().map(UsefulnessVector::label).collect()
    }

    pub fn index_of(&self, u: &UsefulnessVector) -> Option<usize> {
        self.candidates.iter().position(|c| c == u)
    }
}

/// All `2^n` usefulness vectors. Candidate `m` has bits equal to the binary
/// digits of `2^n - 1 - m`, modality 0 most significant, so `m = 0` is
/// all-useful and `m = 2^n - 1` all-useless.
pub fn enumerate_candidates(n: usize) -> Result<CandidateModelSet> {
    if n == 0 || n > MAX_MODALITIES {
        return Err(FusionError::ModalityCountOutOfRange(n));
    }
    let m_total = 1usize << n;
    let candidates = (0..m_total)
        .map(|m| {
            let code = m_total - 1 - m;
            UsefulnessVector((0..n).map(|i| (code >> (n - 1 - i)) & 1 == 1).collect())
        })
        .collect();
    Ok(CandidateModelSet {
        modalities: n,
        candidates,
    })
}

/// Log-likelihood of one state under one hypothesis. Useful modalities use
/// their own likelihood, useless ones `-ln V_i`, absent ones contribute 0.
pub fn candidate_loglik(
    u: &UsefulnessVector,
    frame: &ObservationFrame,
    x: &StateVector,
    model: &StateSpaceModel,
) -> f64 {
    let mut total = 0.0;
    for (i, (&useful, m)) in u.bits().iter().zip(&model.modalities).enumerate() {
        if let Some(y) = frame.value(i) {
            total += if useful {
                m.log_likelihood(y, x.as_slice())
            } else {
                m.null_log_likelihood()
            };
        }
    }
    total
}

/// `ln sum_i w_i exp(loglik_i)` with the set's (normalised) weights.
pub fn marginal_loglik(p: &ParticleSet, loglik_per_particle: &[f64]) -> Result<f64> {
    if loglik_per_particle.len() != p.len() {
        return Err(FusionError::LengthMismatch {
            left: p.len(),
            right: loglik_per_particle.len(),
        });
    }
    let terms: Vec<f64> = p
        .log_weights()
        .iter()
        .zip(loglik_per_particle)
        .map(|(lw, ll)| lw + ll)
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Posterior probabilities of the candidate models, stored as logs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPosterior {
    log_pi: Vec<f64>,
}

impl ModelPosterior {
    pub fn uniform(m: usize) -> Self {
        Self {
            log_pi: vec![-(m as f64).ln(); m],
        }
    }

    /// From probabilities; they are normalised here.
    pub fn from_probabilities(pi: &[f64]) -> Result<Self> {
        let total: f64 = pi.iter().sum();
        if pi.is_empty() || !(total.is_finite() && total > 0.0) || pi.iter().any(|&p| p < 0.0) {
            return Err(FusionError::InvalidModel("invalid model probabilities".into()));
        }
        Ok(Self {
            log_pi: pi.iter().map(|p| (p / total).ln()).collect(),
        })
    }

    pub fn log_probabilities(&self) -> &[f64] {
        &self.log_pi
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_pi.iter().map(|l| l.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.log_pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_pi.is_empty()
    }
}

/// Result of one posterior update.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub posterior: ModelPosterior,
    /// Every marginal was `-inf`; the posterior was reset to uniform.
    pub degenerate: bool,
}

/// Bayes rule with identity hypothesis prediction, before the floor:
/// `ln pi_m + ln g_m - ln sum_k pi_k g_k`. `None` if every term is `-inf`.
pub fn bayes_update(prev: &ModelPosterior, log_g: &[f64]) -> Option<Vec<f64>> {
    assert_eq!(prev.len(), log_g.len(), "one marginal per candidate");
    let joint: Vec<f64> = prev.log_pi.iter().zip(log_g).map(|(p, g)| p + g).collect();
    let total = log_sum_exp(&joint);
    if !total.is_finite() {
        return None;
    }
    Some(joint.iter().map(|j| j - total).collect())
}

/// Clamps every probability to at least `floor` and renormalises.
pub fn apply_floor(log_pi: &[f64], floor: f64) -> ModelPosterior {
    let clamped: Vec<f64> = log_pi.iter().map(|l| l.exp().max(floor)).collect();
    let total: f64 = clamped.iter().sum();
    ModelPosterior {
        log_pi: clamped.iter().map(|p| (p / total).ln()).collect(),
    }
}

/// Bayes update followed by the floor rule; resets to uniform when degenerate.
pub fn update_model_posterior(prev: &ModelPosterior, log_g: &[f64]) -> ModelUpdate {
    match bayes_update(prev, log_g) {
        Some(log_pi) => ModelUpdate {
            posterior: apply_floor(&log_pi, PI_FLOOR),
            degenerate: false,
        },
        None => ModelUpdate {
            posterior: ModelPosterior::uniform(prev.len()),
            degenerate: true,
        },
    }
}

/// Per-particle log-likelihood of every present modality (`None` if absent).
pub fn modality_logliks(
    particles: &ParticleSet,
    frame: &ObservationFrame,
    model: &StateSpaceModel,
) -> Result<Vec<Option<Vec<f64>>>> {
    if frame.modality_count() != model.modality_count() {
        return Err(FusionError::DimensionMismatch {
            expected: model.modality_count(),
            actual: frame.modality_count(),
        });
    }
    Ok(model
        .modalities
        .iter()
        .enumerate()
        .map(|(k, m)| {
            frame.value(k).map(|y| {
                (0..particles.len())
                    .map(|i| m.log_likelihood(y, particles.state(i)))
                    .collect()
            })
        })
        .collect())
}

#[derive(Debug, Clone)]
struct ModalityEvidence {
    loglik: Vec<f64>,
    shift: f64,
    /// `exp(loglik - shift)`
    scaled: Vec<f64>,
}

/// Per-modality particle likelihoods for one frame, cached in both log and
/// max-shifted linear form so that any product of modalities costs only
/// multiplications.
#[derive(Debug, Clone)]
pub struct Evidence {
    modalities: Vec<Option<ModalityEvidence>>,
}

impl Evidence {
    pub fn new(logliks: Vec<Option<Vec<f64>>>) -> Self {
        let modalities = logliks
            .into_iter()
            .map(|ll| {
                ll.map(|loglik| {
                    let max = loglik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let shift = if max.is_finite() { max } else { 0.0 };
                    let scaled = loglik.iter().map(|l| (l - shift).exp()).collect();
                    ModalityEvidence {
                        loglik,
                        shift,
                        scaled,
                    }
                })
            })
            .collect();
        Self { modalities }
    }

    pub fn modality_count(&self) -> usize {
        self.modalities.len()
    }

    pub fn is_present(&self, k: usize) -> bool {
        self.modalities[k].is_some()
    }

    pub fn loglik(&self, k: usize) -> Option<&[f64]> {
        self.modalities[k].as_ref().map(|e| e.loglik.as_slice())
    }

    /// `ln sum_i base_i L_k(x_i)` for one present modality.
    pub(crate) fn modality_log_marginal(&self, k: usize, base: &Base) -> Option<f64> {
        let ev = self.modalities[k].as_ref()?;
        let z = base.dot(&ev.scaled);
        if z >= MIN_LINEAR_MASS && z.is_finite() {
            Some(z.ln() + ev.shift)
        } else {
            Some(base.log_dot(&ev.loglik))
        }
    }
}

/// Normalised incoming particle weights.
#[derive(Debug, Clone)]
pub(crate) enum Base {
    Uniform(usize),
    Weights(Vec<f64>),
}

impl Base {
    pub(crate) fn of(p: &ParticleSet) -> Self {
        if p.is_uniform() {
            Base::Uniform(p.len())
        } else {
            Base::Weights(p.weights())
        }
    }

    fn len(&self) -> usize {
        match self {
            Base::Uniform(n) => *n,
            Base::Weights(w) => w.len(),
        }
    }

    fn get(&self, i: usize) -> f64 {
        match self {
            Base::Uniform(n) => 1.0 / *n as f64,
            Base::Weights(w) => w[i],
        }
    }

    fn dot(&self, v: &[f64]) -> f64 {
        match self {
            Base::Uniform(n) => v.iter().sum::<f64>() / *n as f64,
            Base::Weights(w) => w.iter().zip(v).map(|(a, b)| a * b).sum(),
        }
    }

    fn log_dot(&self, ll: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..ll.len()).map(|i| self.get(i).ln() + ll[i]).collect();
        log_sum_exp(&terms)
    }

    fn to_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

/// Output of weighting the particles under every candidate.
#[derive(Debug, Clone)]
pub struct CandidateWeights {
    particles: usize,
    /// Row-major `M x N` normalised weights.
    pub weights: Vec<f64>,
    /// `ln g_m`, the predictive marginal likelihood of each candidate.
    pub log_marginals: Vec<f64>,
    /// Candidates whose likelihood underflowed everywhere; their row holds
    /// the incoming weights.
    pub collapsed: Vec<bool>,
}

impl CandidateWeights {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.particles..(m + 1) * self.particles]
    }

    pub fn candidates(&self) -> usize {
        self.log_marginals.len()
    }
}

/// Per-candidate normalised weights and log marginals for one frame.
pub(crate) fn weigh_candidates(
    base: &Base,
    evidence: &Evidence,
    null_logliks: &[f64],
    candidates: &CandidateModelSet,
) -> CandidateWeights {
    let n = base.len();
    let m_total = candidates.len();
    let mut weights = Vec::with_capacity(m_total * n);
    let mut log_marginals = Vec::with_capacity(m_total);
    let mut collapsed = Vec::with_capacity(m_total);
    let mut row = vec![0.0; n];

    for u in candidates.iter() {
        let mut constant = 0.0;
        let mut active: Vec<&ModalityEvidence> = Vec::new();
        for (k, &useful) in u.bits().iter().enumerate() {
            if let Some(ev) = &evidence.modalities[k] {
                if useful {
                    active.push(ev);
                } else {
                    constant += null_logliks[k];
                }
            }
        }

        if active.is_empty() {
            weights.extend(base.to_vec());
            log_marginals.push(constant);
            collapsed.push(false);
            continue;
        }

        for (i, r) in row.iter_mut().enumerate() {
            let mut v = base.get(i);
            for ev in &active {
                v *= ev.scaled[i];
            }
            *r = v;
        }
        let z: f64 = row.iter().sum();
        if z >= MIN_LINEAR_MASS && z.is_finite() {
            let shift: f64 = active.iter().map(|ev| ev.shift).sum();
            weights.extend(row.iter().map(|v| v / z));
            log_marginals.push(z.ln() + shift + constant);
            collapsed.push(false);
            continue;
        }

        // Linear products underflowed: redo this row in the log domain.
        let terms: Vec<f64> = (0..n)
            .map(|i| base.get(i).ln() + active.iter().map(|ev| ev.loglik[i]).sum::<f64>())
            .collect();
        let total = log_sum_exp(&terms);
        if total.is_finite() {
            weights.extend(terms.iter().map(|t| (t - total).exp()));
            log_marginals.push(total + constant);
            collapsed.push(false);
        } else {
            weights.extend(base.to_vec());
            log_marginals.push(f64::NEG_INFINITY);
            collapsed.push(true);
        }
    }

    CandidateWeights {
        particles: n,
        weights,
        log_marginals,
        collapsed,
    }
}

/// `omega_i = sum_m pi_m omega_{m,i}`, accumulated in candidate order.
pub fn mixture_weights(pi: &[f64], per_model: &CandidateWeights) -> Vec<f64> {
    let mut mix = vec![0.0; per_model.particles];
    for (m, &p) in pi.iter().enumerate() {
        for (w, r) in mix.iter_mut().zip(per_model.row(m)) {
            *w += p * r;
        }
    }
    mix
}

/// Filter state carried between steps.
#[derive(Debug, Clone)]
pub struct DmaState {
    pub particles: ParticleSet,
    pub model_posterior: ModelPosterior,
    /// Per-candidate weights of the most recent step (before resampling).
    pub per_model_weights: Option<CandidateWeights>,
    last_time: Option<usize>,
}

impl DmaState {
    pub fn new(particles: ParticleSet, candidates: usize) -> Self {
        Self {
            particles,
            model_posterior: ModelPosterior::uniform(candidates),
            per_model_weights: None,
            last_time: None,
        }
    }
}

/// Diagnostics of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub time_index: usize,
    pub pi: Vec<f64>,
    pub estimate: StateVector,
    pub log_marginals: Vec<f64>,
    /// All marginals underflowed and `pi` was reset to uniform.
    pub degenerate: bool,
    /// Indices of candidates whose weights collapsed.
    pub collapsed: Vec<usize>,
}

/// One DMA recursion: propagate, weigh each candidate, update `pi`, mix,
/// estimate, resample.
pub fn dma_step(
    mut state: DmaState,
    frame: &ObservationFrame,
    model: &StateSpaceModel,
    candidates: &CandidateModelSet,
    rng: &mut dyn RngCore,
) -> Result<(DmaState, StateVector, StepDiagnostics)> {
    if let Some(prev) = state.last_time {
        if frame.time_index != prev + 1 {
            return Err(FusionError::NonConsecutiveFrame {
                prev,
                got: frame.time_index,
            });
        }
    }
    if candidates.modalities() != model.modality_count() {
        return Err(FusionError::DimensionMismatch {
            expected: model.modality_count(),
            actual: candidates.modalities(),
        });
    }
    if state.model_posterior.len() != candidates.len() {
        return Err(FusionError::LengthMismatch {
            left: state.model_posterior.len(),
            right: candidates.len(),
        });
    }

    state.particles.propagate_in_place(model.transition.as_ref(), rng);
    let evidence = Evidence::new(modality_logliks(&state.particles, frame, model)?);
    let base = Base::of(&state.particles);
    let per_model = weigh_candidates(&base, &evidence, &model.null_log_likelihoods(), candidates);

    let update = update_model_posterior(&state.model_posterior, &per_model.log_marginals);
    let pi = update.posterior.probabilities();
    let mix = mixture_weights(&pi, &per_model);
    let estimate = weighted_mean(state.particles.states(), state.particles.dim(), &mix);
    state.particles.resample_in_place(&mix, rng);

    let diagnostics = StepDiagnostics {
        time_index: frame.time_index,
        pi,
        estimate: estimate.clone(),
        log_marginals: per_model.log_marginals.clone(),
        degenerate: update.degenerate,
        collapsed: per_model
            .collapsed
            .iter()
            .enumerate()
            .filter_map(|(m, &c)| c.then_some(m))
            .collect(),
    };
    state.model_posterior = update.posterior;
    state.per_model_weights = Some(per_model);
    state.last_time = Some(frame.time_index);
    Ok((state, estimate, diagnostics))
}

/// DMA filter owning its state, random stream and diagnostics trace.
pub struct DmaFilter<R: RngCore> {
    model: StateSpaceModel,
    candidates: CandidateModelSet,
    state: Option<DmaState>,
    rng: R,
    trace: Vec<StepDiagnostics>,
}

impl<R: RngCore> DmaFilter<R> {
    /// Filter over all `2^n` candidates.
    pub fn new(model: StateSpaceModel, particles: ParticleSet, rng: R) -> Result<Self> {
        let candidates = enumerate_candidates(model.modality_count())?;
        Self::with_candidates(model, candidates, particles, rng)
    }

    pub fn with_candidates(
        model: StateSpaceModel,
        candidates: CandidateModelSet,
        particles: ParticleSet,
        rng: R,
    ) -> Result<Self> {
        if particles.dim() != model.state_dim() {
            return Err(FusionError::DimensionMismatch {
                expected: model.state_dim(),
                actual: particles.dim(),
            });
        }
        let state = DmaState::new(particles, candidates.len());
        Ok(Self {
            model,
            candidates,
            state: Some(state),
            rng,
            trace: Vec::new(),
        })
    }

    pub fn candidates(&self) -> &CandidateModelSet {
        &self.candidates
    }

    pub fn state(&self) -> &DmaState {
        self.state.as_ref().expect("state is always restored after a step")
    }

    pub fn trace(&self) -> &[StepDiagnostics] {
        &self.trace
    }

    pub fn step(&mut self, frame: &ObservationFrame) -> Result<StateVector> {
        let state = self.state.take().expect("state is always restored after a step");
        let backup = state.clone();
        match dma_step(state, frame, &self.model, &self.candidates, &mut self.rng) {
            Ok((next, estimate, diag)) => {
                self.state = Some(next);
                self.trace.push(diag);
                Ok(estimate)
            }
            Err(e) => {
                self.state = Some(backup);
                Err(e)
            }
        }
    }
}

impl<R: RngCore> Tracker for DmaFilter<R> {
    fn step(&mut self, frame: &ObservationFrame) -> Result<StepOutput> {
        let estimate = DmaFilter::step(self, frame)?;
        let diag = self.trace.last().expect("just pushed");
        Ok(StepOutput {
            estimate,
            weights: Some(diag.pi.clone()),
            degenerate: diag.degenerate || !diag.collapsed.is_empty(),
        })
    }
}
