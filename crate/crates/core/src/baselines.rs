//! Comparison filters: the plain joint-likelihood particle filter (PF),
//! static model averaging over single-modality filters (SMA) and the
//! two-stage detect-then-fuse filter (TS).

use rand::RngCore;

use crate::dma::{modality_logliks, weigh_candidates, Base, CandidateModelSet, Evidence, UsefulnessVector};
use crate::error::{FusionError, Result};
use crate::pf::{weighted_mean, ParticleSet};
use crate::ssm::{ModalityObservation, ObservationFrame, StateSpaceModel, StateVector};
use crate::tracker::{StepOutput, Tracker};

/// Default exponential smoothing of the TS failure probabilities.
pub const DEFAULT_FAILURE_SMOOTHING: f64 = 0.5;

/// Weigh by the product of all present modality likelihoods, estimate,
/// resample. Returns the estimate and whether the weights collapsed (in
/// which case the incoming, uniform, weights were kept).
fn joint_update(
    particles: &mut ParticleSet,
    evidence: &Evidence,
    null_logliks: &[f64],
    rng: &mut dyn RngCore,
) -> (StateVector, bool) {
    let all_useful = CandidateModelSet::restricted(
        evidence.modality_count(),
        vec![UsefulnessVector::all_useful(evidence.modality_count())],
    )
    .expect("single candidate set is valid");
    let base = Base::of(particles);
    let cw = weigh_candidates(&base, evidence, null_logliks, &all_useful);
    let weights = cw.row(0);
    let estimate = weighted_mean(particles.states(), particles.dim(), weights);
    particles.resample_in_place(weights, rng);
    (estimate, cw.collapsed[0])
}

/// Outcome of one baseline step.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineStep<S> {
    pub state: S,
    pub estimate: StateVector,
    pub collapsed: bool,
}

/// Bootstrap PF step with the joint likelihood of all present modalities.
pub fn pf_step(
    mut particles: ParticleSet,
    frame: &ObservationFrame,
    model: &StateSpaceModel,
    rng: &mut dyn RngCore,
) -> Result<BaselineStep<ParticleSet>> {
    check_dim(&particles, model)?;
    particles.propagate_in_place(model.transition.as_ref(), rng);
    let evidence = Evidence::new(modality_logliks(&particles, frame, model)?);
    let (estimate, collapsed) = joint_update(&mut particles, &evidence, &model.null_log_likelihoods(), rng);
    Ok(BaselineStep {
        state: particles,
        estimate,
        collapsed,
    })
}

fn check_dim(p: &ParticleSet, model: &StateSpaceModel) -> Result<()> {
    if p.dim() != model.state_dim() {
        return Err(FusionError::DimensionMismatch {
            expected: model.state_dim(),
            actual: p.dim(),
        });
    }
    Ok(())
}

/// Independent single-modality particle filters.
#[derive(Debug, Clone, PartialEq)]
pub struct SmaState {
    pub sub_filters: Vec<ParticleSet>,
}

impl SmaState {
    /// Every sub-filter starts from a copy of `initial`.
    pub fn new(initial: &ParticleSet, modalities: usize) -> Self {
        Self {
            sub_filters: vec![initial.clone(); modalities],
        }
    }
}

/// Unweighted mean of the sub-filter estimates, summed in modality order.
pub fn average_estimates(estimates: &[StateVector]) -> StateVector {
    let dim = estimates[0].len();
    let mut mean = vec![0.0; dim];
    for e in estimates {
        for (m, v) in mean.iter_mut().zip(e.as_slice()) {
            *m += v;
        }
    }
    let k = estimates.len() as f64;
    StateVector::from_raw(mean.into_iter().map(|m| m / k).collect())
}

/// Runs each sub-filter on its own modality only, then averages the
/// estimates. `rngs[k]` drives sub-filter `k`.
pub fn sma_step<R: RngCore>(
    state: SmaState,
    frame: &ObservationFrame,
    model: &StateSpaceModel,
    rngs: &mut [R],
) -> Result<(BaselineStep<SmaState>, Vec<bool>)> {
    let n = model.modality_count();
    if state.sub_filters.len() != n || rngs.len() != n || frame.modality_count() != n {
        return Err(FusionError::DimensionMismatch {
            expected: n,
            actual: state.sub_filters.len(),
        });
    }
    let mut sub_filters = Vec::with_capacity(n);
    let mut estimates = Vec::with_capacity(n);
    let mut collapsed = Vec::with_capacity(n);
    for (k, (particles, rng)) in state.sub_filters.into_iter().zip(rngs.iter_mut()).enumerate() {
        let sub_model = model.select_modalities(&[k]);
        let obs = &frame.observations[k];
        let sub_frame = ObservationFrame::new(
            frame.time_index,
            vec![ModalityObservation {
                modality_index: 0,
                value: obs.value.clone(),
            }],
        )?;
        let out = pf_step(particles, &sub_frame, &sub_model, rng)?;
        sub_filters.push(out.state);
        estimates.push(out.estimate);
        collapsed.push(out.collapsed);
    }
    let any_collapsed = collapsed.iter().any(|&c| c);
    Ok((
        BaselineStep {
            state: SmaState { sub_filters },
            estimate: average_estimates(&estimates),
            collapsed: any_collapsed,
        },
        collapsed,
    ))
}

/// Single PF with per-modality failure probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TsState {
    pub particles: ParticleSet,
    pub alpha: Vec<f64>,
}

impl TsState {
    pub fn new(particles: ParticleSet, modalities: usize) -> Self {
        Self {
            particles,
            alpha: vec![0.0; modalities],
        }
    }
}

/// How TS obtains its failure probabilities.
#[derive(Debug, Clone, PartialEq)]
pub enum FailureEstimator {
    /// Two-hypothesis marginal ratio with exponential smoothing `lambda`.
    Marginal { smoothing: f64 },
    /// Fixed probabilities, never updated.
    Pinned(Vec<f64>),
}

impl Default for FailureEstimator {
    fn default() -> Self {
        Self::Marginal {
            smoothing: DEFAULT_FAILURE_SMOOTHING,
        }
    }
}

/// `g0 / (g0 + g)` from logs, without overflow.
fn failure_ratio(log_g: f64, log_g0: f64) -> f64 {
    let d = log_g - log_g0;
    if d.is_nan() {
        return 0.5;
    }
    if d > 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}

/// Smoothed failure probabilities from per-modality log marginals
/// (`None` = modality absent, probability unchanged).
pub fn failure_update(prev_alpha: &[f64], log_g: &[Option<f64>], null_logliks: &[f64], smoothing: f64) -> Vec<f64> {
    prev_alpha
        .iter()
        .zip(log_g)
        .zip(null_logliks)
        .map(|((&prev, g), &g0)| match g {
            Some(g) => {
                let raw = failure_ratio(*g, g0);
                (smoothing * prev + (1.0 - smoothing) * raw).clamp(0.0, 1.0)
            }
            None => prev,
        })
        .collect()
}

/// Updates failure probabilities from the propagated, pre-update particle
/// set: `g_i = sum_j w_j L_i(x_j)`, `alpha_raw = g0 / (g0 + g_i)`,
/// `alpha = lambda * prev + (1 - lambda) * alpha_raw`.
pub fn estimate_failure_prob(
    prev_alpha: &[f64],
    p: &ParticleSet,
    frame: &ObservationFrame,
    model: &StateSpaceModel,
    smoothing: f64,
) -> Result<Vec<f64>> {
    let logliks = modality_logliks(p, frame, model)?;
    let log_g = logliks
        .iter()
        .map(|ll| {
            ll.as_ref()
                .map(|ll| crate::dma::marginal_loglik(p, ll))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(failure_update(prev_alpha, &log_g, &model.null_log_likelihoods(), smoothing))
}

/// TS step: propagate, update `alpha`, weigh by `prod_i L_i^(1 - alpha_i)`,
/// estimate, resample.
pub fn ts_step(
    mut state: TsState,
    frame: &ObservationFrame,
    model: &StateSpaceModel,
    estimator: &FailureEstimator,
    rng: &mut dyn RngCore,
) -> Result<BaselineStep<TsState>> {
    check_dim(&state.particles, model)?;
    let n = model.modality_count();
    state.particles.propagate_in_place(model.transition.as_ref(), rng);
    let evidence = Evidence::new(modality_logliks(&state.particles, frame, model)?);
    let nulls = model.null_log_likelihoods();

    state.alpha = match estimator {
        FailureEstimator::Marginal { smoothing } => {
            let base = Base::of(&state.particles);
            let log_g: Vec<Option<f64>> = (0..n).map(|k| evidence.modality_log_marginal(k, &base)).collect();
            failure_update(&state.alpha, &log_g, &nulls, *smoothing)
        }
        FailureEstimator::Pinned(alpha) => {
            if alpha.len() != n {
                return Err(FusionError::DimensionMismatch {
                    expected: n,
                    actual: alpha.len(),
                });
            }
            alpha.clone()
        }
    };

    let tempered = if state.alpha.iter().all(|&a| a == 0.0) {
        evidence
    } else {
        Evidence::new(
            (0..n)
                .map(|k| {
                    let exponent = 1.0 - state.alpha[k];
                    match evidence.loglik(k) {
                        Some(ll) if exponent > 0.0 => Some(ll.iter().map(|l| exponent * l).collect()),
                        _ => None,
                    }
                })
                .collect(),
        )
    };
    let (estimate, collapsed) = joint_update(&mut state.particles, &tempered, &nulls, rng);
    Ok(BaselineStep {
        state,
        estimate,
        collapsed,
    })
}

/// Plain PF owning its random stream.
pub struct PfFilter<R: RngCore> {
    model: StateSpaceModel,
    particles: Option<ParticleSet>,
    rng: R,
}

impl<R: RngCore> PfFilter<R> {
    pub fn new(model: StateSpaceModel, particles: ParticleSet, rng: R) -> Result<Self> {
        check_dim(&particles, &model)?;
        Ok(Self {
            model,
            particles: Some(particles),
            rng,
        })
    }

    pub fn particles(&self) -> &ParticleSet {
        self.particles.as_ref().expect("restored after every step")
    }
}

impl<R: RngCore> Tracker for PfFilter<R> {
    fn step(&mut self, frame: &ObservationFrame) -> Result<StepOutput> {
        let particles = self.particles.take().expect("restored after every step");
        let backup = particles.clone();
        match pf_step(particles, frame, &self.model, &mut self.rng) {
            Ok(out) => {
                self.particles = Some(out.state);
                Ok(StepOutput {
                    estimate: out.estimate,
                    weights: None,
                    degenerate: out.collapsed,
                })
            }
            Err(e) => {
                self.particles = Some(backup);
                Err(e)
            }
        }
    }
}

/// SMA owning one random stream per sub-filter.
pub struct SmaFilter<R: RngCore> {
    model: StateSpaceModel,
    state: Option<SmaState>,
    rngs: Vec<R>,
}

impl<R: RngCore> SmaFilter<R> {
    pub fn new(model: StateSpaceModel, initial: &ParticleSet, rngs: Vec<R>) -> Result<Self> {
        check_dim(initial, &model)?;
        if rngs.len() != model.modality_count() {
            return Err(FusionError::DimensionMismatch {
                expected: model.modality_count(),
                actual: rngs.len(),
            });
        }
        let state = SmaState::new(initial, model.modality_count());
        Ok(Self {
            model,
            state: Some(state),
            rngs,
        })
    }
}

impl<R: RngCore> Tracker for SmaFilter<R> {
    fn step(&mut self, frame: &ObservationFrame) -> Result<StepOutput> {
        let state = self.state.take().expect("restored after every step");
        let backup = state.clone();
        match sma_step(state, frame, &self.model, &mut self.rngs) {
            Ok((out, _)) => {
                self.state = Some(out.state);
                Ok(StepOutput {
                    estimate: out.estimate,
                    weights: None,
                    degenerate: out.collapsed,
                })
            }
            Err(e) => {
                self.state = Some(backup);
                Err(e)
            }
        }
    }
}

/// TS owning its random stream.
pub struct TsFilter<R: RngCore> {
    model: StateSpaceModel,
    estimator: FailureEstimator,
    state: Option<TsState>,
    rng: R,
}

impl<R: RngCore> TsFilter<R> {
    pub fn new(model: StateSpaceModel, particles: ParticleSet, estimator: FailureEstimator, rng: R) -> Result<Self> {
        check_dim(&particles, &model)?;
        let state = TsState::new(particles, model.modality_count());
        Ok(Self {
            model,
            estimator,
            state: Some(state),
            rng,
        })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.state.as_ref().expect("restored after every step").alpha
    }
}

impl<R: RngCore> Tracker for TsFilter<R> {
    fn step(&mut self, frame: &ObservationFrame) -> Result<StepOutput> {
        let state = self.state.take().expect("restored after every step");
        let backup = state.clone();
        match ts_step(state, frame, &self.model, &self.estimator, &mut self.rng) {
            Ok(out) => {
                let alpha = out.state.alpha.clone();
                self.state = Some(out.state);
                Ok(StepOutput {
                    estimate: out.estimate,
                    weights: Some(alpha),
                    degenerate: out.collapsed,
                })
            }
            Err(e) => {
                self.state = Some(backup);
                Err(e)
            }
        }
    }
}
