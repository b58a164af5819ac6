//! State-space model interfaces and the 2D bearing/range tracking model.
//!
//! A model is one transition prior plus `n` observation modalities. Each
//! modality knows how to score an observation against a state, how to draw
//! one, and the volume of its value space. The volume defines the "null"
//! likelihood `1 / V` used when a modality is hypothesised to be useless.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{FusionError, Result};

/// Index of `d_x` in the demo state `[v_x, v_y, d_x, d_y]`.
pub const POS_X: usize = 2;
/// Index of `d_y` in the demo state.
pub const POS_Y: usize = 3;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Hidden state of the tracked process.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    /// Builds a state, rejecting non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::InvalidModel(
                "state vector contains a non-finite entry".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Unchecked constructor for values produced by finite arithmetic.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<StateVector> for Vec<f64> {
    fn from(s: StateVector) -> Self {
        s.0
    }
}

/// One modality's reading at a time step, or `None` when it was lost.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityObservation {
    pub modality_index: usize,
    pub value: Option<Vec<f64>>,
}

impl ModalityObservation {
    pub fn present(modality_index: usize, value: Vec<f64>) -> Self {
        Self {
            modality_index,
            value: Some(value),
        }
    }

    pub fn absent(modality_index: usize) -> Self {
        Self {
            modality_index,
            value: None,
        }
    }

    pub fn is_absent(&self) -> bool {
        self.value.is_none()
    }
}

/// All modality readings for one time step, ordered by modality index.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    pub time_index: usize,
    pub observations: Vec<ModalityObservation>,
}

impl ObservationFrame {
    pub fn new(time_index: usize, observations: Vec<ModalityObservation>) -> Result<Self> {
        for (i, obs) in observations.iter().enumerate() {
            if obs.modality_index != i {
                return Err(FusionError::InvalidModel(format!(
                    "observation {i} carries modality index {}",
                    obs.modality_index
                )));
            }
        }
        Ok(Self {
            time_index,
            observations,
        })
    }

    pub fn modality_count(&self) -> usize {
        self.observations.len()
    }

    pub fn value(&self, modality: usize) -> Option<&[f64]> {
        self.observations[modality].value.as_deref()
    }
}

/// State-transition prior `p(x_t | x_{t-1})`.
pub trait TransitionModel: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Draws `x_t` given `prev` into `out`. Both slices have length `dim()`.
    fn sample_into(&self, prev: &[f64], out: &mut [f64], rng: &mut dyn RngCore);

    fn sample(&self, prev: &StateVector, rng: &mut dyn RngCore) -> Result<StateVector> {
        if prev.len() != self.dim() {
            return Err(FusionError::DimensionMismatch {
                expected: self.dim(),
                actual: prev.len(),
            });
        }
        let mut out = vec![0.0; self.dim()];
        self.sample_into(prev.as_slice(), &mut out, rng);
        Ok(StateVector::from_raw(out))
    }
}

/// Observation model of a single modality.
pub trait ModalityModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Volume `V` of the value space; the useless-modality density is `1 / V`.
    fn value_space_volume(&self) -> f64;

    /// `ln p(y | x)` for a present observation.
    fn log_likelihood(&self, y: &[f64], x: &[f64]) -> f64;

    /// Draws a normal (working-sensor) observation for state `x`.
    fn sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;

    /// Draws uniformly from the value space.
    fn sample_value_space(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Clamps or wraps a value into the value space.
    fn project(&self, y: &mut [f64]);

    fn null_log_likelihood(&self) -> f64 {
        -self.value_space_volume().ln()
    }
}

/// `x_t = A x_{t-1} + w`, `w ~ N(0, Q)`.
#[derive(Debug, Clone)]
pub struct LinearGaussianTransition {
    dim: usize,
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    a_flat: Vec<f64>,
    root_flat: Vec<f64>,
}

impl LinearGaussianTransition {
    /// `q` must be symmetric positive semi-definite. A Cholesky factor is
    /// used when `q` is definite, a symmetric eigen square root otherwise.
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let dim = a.nrows();
        if a.ncols() != dim || q.nrows() != dim || q.ncols() != dim {
            return Err(FusionError::InvalidModel(format!(
                "transition matrix {}x{} and noise covariance {}x{} must be square and equal",
                a.nrows(),
                a.ncols(),
                q.nrows(),
                q.ncols()
            )));
        }
        if a.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(FusionError::InvalidModel(
                "transition parameters must be finite".into(),
            ));
        }
        let scale = q.amax().max(1.0);
        if (&q - q.transpose()).amax() > 1e-12 * scale {
            return Err(FusionError::InvalidModel(
                "process noise covariance is not symmetric".into(),
            ));
        }
        let root = match q.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                let eig = SymmetricEigen::new(q.clone());
                if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
                    return Err(FusionError::InvalidModel(
                        "process noise covariance is not positive semi-definite".into(),
                    ));
                }
                let sqrt_l = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
                &eig.eigenvectors * sqrt_l
            }
        };
        let row_major = |m: &DMatrix<f64>| {
            let mut v = Vec::with_capacity(dim * dim);
            for r in 0..dim {
                for c in 0..dim {
                    v.push(m[(r, c)]);
                }
            }
            v
        };
        Ok(Self {
            dim,
            a_flat: row_major(&a),
            root_flat: row_major(&root),
            a,
            q,
        })
    }

    /// The constant-velocity model of the tracking experiment.
    pub fn tracking_2d() -> Self {
        Self::new(default_transition_matrix(), default_process_noise())
            .expect("built-in model is valid")
    }

    pub fn transition_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn process_noise(&self) -> &DMatrix<f64> {
        &self.q
    }
}

impl TransitionModel for LinearGaussianTransition {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_into(&self, prev: &[f64], out: &mut [f64], rng: &mut dyn RngCore) {
        let d = self.dim;
        let mut z = [0.0f64; 16];
        let mut z_heap;
        let z: &mut [f64] = if d <= 16 {
            &mut z[..d]
        } else {
            z_heap = vec![0.0; d];
            &mut z_heap
        };
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for (r, o) in out[..d].iter_mut().enumerate() {
            let a_row = &self.a_flat[r * d..(r + 1) * d];
            let l_row = &self.root_flat[r * d..(r + 1) * d];
            let mut acc = 0.0;
            for c in 0..d {
                acc += a_row[c] * prev[c] + l_row[c] * z[c];
            }
            *o = acc;
        }
    }
}

pub fn default_transition_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            1.0, 0.0, 1.0, 0.0, //
            0.0, 1.0, 0.0, 1.0,
        ],
    )
}

pub fn default_process_noise() -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 10.0, 10.0]))
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// `arctan(d_x / d_y)` with the single-argument range `(-pi/2, pi/2)`.
/// `d_y = 0` maps to `sign(d_x) * pi/2` and the origin maps to 0.
pub fn bearing(dx: f64, dy: f64) -> f64 {
    if dy == 0.0 {
        if dx == 0.0 {
            0.0
        } else {
            dx.signum() * PI / 2.0
        }
    } else {
        (dx / dy).atan()
    }
}

fn gaussian_logpdf(residual: f64, sigma: f64) -> f64 {
    let z = residual / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
}

/// Bearing `arctan(d_x / d_y)` with Gaussian noise; value space `(-pi, pi]`.
#[derive(Debug, Clone)]
pub struct AngleModality {
    sigma: f64,
}

impl AngleModality {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(FusionError::InvalidModel(format!(
                "angle noise std {sigma} must be positive"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl ModalityModel for AngleModality {
    fn name(&self) -> &str {
        "angle"
    }

    fn dim(&self) -> usize {
        1
    }

    fn value_space_volume(&self) -> f64 {
        2.0 * PI
    }

    fn log_likelihood(&self, y: &[f64], x: &[f64]) -> f64 {
        let predicted = bearing(x[POS_X], x[POS_Y]);
        gaussian_logpdf(wrap_angle(y[0] - predicted), self.sigma)
    }

    fn sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let noise: f64 = rng.sample(StandardNormal);
        vec![wrap_angle(bearing(x[POS_X], x[POS_Y]) + self.sigma * noise)]
    }

    fn sample_value_space(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        // (-pi, pi]: reflect the half-open [0, 1) draw.
        let u: f64 = rng.random();
        vec![PI - 2.0 * PI * u]
    }

    fn project(&self, y: &mut [f64]) {
        y[0] = wrap_angle(y[0]);
    }
}

/// Range `sqrt(d_x^2 + d_y^2)` with Gaussian noise; value space `[0, range_max]`.
#[derive(Debug, Clone)]
pub struct RangeModality {
    sigma: f64,
    range_max: f64,
}

impl RangeModality {
    pub fn new(sigma: f64, range_max: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(FusionError::InvalidModel(format!(
                "range noise std {sigma} must be positive"
            )));
        }
        if !(range_max.is_finite() && range_max > 0.0) {
            return Err(FusionError::InvalidModel(format!(
                "range_max {range_max} must be positive and finite"
            )));
        }
        Ok(Self { sigma, range_max })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn range_max(&self) -> f64 {
        self.range_max
    }
}

impl ModalityModel for RangeModality {
    fn name(&self) -> &str {
        "range"
    }

    fn dim(&self) -> usize {
        1
    }

    fn value_space_volume(&self) -> f64 {
        self.range_max
    }

    fn log_likelihood(&self, y: &[f64], x: &[f64]) -> f64 {
        let predicted = x[POS_X].hypot(x[POS_Y]);
        gaussian_logpdf(y[0] - predicted, self.sigma)
    }

    fn sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let noise: f64 = rng.sample(StandardNormal);
        let r = x[POS_X].hypot(x[POS_Y]) + self.sigma * noise;
        vec![r.clamp(0.0, self.range_max)]
    }

    fn sample_value_space(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let u: f64 = rng.random();
        vec![self.range_max * u]
    }

    fn project(&self, y: &mut [f64]) {
        y[0] = y[0].clamp(0.0, self.range_max);
    }
}

/// One transition prior and `n` observation modalities.
#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    pub transition: Arc<dyn TransitionModel>,
    pub modalities: Vec<Arc<dyn ModalityModel>>,
}

impl StateSpaceModel {
    pub fn new(
        transition: Arc<dyn TransitionModel>,
        modalities: Vec<Arc<dyn ModalityModel>>,
    ) -> Result<Self> {
        if modalities.is_empty() {
            return Err(FusionError::InvalidModel("at least one modality is required".into()));
        }
        Ok(Self {
            transition,
            modalities,
        })
    }

    /// The bearing/range tracking model from explicit parameters.
    pub fn tracking_2d(params: &ModelParams) -> Result<Self> {
        let a = matrix_from_rows(&params.transition_matrix, "transition_matrix")?;
        let q = matrix_from_rows(&params.process_noise, "process_noise")?;
        let transition = LinearGaussianTransition::new(a, q)?;
        if transition.dim() <= POS_Y {
            return Err(FusionError::InvalidModel(
                "tracking model needs at least 4 state components".into(),
            ));
        }
        Self::new(
            Arc::new(transition),
            vec![
                Arc::new(AngleModality::new(params.sigma_angle)?),
                Arc::new(RangeModality::new(params.sigma_range, params.range_max)?),
            ],
        )
    }

    pub fn state_dim(&self) -> usize {
        self.transition.dim()
    }

    pub fn modality_count(&self) -> usize {
        self.modalities.len()
    }

    /// `-ln V_i` for every modality.
    pub fn null_log_likelihoods(&self) -> Vec<f64> {
        self.modalities.iter().map(|m| m.null_log_likelihood()).collect()
    }

    /// Returns a model with only the listed modalities, in the given order.
    pub fn select_modalities(&self, keep: &[usize]) -> Self {
        Self {
            transition: Arc::clone(&self.transition),
            modalities: keep.iter().map(|&i| Arc::clone(&self.modalities[i])).collect(),
        }
    }
}

impl Default for StateSpaceModel {
    fn default() -> Self {
        Self::tracking_2d(&ModelParams::default()).expect("built-in model is valid")
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(FusionError::InvalidModel(format!("{what} must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

/// Parameters of the tracking model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub transition_matrix: Vec<Vec<f64>>,
    pub process_noise: Vec<Vec<f64>>,
    pub sigma_angle: f64,
    pub sigma_range: f64,
    /// Upper end of the range value space; also the range null-likelihood volume.
    pub range_max: f64,
}

pub const DEFAULT_RANGE_MAX: f64 = 20_000.0;

impl Default for ModelParams {
    fn default() -> Self {
        let rows = |m: DMatrix<f64>| {
            (0..m.nrows())
                .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
                .collect()
        };
        Self {
            transition_matrix: rows(default_transition_matrix()),
            process_noise: rows(default_process_noise()),
            sigma_angle: 0.1,
            sigma_range: 1.0,
            range_max: DEFAULT_RANGE_MAX,
        }
    }
}

/// `ln p(y | x)` for one modality.
///
/// # Panics
///
/// If `y` is absent or the state dimension is wrong; callers branch on
/// presence first.
pub fn modality_loglik(model: &dyn ModalityModel, y: &ModalityObservation, x: &StateVector) -> f64 {
    let value = y
        .value
        .as_deref()
        .expect("modality_loglik called with an absent observation");
    model.log_likelihood(value, x.as_slice())
}

/// `-ln V` for one modality.
pub fn null_loglik(model: &dyn ModalityModel) -> f64 {
    model.null_log_likelihood()
}

pub fn transition_sample(
    model: &dyn TransitionModel,
    x_prev: &StateVector,
    rng: &mut dyn RngCore,
) -> Result<StateVector> {
    model.sample(x_prev, rng)
}
