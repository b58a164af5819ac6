//! TOML configuration of the model, the simulation and custom scenarios.
//!
//! Every key is optional; omitted keys take the built-in defaults.
//!
//! ```toml
//! [model]
//! transition_matrix = [[1, 0, 0, 0], [0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 1]]
//! process_noise     = [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 10, 0], [0, 0, 0, 10]]
//! sigma_angle = 0.1
//! sigma_range = 1.0
//! range_max   = 20000.0        # range value space [0, range_max]
//!
//! [simulation]
//! initial_state   = [1, 1, 200, 200]
//! prior_variances = [1, 1, 10, 10]
//! bias            = [0, 0, 0, 500]   # added to the prior mean when biased
//! failure_smoothing = 0.5            # TS smoothing of failure probabilities
//! failure = "uniform"                # or { offset = { offsets = [0.5, 50.0] } }
//!
//! [[scenarios]]                      # overrides built-in scenario `id`
//! id = 5
//! horizon = 100
//! failure_windows = [{ modalities = [1], start = 40, end = 60, probability = 1.0 }]
//! loss_windows = [{ modality = 0, start = 70, end = 80 }]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::DEFAULT_FAILURE_SMOOTHING;
use crate::error::{FusionError, Result};
use crate::ssm::{ModelParams, StateSpaceModel, StateVector};
use crate::tracksim::{builtin_scenario, FailureMode, ScenarioSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationParams {
    pub initial_state: Vec<f64>,
    pub prior_variances: Vec<f64>,
    pub bias: Vec<f64>,
    pub failure_smoothing: f64,
    pub failure: FailureMode,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            initial_state: vec![1.0, 1.0, 200.0, 200.0],
            prior_variances: vec![1.0, 1.0, 10.0, 10.0],
            bias: vec![0.0, 0.0, 0.0, 500.0],
            failure_smoothing: DEFAULT_FAILURE_SMOOTHING,
            failure: FailureMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelParams,
    pub simulation: SimulationParams,
    pub scenarios: Vec<ScenarioSpec>,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| FusionError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FusionError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.state_space_model()?;
        let d = model.state_dim();
        let sim = &self.simulation;
        for (name, v) in [
            ("initial_state", &sim.initial_state),
            ("prior_variances", &sim.prior_variances),
            ("bias", &sim.bias),
        ] {
            if v.len() != d {
                return Err(FusionError::Config(format!("{name} has {} entries, state has {d}", v.len())));
            }
        }
        StateVector::new(sim.initial_state.clone())?;
        if !(0.0..=1.0).contains(&sim.failure_smoothing) {
            return Err(FusionError::Config("failure_smoothing must lie in [0, 1]".into()));
        }
        for s in &self.scenarios {
            s.validate(model.modality_count())?;
        }
        Ok(())
    }

    pub fn state_space_model(&self) -> Result<StateSpaceModel> {
        StateSpaceModel::tracking_2d(&self.model)
    }

    pub fn initial_state(&self) -> Result<StateVector> {
        StateVector::new(self.simulation.initial_state.clone())
    }

    /// Scenario `id` from this config, else the built-in one.
    pub fn scenario(&self, id: u32) -> Result<ScenarioSpec> {
        match self.scenarios.iter().find(|s| s.id == id) {
            Some(s) => Ok(s.clone()),
            None => builtin_scenario(id),
        }
    }
}
