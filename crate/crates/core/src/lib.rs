//! Sequential Monte Carlo tracking with dynamic model averaging over
//! hypotheses about which sensor modalities are currently useful.
//!
//! The crate contains the state-space model ([`ssm`]), the bootstrap particle
//! filter primitives ([`pf`]), the model-averaging filter ([`dma`]), three
//! baselines ([`baselines`]), a tracking simulator with sensor failures
//! ([`tracksim`]) and an experiment harness ([`bench`]).

pub mod baselines;
pub mod bench;
pub mod config;
pub mod dma;
pub mod error;
pub mod pf;
pub mod seed;
pub mod ssm;
pub mod tracker;
pub mod tracksim;

pub use baselines::{PfFilter, SmaFilter, TsFilter};
pub use config::Config;
pub use dma::{dma_step, enumerate_candidates, DmaFilter, DmaState, UsefulnessVector};
pub use error::{FusionError, Result};
pub use pf::ParticleSet;
pub use ssm::{ModalityObservation, ObservationFrame, StateSpaceModel, StateVector};
pub use tracker::{StepOutput, Tracker};
pub use tracksim::{builtin_scenario, generate_run, GroundTruthRun, ScenarioSpec};
