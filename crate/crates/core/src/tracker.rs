//! Common stepping interface for all filters.

use crate::error::Result;
use crate::ssm::{ObservationFrame, StateVector};

/// Result of processing one observation frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub estimate: StateVector,
    /// Candidate probabilities (DMA) or failure probabilities (TS).
    pub weights: Option<Vec<f64>>,
    /// A weight collapse or degenerate model update happened in this step.
    pub degenerate: bool,
}

/// A sequential state estimator driven one frame at a time.
pub trait Tracker {
    fn step(&mut self, frame: &ObservationFrame) -> Result<StepOutput>;
}

impl<T: Tracker + ?Sized> Tracker for Box<T> {
    fn step(&mut self, frame: &ObservationFrame) -> Result<StepOutput> {
        (**self).step(frame)
    }
}
