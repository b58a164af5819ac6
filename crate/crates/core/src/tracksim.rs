//! Ground-truth simulator for the 2D tracking experiment: target
//! trajectories, bearing/range observations and scripted sensor failures.

use std::io::{BufRead, Write};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::ssm::{ModalityObservation, ObservationFrame, StateSpaceModel, StateVector, TransitionModel};

/// Horizon of the built-in scenarios.
pub const DEFAULT_HORIZON: usize = 300;

/// Condition of one modality at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityStatus {
    Normal,
    Failed,
    Lost,
}

/// Steps `start..=end` during which the listed modalities fail together
/// with the given per-step probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureWindow {
    pub modalities: Vec<usize>,
    pub start: usize,
    pub end: usize,
    pub probability: f64,
}

/// Steps `start..=end` during which the modality delivers nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWindow {
    pub modality: usize,
    pub start: usize,
    pub end: usize,
}

impl FailureWindow {
    fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }
}

impl LossWindow {
    fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Failure script of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub id: u32,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub failure_windows: Vec<FailureWindow>,
    #[serde(default)]
    pub loss_windows: Vec<LossWindow>,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

impl ScenarioSpec {
    /// Checks window bounds, probabilities and per-modality disjointness.
    pub fn validate(&self, modalities: usize) -> Result<()> {
        let bad = |msg: String| Err(FusionError::InvalidScenario(msg));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        let in_range = |s: usize, e: usize| s >= 1 && s <= e && e <= self.horizon;
        // (modality, start, end) of every window, for the overlap check
        let mut spans = Vec::new();
        for w in &self.failure_windows {
            if !in_range(w.start, w.end) {
                return bad(format!("failure window [{}, {}] outside [1, {}]", w.start, w.end, self.horizon));
            }
            if !(0.0..=1.0).contains(&w.probability) {
                return bad(format!("failure probability {} outside [0, 1]", w.probability));
            }
            if w.modalities.is_empty() {
                return bad("failure window names no modality".into());
            }
            for &m in &w.modalities {
                if m >= modalities {
                    return bad(format!("failure window names modality {m}"));
                }
                spans.push((m, w.start, w.end));
            }
        }
        for w in &self.loss_windows {
            if !in_range(w.start, w.end) {
                return bad(format!("loss window [{}, {}] outside [1, {}]", w.start, w.end, self.horizon));
            }
            if w.modality >= modalities {
                return bad(format!("loss window names modality {}", w.modality));
            }
            spans.push((w.modality, w.start, w.end));
        }
        for (i, a) in spans.iter().enumerate() {
            for b in &spans[i + 1..] {
                if a.0 == b.0 && overlaps((a.1, a.2), (b.1, b.2)) {
                    return bad(format!("windows for modality {} overlap", a.0));
                }
            }
        }
        Ok(())
    }

    /// Draws the status of every modality at step `t`. One uniform is
    /// consumed per failure window active at `t`.
    pub fn draw_status(&self, t: usize, modalities: usize, rng: &mut dyn RngCore) -> Vec<ModalityStatus> {
        let mut status = vec![ModalityStatus::Normal; modalities];
        for w in self.failure_windows.iter().filter(|w| w.contains(t)) {
            let u: f64 = rng.random();
            if u < w.probability {
                for &m in &w.modalities {
                    status[m] = ModalityStatus::Failed;
                }
            }
        }
        for w in self.loss_windows.iter().filter(|w| w.contains(t)) {
            status[w.modality] = ModalityStatus::Lost;
        }
        status
    }
}

/// The four scripted scenarios of the tracking experiment. Modality 0 is
/// the bearing, modality 1 the range.
pub fn builtin_scenario(k: u32) -> Result<ScenarioSpec> {
    let fail = |modalities: &[usize], start, end, probability| FailureWindow {
        modalities: modalities.to_vec(),
        start,
        end,
        probability,
    };
    let lose = |modality, start, end| LossWindow { modality, start, end };
    let (failure_windows, loss_windows) = match k {
        1 => (vec![], vec![]),
        2 => (
            vec![
                fail(&[0], 190, 210, 1.0),
                fail(&[0], 220, 230, 0.8),
                fail(&[1], 235, 245, 1.0),
                fail(&[1], 250, 260, 0.8),
            ],
            vec![],
        ),
        3 => (vec![], vec![lose(0, 190, 200), lose(1, 250, 260)]),
        4 => (
            vec![
                fail(&[0, 1], 190, 200, 1.0),
                fail(&[0, 1], 210, 240, 0.8),
                fail(&[0, 1], 250, 260, 1.0),
            ],
            vec![],
        ),
        other => return Err(FusionError::UnknownScenario(other)),
    };
    Ok(ScenarioSpec {
        id: k,
        horizon: DEFAULT_HORIZON,
        failure_windows,
        loss_windows,
    })
}

/// What a failed sensor emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum FailureMode {
    /// Uniform over the modality's value space.
    #[default]
    Uniform,
    /// A normal reading shifted by a fixed per-modality offset.
    Offset { offsets: Vec<f64> },
}

/// Rolls the transition prior forward `horizon` steps from `x0`; returns `x_1..x_T`.
pub fn simulate_truth(horizon: usize, x0: &StateVector, tm: &dyn TransitionModel, rng: &mut dyn RngCore) -> Result<Vec<StateVector>> {
    let mut states = Vec::with_capacity(horizon);
    let mut prev = x0.clone();
    for _ in 0..horizon {
        let next = tm.sample(&prev, rng)?;
        states.push(next.clone());
        prev = next;
    }
    Ok(states)
}

/// Observation frame for state `x` given the per-modality status.
pub fn observe(
    x: &StateVector,
    status: &[ModalityStatus],
    model: &StateSpaceModel,
    failure: &FailureMode,
    time_index: usize,
    rng: &mut dyn RngCore,
) -> Result<ObservationFrame> {
    if status.len() != model.modality_count() {
        return Err(FusionError::DimensionMismatch {
            expected: model.modality_count(),
            actual: status.len(),
        });
    }
    let observations = model
        .modalities
        .iter()
        .zip(status)
        .enumerate()
        .map(|(k, (m, s))| {
            let value = match s {
                ModalityStatus::Normal => Some(m.sample(x.as_slice(), rng)),
                ModalityStatus::Failed => Some(match failure {
                    FailureMode::Uniform => m.sample_value_space(rng),
                    FailureMode::Offset { offsets } => {
                        let mut y = m.sample(x.as_slice(), rng);
                        let shift = offsets.get(k).copied().unwrap_or(0.0);
                        y.iter_mut().for_each(|v| *v += shift);
                        m.project(&mut y);
                        y
                    }
                }),
                ModalityStatus::Lost => None,
            };
            ModalityObservation {
                modality_index: k,
                value,
            }
        })
        .collect();
    ObservationFrame::new(time_index, observations)
}

/// Simulated trajectory, observations and the hidden failure record.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRun {
    pub states: Vec<StateVector>,
    pub frames: Vec<ObservationFrame>,
    pub failure_log: Vec<Vec<ModalityStatus>>,
}

/// Generates one run of a scenario: truth first, then per-step statuses and
/// observations, all from `rng`.
pub fn generate_run(
    spec: &ScenarioSpec,
    x0: &StateVector,
    model: &StateSpaceModel,
    failure: &FailureMode,
    rng: &mut dyn RngCore,
) -> Result<GroundTruthRun> {
    let n = model.modality_count();
    spec.validate(n)?;
    let states = simulate_truth(spec.horizon, x0, model.transition.as_ref(), rng)?;
    let mut frames = Vec::with_capacity(spec.horizon);
    let mut failure_log = Vec::with_capacity(spec.horizon);
    for (i, x) in states.iter().enumerate() {
        let t = i + 1;
        let status = spec.draw_status(t, n, rng);
        frames.push(observe(x, &status, model, failure, t, rng)?);
        failure_log.push(status);
    }
    Ok(GroundTruthRun {
        states,
        frames,
        failure_log,
    })
}

#[derive(Serialize, Deserialize)]
struct Record {
    t: usize,
    state: Vec<f64>,
    observations: Vec<Option<Vec<f64>>>,
    status: Vec<ModalityStatus>,
}

impl GroundTruthRun {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    /// Every LOST entry is absent and every other entry present.
    pub fn is_consistent(&self) -> bool {
        self.frames.len() == self.states.len()
            && self.failure_log.len() == self.states.len()
            && self.frames.iter().zip(&self.failure_log).all(|(f, s)| {
                f.observations.len() == s.len()
                    && f.observations
                        .iter()
                        .zip(s)
                        .all(|(o, st)| o.is_absent() == (*st == ModalityStatus::Lost))
            })
    }

    /// Writes one JSON record per time step.
    pub fn write_records<W: Write>(&self, mut out: W) -> Result<()> {
        for ((x, f), s) in self.states.iter().zip(&self.frames).zip(&self.failure_log) {
            let rec = Record {
                t: f.time_index,
                state: x.as_slice().to_vec(),
                observations: f.observations.iter().map(|o| o.value.clone()).collect(),
                status: s.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_records<R: BufRead>(input: R) -> Result<Self> {
        let mut run = GroundTruthRun {
            states: Vec::new(),
            frames: Vec::new(),
            failure_log: Vec::new(),
        };
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)?;
            run.states.push(StateVector::new(rec.state)?);
            let obs = rec
                .observations
                .into_iter()
                .enumerate()
                .map(|(k, value)| ModalityObservation {
                    modality_index: k,
                    value,
                })
                .collect();
            run.frames.push(ObservationFrame::new(rec.t, obs)?);
            run.failure_log.push(rec.status);
        }
        Ok(run)
    }
}
