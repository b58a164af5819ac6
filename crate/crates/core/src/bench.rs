//! Monte Carlo experiment harness: seeded runs of each algorithm on each
//! scenario, RMSE and timing statistics, and CSV/NDJSON output.
//!
//! Data and initial particles of run `r` depend only on `(master_seed, r)`,
//! so every algorithm sees the same observations and starts from the same
//! particle set.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{FailureEstimator, PfFilter, SmaFilter, TsFilter};
use crate::config::{Config, SimulationParams};
use crate::dma::{enumerate_candidates, DmaFilter};
use crate::error::{FusionError, Result};
use crate::pf::{init_particles, GaussianPrior, ParticleSet};
use crate::seed::{run_seed, stream_rng, Stream};
use crate::ssm::{StateSpaceModel, StateVector, POS_X, POS_Y};
use crate::tracker::Tracker;
use crate::tracksim::{generate_run, GroundTruthRun, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Pf,
    Ts,
    Sma,
    Dma,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Pf, Algorithm::Ts, Algorithm::Sma, Algorithm::Dma];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pf => "pf",
            Algorithm::Ts => "ts",
            Algorithm::Sma => "sma",
            Algorithm::Dma => "dma",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which state components enter the error norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum RmseMode {
    /// Full state vector.
    #[default]
    Full,
    /// Position components only.
    Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum PriorMode {
    /// Centred on the true initial state.
    #[default]
    Accurate,
    /// Mean shifted by the configured bias.
    Biased,
}

/// Initial-state distribution: Gaussian around `x0_true` with the configured
/// variances, shifted by the configured bias when `mode` is biased.
pub fn init_prior(mode: PriorMode, x0_true: &StateVector, sim: &SimulationParams) -> Result<GaussianPrior> {
    let mut mean = x0_true.as_slice().to_vec();
    if mode == PriorMode::Biased {
        if sim.bias.len() != mean.len() {
            return Err(FusionError::DimensionMismatch {
                expected: mean.len(),
                actual: sim.bias.len(),
            });
        }
        for (m, b) in mean.iter_mut().zip(&sim.bias) {
            *m += b;
        }
    }
    GaussianPrior::from_variances(mean, &sim.prior_variances)
}

fn error_norm(est: &[f64], truth: &[f64], mode: RmseMode) -> f64 {
    match mode {
        RmseMode::Full => est
            .iter()
            .zip(truth)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        RmseMode::Position => (est[POS_X] - truth[POS_X]).hypot(est[POS_Y] - truth[POS_Y]),
    }
}

/// Euclidean estimation error at every step.
pub fn per_step_errors(estimates: &[StateVector], truth: &[StateVector], mode: RmseMode) -> Result<Vec<f64>> {
    if estimates.len() != truth.len() {
        return Err(FusionError::LengthMismatch {
            left: estimates.len(),
            right: truth.len(),
        });
    }
    estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| {
            if e.len() != t.len() {
                return Err(FusionError::DimensionMismatch {
                    expected: t.len(),
                    actual: e.len(),
                });
            }
            Ok(error_norm(e.as_slice(), t.as_slice(), mode))
        })
        .collect()
}

/// `sqrt(mean(e_t^2))` of per-step error norms.
pub fn rmse_from_errors(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Full-state RMSE over a trajectory.
pub fn rmse(estimates: &[StateVector], truth: &[StateVector]) -> Result<f64> {
    rmse_with(estimates, truth, RmseMode::Full)
}

pub fn rmse_with(estimates: &[StateVector], truth: &[StateVector], mode: RmseMode) -> Result<f64> {
    Ok(rmse_from_errors(&per_step_errors(estimates, truth, mode)?))
}

/// One batch: an algorithm on a scenario over `runs` seeded repetitions.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub scenario: ScenarioSpec,
    pub particles: usize,
    pub runs: usize,
    pub master_seed: u64,
    pub prior: PriorMode,
    pub rmse_mode: RmseMode,
    pub config: Config,
}

impl ExperimentConfig {
    pub fn new(algorithm: Algorithm, scenario: ScenarioSpec, particles: usize, runs: usize, master_seed: u64) -> Self {
        Self {
            algorithm,
            scenario,
            particles,
            runs,
            master_seed,
            prior: PriorMode::Accurate,
            rmse_mode: RmseMode::Full,
            config: Config::default(),
        }
    }
}

/// Outcome of a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub scenario: u32,
    pub run_index: usize,
    pub seed: u64,
    pub rmse: f64,
    pub per_step_error: Vec<f64>,
    pub wall_time_seconds: f64,
    pub degenerate_steps: usize,
    /// Per step: candidate probabilities (DMA) or failure probabilities (TS).
    pub weight_trace: Option<Vec<Vec<f64>>>,
    pub estimates: Vec<StateVector>,
    pub truth: Vec<StateVector>,
}

impl RunResult {
    /// Position error at step `t` (1-based).
    pub fn position_error(&self, t: usize) -> f64 {
        error_norm(self.estimates[t - 1].as_slice(), self.truth[t - 1].as_slice(), RmseMode::Position)
    }
}

/// Mean and sample variance across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub scenario: u32,
    pub particles: usize,
    pub runs: usize,
    pub mean_rmse: f64,
    pub var_rmse: f64,
    pub mean_time: f64,
    pub var_time: f64,
}

/// Mean and unbiased sample variance (0 for a single value).
pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub runs: Vec<RunResult>,
    pub summary: Summary,
    /// Column labels of the weight traces, if any.
    pub weight_labels: Option<Vec<String>>,
}

/// Observations of run `run_index`; independent of the algorithm.
pub fn dataset(config: &Config, scenario: &ScenarioSpec, master_seed: u64, run_index: usize) -> Result<GroundTruthRun> {
    let model = config.state_space_model()?;
    let seed = run_seed(master_seed, run_index as u64);
    let mut rng = stream_rng(seed, Stream::Data);
    generate_run(scenario, &config.initial_state()?, &model, &config.simulation.failure, &mut rng)
}

/// Initial particle set of run `run_index`; independent of the algorithm.
pub fn initial_particles(
    config: &Config,
    prior: PriorMode,
    particles: usize,
    master_seed: u64,
    run_index: usize,
) -> Result<ParticleSet> {
    let sampler = init_prior(prior, &config.initial_state()?, &config.simulation)?;
    let seed = run_seed(master_seed, run_index as u64);
    init_particles(&sampler, particles, &mut stream_rng(seed, Stream::Prior))
}

/// Builds a filter whose noise comes from the run's filter streams.
pub fn build_tracker(
    algorithm: Algorithm,
    model: StateSpaceModel,
    particles: ParticleSet,
    seed: u64,
    failure_smoothing: f64,
) -> Result<Box<dyn Tracker + Send>> {
    let rng = stream_rng(seed, Stream::Filter);
    Ok(match algorithm {
        Algorithm::Pf => Box::new(PfFilter::new(model, particles, rng)?),
        Algorithm::Dma => Box::new(DmaFilter::new(model, particles, rng)?),
        Algorithm::Ts => Box::new(TsFilter::new(
            model,
            particles,
            FailureEstimator::Marginal {
                smoothing: failure_smoothing,
            },
            rng,
        )?),
        Algorithm::Sma => {
            let rngs = (0..model.modality_count())
                .map(|k| stream_rng(seed, Stream::SubFilter(k)))
                .collect();
            Box::new(SmaFilter::new(model, &particles, rngs)?)
        }
    })
}

/// Executes run `run_index` of an experiment.
pub fn run_single(exp: &ExperimentConfig, run_index: usize) -> Result<RunResult> {
    let data = dataset(&exp.config, &exp.scenario, exp.master_seed, run_index)?;
    let particles = initial_particles(&exp.config, exp.prior, exp.particles, exp.master_seed, run_index)?;
    let model = exp.config.state_space_model()?;
    let seed = run_seed(exp.master_seed, run_index as u64);
    let mut tracker = build_tracker(
        exp.algorithm,
        model,
        particles,
        seed,
        exp.config.simulation.failure_smoothing,
    )?;

    let horizon = data.frames.len();
    let mut estimates = Vec::with_capacity(horizon);
    let mut trace = Vec::with_capacity(horizon);
    let mut degenerate_steps = 0;
    let start = Instant::now();
    for frame in &data.frames {
        let out = tracker.step(frame)?;
        degenerate_steps += out.degenerate as usize;
        estimates.push(out.estimate);
        if let Some(w) = out.weights {
            trace.push(w);
        }
    }
    let wall_time_seconds = start.elapsed().as_secs_f64();

    let per_step_error = per_step_errors(&estimates, &data.states, exp.rmse_mode)?;
    Ok(RunResult {
        algorithm: exp.algorithm,
        scenario: exp.scenario.id,
        run_index,
        seed,
        rmse: rmse_from_errors(&per_step_error),
        per_step_error,
        wall_time_seconds,
        degenerate_steps,
        weight_trace: (!trace.is_empty()).then_some(trace),
        estimates,
        truth: data.states,
    })
}

pub fn summarize(exp: &ExperimentConfig, runs: &[RunResult]) -> Summary {
    let rmses: Vec<f64> = runs.iter().map(|r| r.rmse).collect();
    let times: Vec<f64> = runs.iter().map(|r| r.wall_time_seconds).collect();
    let (mean_rmse, var_rmse) = mean_and_variance(&rmses);
    let (mean_time, var_time) = mean_and_variance(&times);
    Summary {
        algorithm: exp.algorithm,
        scenario: exp.scenario.id,
        particles: exp.particles,
        runs: runs.len(),
        mean_rmse,
        var_rmse,
        mean_time,
        var_time,
    }
}

/// Runs every repetition (in parallel) and aggregates in run order.
pub fn run_experiment(exp: &ExperimentConfig) -> Result<Experiment> {
    if exp.particles == 0 {
        return Err(FusionError::EmptyParticleSet);
    }
    if exp.runs == 0 {
        return Err(FusionError::Config("runs must be at least 1".into()));
    }
    let model = exp.config.state_space_model()?;
    exp.scenario.validate(model.modality_count())?;
    let mut runs = (0..exp.runs)
        .into_par_iter()
        .map(|r| run_single(exp, r))
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|r| r.run_index);
    let weight_labels = match exp.algorithm {
        Algorithm::Dma => Some(
            enumerate_candidates(model.modality_count())?
                .labels()
                .into_iter()
                .map(|l| format!("pi_{l}"))
                .collect(),
        ),
        Algorithm::Ts => Some((0..model.modality_count()).map(|k| format!("alpha_{k}")).collect()),
        _ => None,
    };
    Ok(Experiment {
        summary: summarize(exp, &runs),
        runs,
        weight_labels,
    })
}

/// Runs all algorithms on all listed scenarios with shared seeds.
pub fn run_table(
    scenarios: &[ScenarioSpec],
    particles: usize,
    runs: usize,
    master_seed: u64,
    prior: PriorMode,
    rmse_mode: RmseMode,
    config: &Config,
) -> Result<Vec<Experiment>> {
    let mut out = Vec::new();
    for scenario in scenarios {
        for algorithm in Algorithm::ALL {
            let exp = ExperimentConfig {
                algorithm,
                scenario: scenario.clone(),
                particles,
                runs,
                master_seed,
                prior,
                rmse_mode,
                config: config.clone(),
            };
            out.push(run_experiment(&exp)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct RunRow {
    algorithm: Algorithm,
    scenario: u32,
    run: usize,
    seed: u64,
    rmse: f64,
    wall_time_seconds: f64,
    degenerate_steps: usize,
    per_step_error: String,
}

fn join_floats(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn split_floats(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|x| x.parse::<f64>().map_err(|e| FusionError::Config(format!("bad number {x:?}: {e}"))))
        .collect()
}

pub fn write_summary_csv<W: Write>(out: W, summaries: &[Summary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in summaries {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: std::io::Read>(input: R) -> Result<Vec<Summary>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(FusionError::from)).collect()
}

/// One row per run; the per-step errors are `;`-separated in the last column.
pub fn write_runs_csv<W: Write>(out: W, runs: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in runs {
        w.serialize(RunRow {
            algorithm: r.algorithm,
            scenario: r.scenario,
            run: r.run_index,
            seed: r.seed,
            rmse: r.rmse,
            wall_time_seconds: r.wall_time_seconds,
            degenerate_steps: r.degenerate_steps,
            per_step_error: join_floats(&r.per_step_error),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed `runs.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub scenario: u32,
    pub run_index: usize,
    pub seed: u64,
    pub rmse: f64,
    pub wall_time_seconds: f64,
    pub degenerate_steps: usize,
    pub per_step_error: Vec<f64>,
}

impl From<&RunResult> for RunRecord {
    fn from(r: &RunResult) -> Self {
        Self {
            algorithm: r.algorithm,
            scenario: r.scenario,
            run_index: r.run_index,
            seed: r.seed,
            rmse: r.rmse,
            wall_time_seconds: r.wall_time_seconds,
            degenerate_steps: r.degenerate_steps,
            per_step_error: r.per_step_error.clone(),
        }
    }
}

pub fn read_runs_csv<R: std::io::Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<RunRow>()
        .map(|row| {
            let row = row?;
            Ok(RunRecord {
                algorithm: row.algorithm,
                scenario: row.scenario,
                run_index: row.run,
                seed: row.seed,
                rmse: row.rmse,
                wall_time_seconds: row.wall_time_seconds,
                degenerate_steps: row.degenerate_steps,
                per_step_error: split_floats(&row.per_step_error)?,
            })
        })
        .collect()
}

pub fn write_weights_csv<W: Write>(out: W, labels: &[String], trace: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (i, row) in trace.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_csv<W: Write>(out: W, truth: &[StateVector], estimates: &[StateVector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = truth.first().map_or(0, StateVector::len);
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|k| format!("truth_{k}")));
    header.extend((0..d).map(|k| format!("estimate_{k}")));
    w.write_record(&header)?;
    for (i, (x, e)) in truth.iter().zip(estimates).enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(x.as_slice().iter().map(|v| v.to_string()));
        rec.extend(e.as_slice().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes `summary.csv`, `runs.csv` and per-run weight, trajectory and
/// dataset files for one experiment.
pub fn write_experiment(dir: &Path, exp: &ExperimentConfig, result: &Experiment) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_summary_csv(create(&dir.join("summary.csv"))?, std::slice::from_ref(&result.summary))?;
    write_runs_csv(create(&dir.join("runs.csv"))?, &result.runs)?;
    for run in &result.runs {
        let r = run.run_index;
        if let (Some(labels), Some(trace)) = (&result.weight_labels, &run.weight_trace) {
            write_weights_csv(create(&dir.join(format!("weights_{r}.csv")))?, labels, trace)?;
        }
        write_trajectory_csv(create(&dir.join(format!("trajectory_{r}.csv")))?, &run.truth, &run.estimates)?;
        let data = dataset(&exp.config, &exp.scenario, exp.master_seed, r)?;
        let mut out = create(&dir.join(format!("dataset_{r}.ndjson")))?;
        data.write_records(&mut out)?;
        out.flush()?;
    }
    Ok(())
}

/// Rows of the algorithm-by-scenario comparison grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    /// `(mean, variance)` per algorithm in `Algorithm::ALL` order.
    pub cells: Vec<(f64, f64)>,
}

/// Mean RMSE per scenario, the cross-scenario average and the mean wall time.
pub fn table_rows(experiments: &[Experiment]) -> Vec<TableRow> {
    let mut scenarios: Vec<u32> = experiments.iter().map(|e| e.summary.scenario).collect();
    scenarios.sort_unstable();
    scenarios.dedup();
    let find = |s: u32, a: Algorithm| {
        experiments
            .iter()
            .find(|e| e.summary.scenario == s && e.summary.algorithm == a)
            .map(|e| &e.summary)
    };
    let mut rows = Vec::new();
    for &s in &scenarios {
        rows.push(TableRow {
            label: format!("scenario {s}"),
            cells: Algorithm::ALL
                .iter()
                .map(|&a| find(s, a).map_or((f64::NAN, f64::NAN), |x| (x.mean_rmse, x.var_rmse)))
                .collect(),
        });
    }
    let average = |f: &dyn Fn(&Summary) -> (f64, f64)| -> Vec<(f64, f64)> {
        Algorithm::ALL
            .iter()
            .map(|&a| {
                let vals: Vec<(f64, f64)> = scenarios.iter().filter_map(|&s| find(s, a)).map(f).collect();
                let k = vals.len() as f64;
                (vals.iter().map(|v| v.0).sum::<f64>() / k, vals.iter().map(|v| v.1).sum::<f64>() / k)
            })
            .collect()
    };
    rows.push(TableRow {
        label: "average".into(),
        cells: average(&|x| (x.mean_rmse, x.var_rmse)),
    });
    rows.push(TableRow {
        label: "time per run (s)".into(),
        cells: average(&|x| (x.mean_time, x.var_time)),
    });
    rows
}

pub fn write_table_csv<W: Write>(out: W, rows: &[TableRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["row".to_string()];
    for a in Algorithm::ALL {
        header.push(format!("{a}_mean"));
        header.push(format!("{a}_var"));
    }
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.label.clone()];
        for (m, v) in &row.cells {
            rec.push(m.to_string());
            rec.push(v.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text rendering of the grid.
pub fn format_table(rows: &[TableRow]) -> String {
    let mut s = format!("{:<18}", "");
    for a in Algorithm::ALL {
        s.push_str(&format!("{:>22}", a.name().to_uppercase()));
    }
    s.push('\n');
    for row in rows {
        s.push_str(&format!("{:<18}", row.label));
        for (m, v) in &row.cells {
            s.push_str(&format!("{:>22}", format!("{m:.2} ({v:.3})")));
        }
        s.push('\n');
    }
    s
}
