//! Independent oracles and invariant checks shared by the integration tests.
//!
//! Oracles use plain linear-domain arithmetic and their own geometry so they
//! share no code path with the library beyond the public types.
#![allow(dead_code)]

use std::f64::consts::PI;

use dmafusion::baselines::{average_estimates, pf_step, ts_step, FailureEstimator, TsState};
use dmafusion::bench::{
    dataset, mean_and_variance, read_runs_csv, read_summary_csv, run_experiment, run_single, write_runs_csv,
    write_summary_csv, Algorithm, ExperimentConfig, RunRecord,
};
use dmafusion::dma::{
    candidate_loglik, dma_step, enumerate_candidates, marginal_loglik, mixture_weights, update_model_posterior,
    CandidateModelSet, DmaState, ModelPosterior, UsefulnessVector, PI_FLOOR,
};
use dmafusion::pf::{estimate_mean, init_particles, propagate, residual_resample, reweight, weighted_mean, PointMass};
use dmafusion::ssm::{AngleModality, ModalityModel, ModelParams, RangeModality};
use dmafusion::tracksim::{builtin_scenario, ModalityStatus};
use dmafusion::{
    bench, Config, ModalityObservation, ObservationFrame, ParticleSet, StateSpaceModel, StateVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn close(a: f64, b: f64, tol: f64, what: &str) -> Check {
    ensure((a - b).abs() <= tol, || format!("{what}: {a} vs {b} (tol {tol})"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn model() -> StateSpaceModel {
    StateSpaceModel::tracking_2d(&ModelParams::default()).unwrap()
}

// ---- oracles ----

pub fn oracle_bearing(dx: f64, dy: f64) -> f64 {
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

fn normal_pdf(r: f64, sigma: f64) -> f64 {
    (-(r * r) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}

/// Likelihood of modality `k` (0 angle, 1 range) in the linear domain.
pub fn oracle_likelihood(k: usize, y: f64, x: &[f64], p: &ModelParams) -> f64 {
    let (dx, dy) = (x[2], x[3]);
    if k == 0 {
        let r = y - oracle_bearing(dx, dy);
        normal_pdf(r.sin().atan2(r.cos()), p.sigma_angle)
    } else {
        normal_pdf(y - (dx * dx + dy * dy).sqrt(), p.sigma_range)
    }
}

pub fn oracle_volume(k: usize, p: &ModelParams) -> f64 {
    if k == 0 {
        2.0 * PI
    } else {
        p.range_max
    }
}

/// `ln sum_i w_i prod_k f_k(y_k, x_i)` by direct summation.
pub fn oracle_marginal(
    weights: &[f64],
    states: &[Vec<f64>],
    obs: &[Option<f64>],
    bits: &[bool],
    p: &ModelParams,
) -> f64 {
    let mut total = 0.0;
    for (w, x) in weights.iter().zip(states) {
        let mut lik = 1.0;
        for (k, y) in obs.iter().enumerate() {
            if let Some(y) = y {
                lik *= if bits[k] {
                    oracle_likelihood(k, *y, x, p)
                } else {
                    1.0 / oracle_volume(k, p)
                };
            }
        }
        total += w * lik;
    }
    total.ln()
}

/// Bayes rule on probabilities, then floor and renormalise.
pub fn oracle_posterior(prev: &[f64], g: &[f64], floor: f64) -> Vec<f64> {
    let joint: Vec<f64> = prev.iter().zip(g).map(|(p, g)| p * g).collect();
    let total: f64 = joint.iter().sum();
    let clamped: Vec<f64> = joint.iter().map(|j| (j / total).max(floor)).collect();
    let s: f64 = clamped.iter().sum();
    clamped.iter().map(|c| c / s).collect()
}

pub fn oracle_reweight(w: &[f64], lik: &[f64]) -> Vec<f64> {
    let prod: Vec<f64> = w.iter().zip(lik).map(|(a, b)| a * b).collect();
    let s: f64 = prod.iter().sum();
    prod.iter().map(|p| p / s).collect()
}

pub fn oracle_rmse(est: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for (e, t) in est.iter().zip(truth) {
        let mut sq = 0.0;
        for i in 0..e.len() {
            sq += (e[i] - t[i]) * (e[i] - t[i]);
        }
        acc += sq;
    }
    (acc / est.len() as f64).sqrt()
}

// ---- random instances ----

/// State with position in a box away from the observer.
pub fn random_state(r: &mut impl Rng) -> Vec<f64> {
    vec![
        r.random_range(-2.0..2.0),
        r.random_range(-2.0..2.0),
        r.random_range(5.0..40.0),
        r.random_range(5.0..40.0),
    ]
}

pub struct SmallInstance {
    pub states: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub obs: Vec<Option<f64>>,
}

impl SmallInstance {
    pub fn particles(&self) -> ParticleSet {
        let flat: Vec<f64> = self.states.iter().flatten().copied().collect();
        let lw = self.weights.iter().map(|w| w.ln()).collect();
        ParticleSet::with_log_weights(4, flat, lw).unwrap()
    }

    pub fn frame(&self, t: usize) -> ObservationFrame {
        let obs = self
            .obs
            .iter()
            .enumerate()
            .map(|(k, y)| match y {
                Some(y) => ModalityObservation::present(k, vec![*y]),
                None => ModalityObservation::absent(k),
            })
            .collect();
        ObservationFrame::new(t, obs).unwrap()
    }
}

/// Up to 5 particles clustered around a target with a noisy observation of
/// it; each modality absent with probability 1/5.
pub fn small_instance(r: &mut impl Rng, n: usize) -> SmallInstance {
    let target = random_state(r);
    let states: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            target
                .iter()
                .enumerate()
                .map(|(i, v)| v + if i >= 2 { r.random_range(-1.0..1.0) } else { 0.0 })
                .collect()
        })
        .collect();
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / s).collect();
    let angle = oracle_bearing(target[2], target[3]) + r.random_range(-0.1..0.1);
    let range = target[2].hypot(target[3]) + r.random_range(-1.0..1.0);
    let obs = [angle, range]
        .into_iter()
        .map(|y| (r.random_range(0..5) > 0).then_some(y))
        .collect();
    SmallInstance { states, weights, obs }
}

pub fn weight_sum(p: &ParticleSet) -> f64 {
    p.log_weights().iter().map(|l| l.exp()).sum()
}

pub fn uniform_particles(states: &[Vec<f64>]) -> ParticleSet {
    ParticleSet::uniform(4, states.iter().flatten().copied().collect()).unwrap()
}

pub fn prior_particles(n: usize, seed: u64) -> ParticleSet {
    let cfg = Config::default();
    bench::initial_particles(&cfg, bench::PriorMode::Accurate, n, seed, 0).unwrap()
}

pub fn run_frames(scenario: u32, seed: u64) -> dmafusion::GroundTruthRun {
    let cfg = Config::default();
    dataset(&cfg, &builtin_scenario(scenario).unwrap(), seed, 0).unwrap()
}

// ---- numerical oracle checks ----

/// Every candidate's marginal, via the public function and via a DMA step.
pub fn check_marginals(inst: &SmallInstance, p: &ModelParams) -> Check {
    let model = StateSpaceModel::tracking_2d(p).unwrap();
    let set = enumerate_candidates(2).unwrap();
    let particles = inst.particles();
    let frame = inst.frame(1);
    for (m, u) in set.iter().enumerate() {
        let ll: Vec<f64> = inst
            .states
            .iter()
            .map(|x| candidate_loglik(u, &frame, &StateVector::new(x.clone()).unwrap(), &model))
            .collect();
        let got = marginal_loglik(&particles, &ll).map_err(|e| e.to_string())?;
        let want = oracle_marginal(&inst.weights, &inst.states, &inst.obs, u.bits(), p);
        close(got, want, 1e-10, &format!("marginal_loglik m={m}"))?;
    }
    Ok(())
}

/// Log marginals reported by a DMA step equal the oracle on the propagated set.
pub fn check_step_marginals(inst: &SmallInstance, seed: u64) -> Check {
    let model = model();
    let p = ModelParams::default();
    let set = enumerate_candidates(2).unwrap();
    let particles = inst.particles();
    let propagated = propagate(&particles, model.transition.as_ref(), &mut rng(seed)).unwrap();
    let states: Vec<Vec<f64>> = (0..propagated.len()).map(|i| propagated.state(i).to_vec()).collect();
    let (_, _, diag) = dma_step(
        DmaState::new(particles, set.len()),
        &inst.frame(1),
        &model,
        &set,
        &mut rng(seed),
    )
    .map_err(|e| e.to_string())?;
    for (m, u) in set.iter().enumerate() {
        let want = oracle_marginal(&inst.weights, &states, &inst.obs, u.bits(), &p);
        if want.is_finite() {
            close(diag.log_marginals[m], want, 1e-10, &format!("step marginal m={m}"))?;
        }
    }
    Ok(())
}

pub fn check_posterior(prev: &[f64], log_g: &[f64]) -> Check {
    let got = update_model_posterior(&ModelPosterior::from_probabilities(prev).unwrap(), log_g)
        .posterior
        .probabilities();
    let g: Vec<f64> = log_g.iter().map(|l| l.exp()).collect();
    let want = oracle_posterior(prev, &g, PI_FLOOR);
    for (a, b) in got.iter().zip(&want) {
        close(*a, *b, 1e-10, "update_model_posterior")?;
    }
    Ok(())
}

pub fn check_reweight(inst: &SmallInstance, shift: &[f64]) -> Check {
    let lik: Vec<f64> = shift.iter().map(|s| s.exp()).collect();
    let p = inst.particles();
    let lookup: Vec<(Vec<f64>, f64)> = inst.states.iter().cloned().zip(shift.iter().copied()).collect();
    let got = reweight(&p, |x| lookup.iter().find(|(s, _)| s.as_slice() == x).unwrap().1)
        .map_err(|e| e.to_string())?
        .weights();
    for (a, b) in got.iter().zip(oracle_reweight(&inst.weights, &lik)) {
        close(*a, b, 1e-10, "reweight")?;
    }
    Ok(())
}

pub fn check_rmse(est: &[Vec<f64>], truth: &[Vec<f64>]) -> Check {
    let e: Vec<StateVector> = est.iter().map(|v| StateVector::new(v.clone()).unwrap()).collect();
    let t: Vec<StateVector> = truth.iter().map(|v| StateVector::new(v.clone()).unwrap()).collect();
    close(bench::rmse(&e, &t).unwrap(), oracle_rmse(est, truth), 1e-10, "rmse")
}

/// Mean of resampled-set means stays within 3 standard errors of the
/// weighted mean, on a fixed 10-particle set.
pub fn check_resample_unbiased(reps: usize, seed: u64) -> Check {
    let states: Vec<f64> = (0..10).flat_map(|i| [i as f64, (i * i) as f64, -(i as f64), 3.0]).collect();
    let lw: Vec<f64> = (0..10).map(|i| ((i % 4 + 1) as f64).ln()).collect();
    let p = ParticleSet::with_log_weights(4, states, lw).unwrap();
    let target = estimate_mean(&p);
    let mut r = rng(seed);
    let means: Vec<StateVector> = (0..reps).map(|_| estimate_mean(&residual_resample(&p, &mut r))).collect();
    for d in 0..4 {
        let col: Vec<f64> = means.iter().map(|m| m[d]).collect();
        let (mean, var) = mean_and_variance(&col);
        let se = (var / reps as f64).sqrt();
        ensure((mean - target[d]).abs() <= 3.0 * se + 1e-12, || {
            format!("resampling biased in component {d}: {mean} vs {} (se {se})", target[d])
        })?;
    }
    Ok(())
}

// ---- invariants ----

/// Numerical integral of the likelihood over the value space.
pub fn check_density_integrates(x: &[f64]) -> Check {
    let model = model();
    let angle = &model.modalities[0];
    let steps = 200_000;
    let h = 2.0 * PI / steps as f64;
    let total: f64 = (0..steps)
        .map(|i| angle.log_likelihood(&[-PI + (i as f64 + 0.5) * h], x).exp() * h)
        .sum();
    close(total, 1.0, 1e-3, "angle density integral")?;

    let range = &model.modalities[1];
    let r = x[2].hypot(x[3]);
    let (lo, hi) = ((r - 15.0).max(0.0), r + 15.0);
    let h = (hi - lo) / steps as f64;
    let total: f64 = (0..steps)
        .map(|i| range.log_likelihood(&[lo + (i as f64 + 0.5) * h], x).exp() * h)
        .sum();
    close(total, 1.0, 1e-3, "range density integral")
}

pub fn check_null_invariance(sigma: f64, range_max: f64) -> Check {
    let a = AngleModality::new(sigma).unwrap();
    close(a.null_log_likelihood(), -(2.0 * PI).ln(), 1e-15, "angle null")?;
    let r = RangeModality::new(sigma, range_max).unwrap();
    close(r.null_log_likelihood(), -range_max.ln(), 1e-12, "range null")?;
    let r2 = RangeModality::new(sigma * 2.0, range_max).unwrap();
    ensure(r.null_log_likelihood() == r2.null_log_likelihood(), || "null depends on sigma".into())?;
    let r3 = RangeModality::new(sigma, range_max * 2.0).unwrap();
    ensure(r.null_log_likelihood() != r3.null_log_likelihood(), || "null ignores volume".into())
}

pub fn check_angle_periodic(y: f64, x: &[f64]) -> Check {
    let a = &model().modalities[0];
    close(
        a.log_likelihood(&[y], x),
        a.log_likelihood(&[y + 2.0 * PI], x),
        1e-12,
        "angle periodicity",
    )
}

pub fn check_reweight_composes(inst: &SmallInstance, a: &[f64], b: &[f64]) -> Check {
    let p = inst.particles();
    let idx = |x: &[f64]| inst.states.iter().position(|s| s.as_slice() == x).unwrap();
    let two = reweight(&reweight(&p, |x| a[idx(x)]).unwrap(), |x| b[idx(x)]).unwrap();
    let one = reweight(&p, |x| a[idx(x)] + b[idx(x)]).unwrap();
    for (u, v) in two.weights().iter().zip(one.weights()) {
        close(*u, v, 1e-12, "reweight composition")?;
    }
    Ok(())
}

pub fn check_normalization(inst: &SmallInstance, seed: u64) -> Check {
    let model = model();
    let mut r = rng(seed);
    let p = inst.particles();
    let sets = [
        p.clone(),
        init_particles(&PointMass(inst.states[0].clone()), 7, &mut r).unwrap(),
        propagate(&p, model.transition.as_ref(), &mut r).unwrap(),
        reweight(&p, |x| -x[2]).unwrap(),
        residual_resample(&p, &mut r),
    ];
    for s in &sets {
        close(weight_sum(s), 1.0, 1e-12, "weight sum")?;
    }
    Ok(())
}

/// Over a whole run: pi and mixture weights sum to one, pi respects the floor.
pub fn check_dma_normalization(scenario: u32, n: usize, seed: u64) -> Check {
    let model = model();
    let set = enumerate_candidates(2).unwrap();
    let data = run_frames(scenario, seed);
    let mut state = DmaState::new(prior_particles(n, seed), set.len());
    let mut r = rng(seed);
    for frame in &data.frames {
        let (next, _, diag) = dma_step(state, frame, &model, &set, &mut r).map_err(|e| e.to_string())?;
        close(diag.pi.iter().sum(), 1.0, 1e-9, "sum pi")?;
        // renormalising after the clamp can push floored entries just under it
        let lowest = PI_FLOOR / (1.0 + diag.pi.len() as f64 * PI_FLOOR);
        ensure(diag.pi.iter().all(|&p| p >= lowest * (1.0 - 1e-12)), || "pi below floor".into())?;
        let omega = mixture_weights(&diag.pi, next.per_model_weights.as_ref().unwrap());
        close(omega.iter().sum(), 1.0, 1e-9, "sum omega")?;
        state = next;
    }
    Ok(())
}

/// Estimate equals the pi-weighted per-model means, and the all-useless row
/// equals the incoming weights.
pub fn check_mixture_identity(inst: &SmallInstance, seed: u64) -> Check {
    let model = model();
    let set = enumerate_candidates(2).unwrap();
    let particles = inst.particles();
    let propagated = propagate(&particles, model.transition.as_ref(), &mut rng(seed)).unwrap();
    let (next, estimate, diag) = dma_step(
        DmaState::new(particles.clone(), set.len()),
        &inst.frame(1),
        &model,
        &set,
        &mut rng(seed),
    )
    .map_err(|e| e.to_string())?;
    let cw = next.per_model_weights.unwrap();
    let mut mix = [0.0; 4];
    for m in 0..set.len() {
        let mean = weighted_mean(propagated.states(), 4, cw.row(m));
        for d in 0..4 {
            mix[d] += diag.pi[m] * mean[d];
        }
    }
    for d in 0..4 {
        close(estimate[d], mix[d], 1e-10 * (1.0 + mix[d].abs()), "mixture mean")?;
    }
    let none = set.index_of(&UsefulnessVector::new(vec![false, false])).unwrap();
    for (a, b) in cw.row(none).iter().zip(&inst.weights) {
        close(*a, *b, 1e-14, "all-useless row")?;
    }
    Ok(())
}

pub fn check_posterior_invariance(prev: &[f64], log_g: &[f64], shift: f64) -> Check {
    let p = ModelPosterior::from_probabilities(prev).unwrap();
    let a = update_model_posterior(&p, log_g).posterior.probabilities();
    let shifted: Vec<f64> = log_g.iter().map(|l| l + shift).collect();
    let b = update_model_posterior(&p, &shifted).posterior.probabilities();
    for (u, v) in a.iter().zip(&b) {
        close(*u, *v, 1e-12, "posterior shift invariance")?;
    }
    Ok(())
}

/// Candidates differing only in an absent modality's bit get identical evidence.
pub fn check_absent_evidence(inst: &SmallInstance, absent: usize, seed: u64) -> Check {
    let model = model();
    let set = enumerate_candidates(2).unwrap();
    let mut inst_obs = inst.obs.clone();
    inst_obs[absent] = None;
    let view = SmallInstance {
        states: inst.states.clone(),
        weights: inst.weights.clone(),
        obs: inst_obs,
    };
    let (next, _, diag) = dma_step(
        DmaState::new(view.particles(), set.len()),
        &view.frame(1),
        &model,
        &set,
        &mut rng(seed),
    )
    .map_err(|e| e.to_string())?;
    let cw = next.per_model_weights.unwrap();
    for a in 0..set.len() {
        for b in 0..set.len() {
            let (ua, ub) = (set.get(a).bits(), set.get(b).bits());
            let differ_only_there = (0..2).all(|k| k == absent || ua[k] == ub[k]);
            if differ_only_there {
                ensure(diag.log_marginals[a] == diag.log_marginals[b], || format!("marginals {a} vs {b}"))?;
                ensure(cw.row(a) == cw.row(b), || format!("rows {a} vs {b}"))?;
            }
        }
    }
    Ok(())
}

pub fn check_dma_determinism(seed: u64) -> Check {
    let model = model();
    let set = enumerate_candidates(2).unwrap();
    let data = run_frames(4, seed);
    let trace = || {
        let mut state = DmaState::new(prior_particles(50, seed), set.len());
        let mut r = rng(seed);
        let mut out = Vec::new();
        for frame in &data.frames {
            let (next, est, diag) = dma_step(state, frame, &model, &set, &mut r).unwrap();
            out.push((est.into_inner(), diag.pi));
            state = next;
        }
        out
    };
    let (a, b) = (trace(), trace());
    ensure(
        a.iter().zip(&b).all(|(x, y)| {
            x.0.iter().zip(&y.0).all(|(u, v)| u.to_bits() == v.to_bits())
                && x.1.iter().zip(&y.1).all(|(u, v)| u.to_bits() == v.to_bits())
        }),
        || "DMA output differs between identical runs".into(),
    )
}

pub fn check_sma_permutation(estimates: &[Vec<f64>], perm_seed: u64) -> Check {
    let sv: Vec<StateVector> = estimates.iter().map(|e| StateVector::new(e.clone()).unwrap()).collect();
    let mut shuffled = sv.clone();
    use rand::seq::SliceRandom;
    shuffled.shuffle(&mut rng(perm_seed));
    let (a, b) = (average_estimates(&sv), average_estimates(&shuffled));
    for d in 0..a.len() {
        close(a[d], b[d], 1e-12 * (1.0 + a[d].abs()), "SMA permutation")?;
    }
    Ok(())
}

pub fn check_alpha_bounds(scenario: u32, seed: u64) -> Check {
    let model = model();
    let data = run_frames(scenario, seed);
    let mut state = TsState::new(prior_particles(100, seed), 2);
    let mut r = rng(seed);
    for frame in &data.frames {
        let out = ts_step(state, frame, &model, &FailureEstimator::default(), &mut r).map_err(|e| e.to_string())?;
        ensure(out.state.alpha.iter().all(|a| (0.0..=1.0).contains(a)), || {
            format!("alpha out of range: {:?}", out.state.alpha)
        })?;
        state = out.state;
    }
    Ok(())
}

pub fn check_tracksim(seed: u64) -> Check {
    for k in 1..=4 {
        let run = run_frames(k, seed);
        ensure(run.is_consistent(), || format!("scenario {k} inconsistent"))?;
        ensure(run == run_frames(k, seed), || format!("scenario {k} not reproducible"))?;
        if k == 2 {
            ensure(
                run.failure_log
                    .iter()
                    .all(|s| s.iter().filter(|&&m| m != ModalityStatus::Normal).count() < 2),
                || "scenario 2 has simultaneous failures".into(),
            )?;
        }
    }
    Ok(())
}

/// Same truth for every algorithm; summary variance and CSV round-trip.
pub fn check_bench(seed: u64) -> Check {
    let scenario = builtin_scenario(2).unwrap();
    let mut truths = Vec::new();
    for a in Algorithm::ALL {
        let exp = ExperimentConfig::new(a, scenario.clone(), 30, 3, seed);
        let r = run_single(&exp, 1).map_err(|e| e.to_string())?;
        truths.push(r.truth);
    }
    ensure(truths.windows(2).all(|w| w[0] == w[1]), || "truth differs across algorithms".into())?;
    let cfg = Config::default();
    let d = dataset(&cfg, &scenario, seed, 1).unwrap();
    ensure(d == dataset(&cfg, &scenario, seed, 1).unwrap(), || "dataset not reproducible".into())?;

    let exp = ExperimentConfig::new(Algorithm::Dma, scenario, 30, 4, seed);
    let result = run_experiment(&exp).map_err(|e| e.to_string())?;
    let rmses: Vec<f64> = result.runs.iter().map(|r| r.rmse).collect();
    let n = rmses.len() as f64;
    let mean = rmses.iter().sum::<f64>() / n;
    let var = rmses.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    close(result.summary.var_rmse, var, 1e-9 * var.max(1.0), "summary variance")?;

    let mut buf = Vec::new();
    write_runs_csv(&mut buf, &result.runs).map_err(|e| e.to_string())?;
    let back = read_runs_csv(buf.as_slice()).map_err(|e| e.to_string())?;
    let want: Vec<RunRecord> = result.runs.iter().map(RunRecord::from).collect();
    ensure(back == want, || "runs.csv round-trip".into())?;
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, std::slice::from_ref(&result.summary)).map_err(|e| e.to_string())?;
    let back = read_summary_csv(buf.as_slice()).map_err(|e| e.to_string())?;
    ensure(back == vec![result.summary.clone()], || "summary.csv round-trip".into())
}

// ---- equivalence ----

fn bits_equal(a: &StateVector, b: &StateVector) -> bool {
    a.as_slice().iter().zip(b.as_slice()).all(|(u, v)| u.to_bits() == v.to_bits())
}

/// PF, DMA over the single all-useful candidate, and TS with zero failure
/// probabilities give bit-identical estimates and particles over a whole run.
pub fn check_equivalence(scenario: u32, n: usize, seed: u64) -> Check {
    let model = model();
    let data = run_frames(scenario, seed);
    let only = CandidateModelSet::restricted(2, vec![UsefulnessVector::all_useful(2)]).unwrap();
    let start = prior_particles(n, seed);
    let (mut pf, mut dma, mut ts) = (
        start.clone(),
        DmaState::new(start.clone(), 1),
        TsState::new(start, 2),
    );
    let (mut r1, mut r2, mut r3) = (rng(seed), rng(seed), rng(seed));
    let pinned = FailureEstimator::Pinned(vec![0.0, 0.0]);
    for frame in &data.frames {
        let a = pf_step(pf, frame, &model, &mut r1).map_err(|e| e.to_string())?;
        let (next, b, _) = dma_step(dma, frame, &model, &only, &mut r2).map_err(|e| e.to_string())?;
        let c = ts_step(ts, frame, &model, &pinned, &mut r3).map_err(|e| e.to_string())?;
        let t = frame.time_index;
        ensure(bits_equal(&a.estimate, &b), || format!("DMA differs from PF at t={t}"))?;
        ensure(bits_equal(&a.estimate, &c.estimate), || format!("TS differs from PF at t={t}"))?;
        ensure(a.state == next.particles && a.state == c.state.particles, || {
            format!("particles differ at t={t}")
        })?;
        pf = a.state;
        dma = next;
        ts = c.state;
    }
    Ok(())
}
