//! Acceptance suite. Each test prints one PASS/FAIL line and then asserts.
//!
//! Tolerances are pinned as constants next to each check.

use std::io::Write;
use std::time::Instant;

use battcal::cell::{
    simulate, CellParameters, CellState, CurrentProfile, Discretization, OcvSet, Parameter, SimOptions, SpmeModel,
};
use battcal::estimator::{kog_value, log_likelihood, ls_value, profiled_sigma2_f};
use battcal::gp::{gpr_predict, FeatureMatrix, KernelHyperparameters};
use battcal::pso::{pso_minimize, SwarmConfig};
use battcal::scenario::{
    build_profile, run_experiment, study_profiles, truth_generate, ExperimentConfig, ExperimentReport, GroupSpec,
    ProfileSpec, TrialSpec, TruthSpec,
};
use battcal::estimator::Objective;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight to stderr, which libtest does not capture, so the lines show in a
/// plain `cargo test` run.
fn say(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn verdict(n: usize, name: &str, pass: bool, detail: &str, start: Instant) {
    let tag = if pass { "PASS" } else { "FAIL" };
    say(&format!("criterion {n} {tag} {name}: {detail} ({:.1} s)", start.elapsed().as_secs_f64()));
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * (0.05 * n as f64)
}

/// Gaussian log density with covariance `s2·phi`, written out from scratch.
fn oracle_log_likelihood(eps: &[f64], phi: &DMatrix<f64>, s2: f64) -> f64 {
    let n = eps.len();
    let k = phi * s2;
    let chol = k.clone().cholesky().expect("spd");
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let e = nalgebra::DVector::from_column_slice(eps);
    let quad = e.dot(&chol.solve(&e));
    -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det - 0.5 * quad
}

#[test]
fn criterion_1_likelihood_identity() {
    const IDENTITY_TOL: f64 = 1e-10;
    const GRID_POINTS: usize = 1000;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut grid_violations = 0;
    for _ in 0..100 {
        let n = rng.gen_range(3..=30);
        let phi = random_spd(n, &mut rng);
        let eps: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.05..0.05)).collect();
        let s2 = profiled_sigma2_f(&eps, &phi).unwrap();
        let direct = oracle_log_likelihood(&eps, &phi, s2);
        let j = kog_value(&eps, &phi).unwrap();
        let closed = -0.5 * n as f64 * (1.0 + (2.0 * std::f64::consts::PI * j / n as f64).ln());
        worst = worst.max((direct - closed).abs());

        let best = log_likelihood(&eps, &phi, s2).unwrap();
        for g in 0..GRID_POINTS {
            // Six decades either side of the profiled value.
            let s = s2 * 10f64.powf(-6.0 + 12.0 * g as f64 / (GRID_POINTS - 1) as f64);
            if log_likelihood(&eps, &phi, s).unwrap() > best {
                grid_violations += 1;
            }
        }
    }
    let pass = worst < IDENTITY_TOL && grid_violations == 0;
    verdict(
        1,
        "likelihood identity",
        pass,
        &format!("max |diff| {worst:.2e} (tol {IDENTITY_TOL:.0e}), grid points beating the profiled scale: {grid_violations}"),
        start,
    );
}

#[test]
fn criterion_2_ls_reduction() {
    const TOL: f64 = 1e-12;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 300;
    let eps: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.05..0.05)).collect();
    let ls = ls_value(&eps);
    let mut worst = 0.0f64;
    for a in [0.1, 1.0, 10.0] {
        let phi = DMatrix::identity(n, n) * a;
        let kog = kog_value(&eps, &phi).unwrap();
        worst = worst.max((kog - ls).abs());
    }
    verdict(2, "LS reduction", worst < TOL, &format!("max |J_kog - J_ls| {worst:.2e} (tol {TOL:.0e})"), start);
}

#[test]
fn criterion_3_gp_interpolation() {
    const TOL: f64 = 1e-6;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<[f64; 4]> = (0..50).map(|_| std::array::from_fn(|_| rng.gen_range(-2.0..2.0))).collect();
    let x = FeatureMatrix::from_rows(&rows).unwrap();
    let y: Vec<f64> = rows.iter().map(|r| 0.02 * (r[0] + 0.5 * r[1]).sin() - 0.01 * r[2] * r[3]).collect();
    let hp = KernelHyperparameters::new(1e-4, vec![1.0; 4], 0.0).unwrap();
    let post = gpr_predict(&x, &y, &x, &hp).unwrap();
    let worst = post.mean.iter().zip(&y).map(|(m, t)| (m - t).abs()).fold(0.0, f64::max);
    verdict(3, "GP interpolation", worst < TOL, &format!("max |mean - y| {worst:.2e} V (tol {TOL:.0e})"), start);
}

#[test]
fn criterion_4_conservation() {
    const SOC_TOL: f64 = 1e-6;
    const INVENTORY_TOL: f64 = 1e-8;
    let start = Instant::now();
    let params = CellParameters::default();
    let ocv = OcvSet::default();
    let current = params.c_rate_current(0.5);
    let steps = 7000;
    let profile = CurrentProfile::constant(current, 1.0, steps).unwrap();
    let traj = simulate(&profile, &params, &ocv, 1.0, &SimOptions::uncut()).unwrap();
    let q = params.anode_capacity_ah();
    let soc_err = traj
        .records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let expect = 1.0 - current * (k + 1) as f64 / (3600.0 * q);
            ((r.soc_bulk - expect) / expect).abs()
        })
        .fold(0.0, f64::max);

    let disc = Discretization::default();
    let mut model = SpmeModel::new(&params, &ocv, disc).unwrap();
    let mut state = CellState::equilibrium(&params, disc, 1.0);
    let m0 = model.electrolyte_inventory(&state);
    let mut inv_err = 0.0f64;
    for _ in 0..steps {
        model.step(&mut state, current, 1.0).unwrap();
        inv_err = inv_err.max((model.electrolyte_inventory(&state) / m0 - 1.0).abs());
    }
    let pass = soc_err < SOC_TOL && inv_err < INVENTORY_TOL;
    verdict(
        4,
        "conservation",
        pass,
        &format!(
            "bulk SOC rel err {soc_err:.2e} (tol {SOC_TOL:.0e}), electrolyte rel drift {inv_err:.2e} (tol {INVENTORY_TOL:.0e})"
        ),
        start,
    );
}

fn mean_abs_error(report: &ExperimentReport, objective: Objective) -> f64 {
    let rows: Vec<f64> =
        report.parameters.iter().filter(|r| r.objective == objective).map(|r| r.final_error_pct.abs()).collect();
    rows.iter().sum::<f64>() / rows.len() as f64
}

fn rmse_on(report: &ExperimentReport, objective: Objective, profile: &str) -> f64 {
    report.rmse.iter().find(|r| r.objective == objective && r.profile == profile).unwrap().rmse_truth
}

#[test]
fn criterion_5_bias_separation() {
    const MIN_REDUCTION: f64 = 0.20;
    let start = Instant::now();
    let truth = TruthSpec::default();
    let fast = study_profiles()[1];
    let mut trial = TrialSpec::default();
    trial.groups.truncate(1);
    trial.iterations = 1;
    trial.evaluation_profiles = vec![fast];
    let mut passes = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        trial.seed = seed;
        let report = run_experiment(&truth, &trial, 1).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        let (kog_err, ls_err) = (mean_abs_error(&report, Objective::Kog), mean_abs_error(&report, Objective::Ls));
        let name = fast.to_string();
        let (kog_rmse, ls_rmse) = (rmse_on(&report, Objective::Kog, &name), rmse_on(&report, Objective::Ls, &name));
        let reduction = 1.0 - kog_rmse / ls_rmse;
        let ok = kog_err <= ls_err && reduction >= MIN_REDUCTION;
        passes += ok as usize;
        lines.push(format!(
            "seed {seed}: |err| kog {kog_err:.3}% ls {ls_err:.3}%, 5C rmse kog {:.2} mV ls {:.2} mV, reduction {:.1}% [{}]",
            kog_rmse * 1e3,
            ls_rmse * 1e3,
            reduction * 100.0,
            if ok { "ok" } else { "miss" }
        ));
    }
    for l in &lines {
        say(&format!("  {l}"));
    }
    verdict(
        5,
        "bias separation",
        passes >= 2,
        &format!("{passes}/3 seeds pass (needs 2; reduction threshold {:.0}%)", MIN_REDUCTION * 100.0),
        start,
    );
}

#[test]
fn criterion_6_self_consistency() {
    const TIGHT_PCT: f64 = 2.0;
    const LOOSE_PCT: f64 = 15.0;
    let start = Instant::now();
    let truth = TruthSpec::exact(CellParameters::default());
    let trial = TrialSpec { evaluation_profiles: vec![], ..TrialSpec::default() };
    let report = run_experiment(&truth, &trial, 1).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    let mut pass = true;
    let mut worst = [0.0f64; 3];
    for r in &report.parameters {
        let limit = if r.group == 2 { LOOSE_PCT } else { TIGHT_PCT };
        worst[r.group] = worst[r.group].max(r.final_error_pct.abs());
        say(&format!("  {} {} group {}: {:+.3}%", r.objective, r.parameter, r.group + 1, r.final_error_pct));
        pass &= r.final_error_pct.abs() < limit;
    }
    verdict(
        6,
        "self-consistency",
        pass && report.parameters.len() == 12,
        &format!(
            "worst |err| by group {:.3}% {:.3}% {:.3}% (limits {TIGHT_PCT}%, {TIGHT_PCT}%, {LOOSE_PCT}%)",
            worst[0], worst[1], worst[2]
        ),
        start,
    );
}

#[test]
fn criterion_7_pso_regression() {
    const SPHERE_TOL: f64 = 1e-4;
    const ROSENBROCK_TOL: f64 = 1e-2;
    let start = Instant::now();
    let cfg = SwarmConfig::default();
    let sphere = pso_minimize(|x: &[f64]| Some(x.iter().map(|v| v * v).sum()), &[(-5.0, 5.0); 5], &cfg).unwrap();
    let rosen = pso_minimize(
        |x: &[f64]| Some((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)),
        &[(-2.0, 2.0); 2],
        &cfg,
    )
    .unwrap();
    let pass = sphere.best_value < SPHERE_TOL && rosen.best_value < ROSENBROCK_TOL;
    verdict(
        7,
        "PSO regression",
        pass,
        &format!(
            "sphere-5D {:.2e} (tol {SPHERE_TOL:.0e}), Rosenbrock-2D {:.2e} (tol {ROSENBROCK_TOL:.0e})",
            sphere.best_value, rosen.best_value
        ),
        start,
    );
}

fn report_bytes(r: &ExperimentReport) -> Vec<u8> {
    let mut out = Vec::new();
    r.write_parameters_csv(&mut out).unwrap();
    r.write_rmse_csv(&mut out).unwrap();
    r.write_seeds_csv(&mut out).unwrap();
    out.extend_from_slice(r.render().as_bytes());
    out
}

#[test]
fn criterion_8_determinism() {
    let start = Instant::now();
    let params = CellParameters::default();
    let ocv = OcvSet::default();
    let spec = ProfileSpec::pulse(1.0, 1.0 / 60.0, 600.0, 1.0);
    let profile = build_profile(&spec, params.cell.nominal_capacity_ah).unwrap();
    let mut truth = TruthSpec::default();
    truth.noise.seed = 42;
    let dataset = |t: &TruthSpec| {
        let mut out = Vec::new();
        truth_generate(t, &profile, 1.0, &ocv).unwrap().write_csv(&mut out).unwrap();
        out
    };
    let gen_same = dataset(&truth) == dataset(&truth);

    // Small but complete experiment: both objectives, two groups, two trials.
    let config = ExperimentConfig {
        n_trials: 2,
        truth: truth.clone(),
        trial: TrialSpec {
            groups: vec![
                GroupSpec { targets: vec![Parameter::EpsSN, Parameter::EpsSP], profile: ProfileSpec::cc(1.0, 600.0, 1.0) },
                GroupSpec { targets: vec![Parameter::DSN, Parameter::DSP], profile: ProfileSpec::cc(5.0, 300.0, 1.0) },
            ],
            iterations: 1,
            downsample: 60,
            evaluation_profiles: vec![ProfileSpec::cc(2.0, 300.0, 1.0)],
            swarm: SwarmConfig { particles: 8, iterations: 6, seed: 7, ..Default::default() },
            ..TrialSpec::default()
        },
    };
    let first = run_experiment(&config.truth, &config.trial, config.n_trials).unwrap();
    // Replay from the serialized config, as a user would from the logged file.
    let replayed: ExperimentConfig = toml::from_str(&toml::to_string(&config).unwrap()).unwrap();
    let second = run_experiment(&replayed.truth, &replayed.trial, replayed.n_trials).unwrap();
    let exp_same = report_bytes(&first) == report_bytes(&second);
    verdict(
        8,
        "determinism",
        gen_same && exp_same,
        &format!("generate replay identical: {gen_same}, experiment replay identical: {exp_same}"),
        start,
    );
}
