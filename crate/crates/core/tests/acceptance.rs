//! One test per acceptance criterion. Each writes a `PASS`/`FAIL` line to
//! the real stdout (bypassing the harness capture) before asserting.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use fcsrg::experiments::{
    prepare_models, run_sweep, run_trial, sweep_csv, trial_seed, ExperimentConfig, Models, SolverKind,
};
use fcsrg::generative::{sample_latent, SampleMode};
use fcsrg::mlp::Loss;
use fcsrg::recovery::{csgm_gd_recover_with, fcsrg_recover, measure, GdOptions, SolverConfig};
use fcsrg::tensor::{ridge_solve, DenseVector, Rng, SensingMatrix};
use fcsrg::theory::{check_jl, check_operator_norm, check_recovery_bound, required_m_jl, BoundConfig, IsometryConfig, Slack};

fn report(criterion: &str, pass: bool, elapsed: Duration, detail: &str) {
    let line = format!(
        "ACCEPTANCE {} {criterion}: {detail} ({:.2}s)\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{criterion}: {detail}");
}

/// Default D=10, L=74 generator with its trained structured projector.
fn default_models() -> &'static Models {
    static MODELS: OnceLock<Models> = OnceLock::new();
    MODELS.get_or_init(|| prepare_models(&ExperimentConfig::default(), &[SolverKind::Fcsrg]).unwrap())
}

/// Two-sided exact sign test on `wins` vs `losses` (ties dropped).
fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.max(losses);
    // P(X ≥ k) for X ~ Bin(n, ½), summed in log space.
    let ln_choose = |n: usize, j: usize| -> f64 {
        (1..=j).map(|i| ((n - j + i) as f64).ln() - (i as f64).ln()).sum()
    };
    let tail: f64 = (k..=n).map(|j| (ln_choose(n, j) - n as f64 * std::f64::consts::LN_2).exp()).sum();
    (2.0 * tail).min(1.0)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) }
}

#[test]
fn woodbury_matches_direct_solve() {
    let start = Instant::now();
    let mut rng = Rng::new(0xA1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = 1 + rng.index(32);
        let n = m + rng.index(256 - m + 1);
        let rho = 10f64.powf(rng.uniform_range(-3.0, 3.0));
        let phi = SensingMatrix::standard(m, n, rng.next_u64()).unwrap();
        let b = rng.normal_vec(n, 1.0);
        let x = ridge_solve(&phi, rho, &b).unwrap();
        worst = worst.max(rel_err(&x, &direct_ridge(phi.matrix(), rho, &b)));
    }
    let t = start.elapsed();
    let pass = worst <= 1e-10 && t < Duration::from_secs(5);
    report("woodbury-oracle", pass, t, &format!("50 instances, worst relative error {worst:.3e}"));
}

#[test]
fn gradients_match_finite_differences() {
    let start = Instant::now();
    let (h, floor) = (1e-5, 1e-5);
    let (mut nets, mut worst) = (0, 0.0f64);
    for seed in 0..200u64 {
        if nets >= 40 {
            break;
        }
        let net = random_net(seed, 8, seed % 2 == 1);
        let mut rng = Rng::new(seed ^ 0xACC);
        let x = rng.normal_vec(net.input_dim(), 1.0);
        let t = random_target(&net, &mut rng);
        let cot = rng.normal_vec(net.output_dim(), 1.0);
        let fd_p = fd_param_grad(&net, &x, &t, h);
        let fd_x = fd_input_grad(&net, &x, &cot, h);
        // Gradients below the difference oracle's roundoff floor are not resolvable.
        if norm(&fd_p) <= floor || norm(&fd_x) <= floor {
            continue;
        }
        let analytic_p: Vec<f64> = net.grad_params(&x, &t, Loss::Mixed).unwrap().1.iter().collect();
        let analytic_x = net.grad_input(&x, &cot).unwrap();
        worst = worst.max(rel_err(&analytic_p, &fd_p)).max(rel_err(&analytic_x, &fd_x));
        nets += 1;
    }
    let t = start.elapsed();
    let pass = nets >= 20 && worst <= 1e-4 && t < Duration::from_secs(10);
    report("gradient-check", pass, t, &format!("{nets} nets, worst relative error {worst:.3e}"));
}

#[test]
fn linear_fixture_recovers_exactly() {
    let mut failures = Vec::new();
    let (mut worst_err, mut worst_gap, mut slowest) = (0.0f64, 0.0f64, Duration::ZERO);
    let start = Instant::now();
    for trial in 0..20u64 {
        let t0 = Instant::now();
        let fx = linear_fixture(200, 10, 100 + trial);
        let mut rng = Rng::new(trial);
        let z_star = sample_latent(fx.gen.layout(), &mut rng, SampleMode::Hard);
        let x_star = fx.gen.generate(&z_star).unwrap();
        let phi = SensingMatrix::standard(40, 200, rng.next_u64()).unwrap();
        let meas = measure(&phi, &x_star, 0.0, &mut rng).unwrap();
        let cfg = SolverConfig { max_iters: 50, ..SolverConfig::default() };
        let r = fcsrg_recover(&meas, &fx.gen, &fx.proj, &cfg).unwrap();
        let elapsed = t0.elapsed();
        let err = rel_err(&r.x_hat, &x_star);
        let b = phi.matrix().matmul(&fx.a).unwrap();
        let z_ls = least_squares(&b, &meas.y);
        let gap = rel_err(&r.z_hat.unwrap().flat(), &z_ls);
        worst_err = worst_err.max(err);
        worst_gap = worst_gap.max(gap);
        slowest = slowest.max(elapsed);
        if !(err <= 1e-2 && gap <= 1e-2 && r.iterations <= 50 && elapsed < Duration::from_secs(1)) {
            failures.push(trial);
        }
    }
    report(
        "linear-exact-recovery",
        failures.is_empty(),
        start.elapsed(),
        &format!(
            "20 trials, worst relative error {worst_err:.3e}, worst gap to latent least squares {worst_gap:.3e}, slowest trial {:.3}s, failing {failures:?}",
            slowest.as_secs_f64()
        ),
    );
}

#[test]
fn structured_latent_stability() {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let models = default_models();
    let (mut f_acc, mut c_acc) = (Vec::new(), Vec::new());
    for t in 0..100 {
        let seed = trial_seed(cfg.seed, 0xACCE, t);
        let (_, _, out) = run_trial(models, &cfg, 24, seed, 0.0, &[SolverKind::Fcsrg, SolverKind::Csgm]).unwrap();
        f_acc.push(out[0].2.unwrap());
        c_acc.push(out[1].2.unwrap());
    }
    let wins = f_acc.iter().zip(&c_acc).filter(|(f, c)| f > c).count();
    let losses = f_acc.iter().zip(&c_acc).filter(|(f, c)| f < c).count();
    let p = sign_test_p(wins, losses);
    let mean_f = f_acc.iter().sum::<f64>() / 100.0;
    let mean_c = c_acc.iter().sum::<f64>() / 100.0;
    let t = start.elapsed();
    let pass = mean_f >= 0.8 && wins > losses && p < 0.05 && t < Duration::from_secs(300);
    report(
        "structured-stability",
        pass,
        t,
        &format!(
            "M=24, F-CSRG accuracy {mean_f:.3} vs CSGM {mean_c:.3}, medians {:.3} vs {:.3}, paired wins/losses {wins}/{losses}, sign test p={p:.2e}",
            median(&f_acc),
            median(&c_acc)
        ),
    );
}

#[test]
fn recovery_bound_holds_in_codeword_regime() {
    let start = Instant::now();
    let models = default_models();
    let cfg = BoundConfig { seed: 0xE05, ..BoundConfig::default() };
    let r = check_recovery_bound(&models.generator, models.projector.as_ref().unwrap(), 24, 0.0, 100, &cfg).unwrap();
    let frac = r.eq5_satisfied_fraction().unwrap_or(0.0);
    let t = start.elapsed();
    let pass = r.trials.len() == 100 && frac >= 0.9 && t < Duration::from_secs(600);
    report(
        "recovery-bound",
        pass,
        t,
        &format!("M=24, {} trials ({} invalid), satisfied fraction {frac:.2}, slack {:.3e}", r.trials.len(), r.invalid, r.slack),
    );
}

#[test]
fn operator_norm_has_no_violations() {
    let start = Instant::now();
    let r = check_operator_norm(100, 20, 1000, &mut Rng::new(0x4E)).unwrap();
    // Independent spectral norm of one regenerated draw.
    let phi = SensingMatrix::standard(20, 100, 0x4F).unwrap();
    let sigma = sigma_max(phi.matrix());
    let t = start.elapsed();
    let pass = r.violation_fraction == 0.0 && r.max_sigma <= r.bound && sigma <= r.bound && t < Duration::from_secs(60);
    report(
        "operator-norm",
        pass,
        t,
        &format!("1000 draws, max sigma {:.4} vs bound {:.4}, violations {}", r.max_sigma, r.bound, r.violation_fraction),
    );
}

#[test]
fn jl_fixture() {
    let start = Instant::now();
    // ⌈(8/0.09)·ln 200⌉ = ⌈470.96⌉ = 471; the fixture fixes m = 472.
    let formula = required_m_jl(10, 0.3, 0.1);
    let m = 472;
    let mut rng = Rng::new(0x1A);
    let points: Vec<DenseVector> = (0..10)
        .map(|_| {
            let v = DenseVector::new(rng.normal_vec(512, 1.0));
            v.scaled(1.0 / v.norm())
        })
        .collect();
    let cfg = IsometryConfig { num_matrix_draws: 500, slack: Slack::Absolute(0.0), seed: 0x1B, ..IsometryConfig::default() };
    let r = check_jl(&points, m, &cfg).unwrap();
    let t = start.elapsed();
    let pass = formula == 471 && r.violation_fraction <= 0.1 && t < Duration::from_secs(60);
    report("jl-lemma", pass, t, &format!("Q=10, m={m} (formula {formula}), 500 draws, violation fraction {}", r.violation_fraction));
}

#[test]
fn fcsrg_is_faster_at_matched_error() {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let models = default_models();
    let gen = &models.generator;
    let proj = models.projector.as_ref().unwrap();
    let mut ratios = Vec::new();
    let mut unmatched = 0;
    for t in 0..20 {
        let seed = trial_seed(cfg.seed, 0x5EED, t);
        let mut rng = Rng::new(seed);
        let z = sample_latent(gen.layout(), &mut rng, SampleMode::Hard);
        let x_star = gen.generate(&z).unwrap();
        let phi = SensingMatrix::standard(24, gen.n(), rng.next_u64()).unwrap();
        let meas = measure(&phi, &x_star, 0.0, &mut rng).unwrap();
        let scfg = cfg.solver.config(seed);
        let f = fcsrg_recover(&meas, gen, proj, &scfg).unwrap();
        let target = f.x_hat.distance(&x_star);
        // CSGM stops as soon as it is as close to x* as F-CSRG ended.
        let stop = |gz: &DenseVector| gz.distance(&x_star) <= target;
        let c = csgm_gd_recover_with(&meas, gen, &scfg, GdOptions { early_stop: Some(&stop), ..Default::default() })
            .unwrap();
        if c.x_hat.distance(&x_star) > target {
            unmatched += 1;
        }
        ratios.push(f.wall_time / c.wall_time);
    }
    let med = median(&ratios);
    let t = start.elapsed();
    let pass = med <= 0.2 && t < Duration::from_secs(300);
    report(
        "speed",
        pass,
        t,
        &format!("20 paired instances, median time ratio {med:.4}, CSGM never matched F-CSRG on {unmatched}"),
    );
}

/// `sweep.csv` with the wall-time column removed.
fn without_timing(csv: &str) -> String {
    csv.lines()
        .map(|l| if l.starts_with('#') { l } else { l.rsplit_once(',').map_or(l, |(h, _)| h) })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn sweep_trend_and_determinism() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let run = |dir: &tempfile::TempDir| {
        let start = Instant::now();
        let mut cfg = ExperimentConfig::default();
        cfg.out = dir.path().to_path_buf();
        let report = run_sweep(&cfg).unwrap();
        (report, start.elapsed(), cfg)
    };

    let (first, elapsed, cfg) = run(&dirs[0]);
    let mut problems = Vec::new();
    for &solver in &cfg.sweep.solvers {
        for w in cfg.sweep.ratios.windows(2) {
            let (a, b) = (first.cell(w[0], solver).unwrap(), first.cell(w[1], solver).unwrap());
            let tol = 3.0 * a.se_error.hypot(b.se_error);
            if b.mean_error < a.mean_error - tol {
                problems.push(format!("{} {}→{}: {:.4} → {:.4}", solver.name(), w[0], w[1], a.mean_error, b.mean_error));
            }
        }
    }
    let mut accs = Vec::new();
    for &ratio in cfg.sweep.ratios.iter().filter(|&&r| r >= 32.0) {
        let s = first.cell(ratio, SolverKind::Fcsrg).unwrap().mean_accuracy.unwrap();
        let u = first.cell(ratio, SolverKind::FcsrgUnstructured).unwrap().mean_accuracy.unwrap();
        if s <= u {
            problems.push(format!("ratio {ratio}: structured accuracy {s:.3} ≤ unstructured {u:.3}"));
        }
        accs.push(format!("{ratio}× {s:.3} vs {u:.3}"));
    }
    let on_disk = std::fs::read_to_string(dirs[0].path().join("sweep.csv")).unwrap();
    assert_eq!(on_disk, sweep_csv(&first.rows));
    report(
        "trend",
        problems.is_empty(),
        elapsed,
        &format!("ratios 4..64, structured vs unstructured accuracy [{}], violations {problems:?}", accs.join(", ")),
    );

    let (_, elapsed, _) = run(&dirs[1]);
    let second = std::fs::read_to_string(dirs[1].path().join("sweep.csv")).unwrap();
    let same = without_timing(&on_disk) == without_timing(&second);
    report("determinism", same, elapsed, &format!("{} CSV lines compared without timing", on_disk.lines().count()));
}

#[test]
fn sign_test_reference_values() {
    // 5 of 5 wins: 2·(1/32).
    assert!((sign_test_p(5, 0) - 0.0625).abs() < 1e-12);
    assert!((sign_test_p(3, 3) - 1.0).abs() < 1e-12);
    // 24 vs 5: 2·Σ_{j≥24} C(29,j)/2^29.
    assert!((sign_test_p(24, 5) - 0.000_546_1).abs() < 1e-6);
}

