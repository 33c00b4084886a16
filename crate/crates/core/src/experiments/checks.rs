use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{build_generator, train_structured_projector, ExperimentConfig};
use crate::error::{Error, Result};
use crate::generative::Generator;
use crate::tensor::{derive_seed, DenseVector, Rng};
use crate::theory::{
    check_generator_isometry, check_jl, check_operator_norm, check_recovery_bound, check_structured_isometry,
    required_m_generator, required_m_jl, required_m_structured, BoundConfig, IsometryConfig, IsometryReport, Slack,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    OperatorNorm,
    Jl,
    GeneratorIsometry,
    StructuredIsometry,
    RecoveryBound,
}

impl CheckKind {
    pub fn name(self) -> &'static str {
        match self {
            CheckKind::OperatorNorm => "operator-norm",
            CheckKind::Jl => "jl",
            CheckKind::GeneratorIsometry => "generator-isometry",
            CheckKind::StructuredIsometry => "structured-isometry",
            CheckKind::RecoveryBound => "recovery-bound",
        }
    }
}

/// One check's verdict: `passed ⇔ statistic ≤ threshold`, where the
/// statistic is the fraction of records marked `violated` in `records`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub kind: CheckKind,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
    pub records: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheorySummary {
    pub outcomes: Vec<CheckOutcome>,
}

impl TheorySummary {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for o in &self.outcomes {
            let _ = writeln!(
                s,
                "{} {} statistic={} threshold={} records={} {}",
                o.kind.name(),
                if o.passed { "PASS" } else { "FAIL" },
                o.statistic,
                o.threshold,
                o.records.file_name().and_then(|f| f.to_str()).unwrap_or_default(),
                o.detail
            );
        }
        let _ = writeln!(s, "overall {}", if self.all_passed() { "PASS" } else { "FAIL" });
        s
    }
}

fn write_records(path: &Path, records: impl IntoIterator<Item = serde_json::Value>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(f, "{r}")?;
    }
    f.flush()?;
    Ok(())
}

fn outcome(kind: CheckKind, statistic: f64, threshold: f64, detail: String, records: PathBuf) -> CheckOutcome {
    CheckOutcome {
        kind,
        statistic,
        threshold,
        passed: statistic <= threshold,
        detail,
        records,
    }
}

fn isometry_outcome(kind: CheckKind, m: usize, r: &IsometryReport, path: PathBuf) -> Result<CheckOutcome> {
    write_records(
        &path,
        r.draw_excess.iter().enumerate().map(|(i, &e)| {
            json!({ "draw": i, "excess": e, "slack": r.slack, "violated": e > r.slack })
        }),
    )?;
    let sweep = r.slack_sweep();
    let detail = format!(
        "m={m} draws={} pairs={} worst_distortion={:.4} slack={:.4e} fraction_at_slack[0,1x,2x]=[{},{},{}] delta={} se={:.4}",
        r.draws, r.pairs_tested, r.worst_distortion, r.slack, sweep[0].1, sweep[1].1, sweep[2].1, r.nominal_delta, r.standard_error
    );
    Ok(outcome(kind, r.violation_fraction, r.bound_delta, detail, path))
}

fn isometry_m(cfg: &ExperimentConfig, gen: &Generator, required: usize) -> Result<usize> {
    let m = cfg.theory.isometry_m.unwrap_or(required);
    if m > gen.n() {
        return Err(Error::Config(format!(
            "isometry check needs m = {m} > N = {}; lower theory.constant or set theory.isometry_m",
            gen.n()
        )));
    }
    Ok(m)
}

/// Run the configured checks; writes `theory_summary.txt` and one
/// `<check>.ndrec` record file per check into `cfg.out`.
pub fn run_theory(cfg: &ExperimentConfig) -> Result<TheorySummary> {
    let spec = &cfg.theory;
    if spec.checks.is_empty() {
        return Err(Error::Config("no checks selected".into()));
    }
    std::fs::create_dir_all(&cfg.out)?;
    let iso = IsometryConfig {
        epsilon: spec.epsilon,
        delta: spec.delta,
        num_pairs: spec.num_pairs,
        num_matrix_draws: spec.num_matrix_draws,
        slack: Slack::MedianFraction(spec.slack_fraction),
        seed: cfg.seed,
        constant: spec.constant,
    };
    let needs_gen = spec.checks.iter().any(|c| !matches!(c, CheckKind::OperatorNorm | CheckKind::Jl));
    let gen = if needs_gen { Some(build_generator(&cfg.generator)?) } else { None };
    let mut outcomes = Vec::with_capacity(spec.checks.len());
    for (i, &kind) in spec.checks.iter().enumerate() {
        let path = cfg.out.join(format!("{}.ndrec", kind.name()));
        let seed = derive_seed(cfg.seed, i as u64);
        let o = match kind {
            CheckKind::OperatorNorm => {
                let (n, m) = (spec.operator_norm_n, spec.operator_norm_m);
                let r = check_operator_norm(n, m, spec.operator_norm_draws, &mut Rng::new(seed))?;
                write_records(
                    &path,
                    r.sigmas.iter().enumerate().map(|(i, &s)| {
                        json!({ "draw": i, "sigma_max": s, "bound": r.bound, "violated": s > r.bound })
                    }),
                )?;
                let detail = format!(
                    "n={n} m={m} draws={} bound={:.6} max_sigma={:.6} probability_bound={:.3e} se={:.3e}",
                    r.draws, r.bound, r.max_sigma, r.probability_bound, r.standard_error
                );
                outcome(kind, r.violation_fraction, r.threshold, detail, path)
            }
            CheckKind::Jl => {
                let mut rng = Rng::new(seed);
                let points: Vec<DenseVector> = (0..spec.jl_points)
                    .map(|_| {
                        let v = DenseVector::new(rng.normal_vec(spec.jl_n, 1.0));
                        v.scaled(1.0 / v.norm())
                    })
                    .collect();
                let m = spec.jl_m.unwrap_or_else(|| required_m_jl(spec.jl_points, spec.epsilon, spec.delta));
                let r = check_jl(&points, m, &IsometryConfig { seed, ..iso })?;
                isometry_outcome(kind, m, &r, path)?
            }
            CheckKind::GeneratorIsometry => {
                let gen = gen.as_ref().expect("generator built");
                let m = isometry_m(cfg, gen, required_m_generator(gen, spec.epsilon, spec.delta, spec.constant))?;
                let r = check_generator_isometry(gen, m, &IsometryConfig { seed, ..iso })?;
                isometry_outcome(kind, m, &r, path)?
            }
            CheckKind::StructuredIsometry => {
                let gen = gen.as_ref().expect("generator built");
                let m = isometry_m(cfg, gen, required_m_structured(gen, spec.epsilon, spec.delta, spec.constant))?;
                let beta = gen.beta_hat.unwrap_or(0.0);
                let r = check_structured_isometry(gen, m, beta, &IsometryConfig { seed, ..iso })?;
                isometry_outcome(kind, m, &r, path)?
            }
            CheckKind::RecoveryBound => {
                let gen = gen.as_ref().expect("generator built");
                let proj = train_structured_projector(gen, &cfg.projector)?;
                let bcfg = BoundConfig {
                    epsilon: spec.epsilon,
                    delta: spec.delta,
                    slack: Slack::MedianFraction(spec.slack_fraction),
                    off_manifold: spec.off_manifold,
                    solver: cfg.solver.config(seed),
                    constant: spec.constant,
                    seed,
                    ..BoundConfig::default()
                };
                let r = check_recovery_bound(gen, &proj, spec.bound_m, spec.noise_scale, spec.bound_trials, &bcfg)?;
                let violated = |t: &crate::theory::TrialBound| !t.eq5.satisfied || t.eq6.is_some_and(|b| !b.satisfied);
                write_records(
                    &path,
                    r.trials.iter().map(|t| {
                        let mut v = serde_json::to_value(t).expect("plain data");
                        v["violated"] = json!(violated(t));
                        v
                    }),
                )?;
                let bad = r.trials.iter().filter(|t| violated(t)).count();
                let stat = if r.trials.is_empty() { 1.0 } else { bad as f64 / r.trials.len() as f64 };
                let detail = format!(
                    "m={} trials={} invalid={} beta_hat={:.4e} slack={:.4e} eq6_applies={} eq5_at_slack[0,1x,2x]=[{},{},{}]",
                    r.m,
                    r.trials.len(),
                    r.invalid,
                    r.beta_hat,
                    r.slack,
                    r.m >= r.whole_ball_threshold,
                    r.eq5_fraction_at(0.0).unwrap_or(0.0),
                    r.eq5_fraction_at(r.slack).unwrap_or(0.0),
                    r.eq5_fraction_at(2.0 * r.slack).unwrap_or(0.0),
                );
                outcome(kind, stat, spec.delta, detail, path)
            }
        };
        outcomes.push(o);
    }
    let summary = TheorySummary { outcomes };
    std::fs::write(cfg.out.join("theory_summary.txt"), summary.render())?;
    Ok(summary)
}
