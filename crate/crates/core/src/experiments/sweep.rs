use std::fmt::Write as _;
use std::path::Path;

use super::{prepare_models, ExperimentConfig, Models, SolverKind};
use crate::error::{Error, Result};
use crate::generative::{sample_latent, LatentVector, SampleMode};
use crate::image::dump_image;
use crate::recovery::{
    codeword_accuracy, csgm_gd_recover, fcsrg_recover, measure, pinv_recover, pnp_dae_recover, reconstruction_error,
    RecoveryResult,
};
use crate::tensor::{derive_seed, DenseVector, Rng, SensingMatrix};

/// Bumped whenever a column is added, removed or reordered.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub ratio: f64,
    pub m: usize,
    pub trial: usize,
    pub solver: SolverKind,
    /// Seed of the trial; drives `z*`, `Φ`, the noise and CSGM restarts.
    pub seed: u64,
    pub phi_seed: u64,
    pub error: f64,
    pub relative_error: f64,
    /// Codeword accuracy; `None` for solvers without a latent estimate.
    pub accuracy: Option<f64>,
    pub iterations: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub ratio: f64,
    pub m: usize,
    pub solver: SolverKind,
    pub trials: usize,
    pub mean_error: f64,
    pub se_error: f64,
    pub median_error: f64,
    pub mean_accuracy: Option<f64>,
    pub se_accuracy: Option<f64>,
    pub median_accuracy: Option<f64>,
    pub mean_wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<TrialRow>,
    pub summary: Vec<SummaryRow>,
}

impl SweepReport {
    pub fn cell(&self, ratio: f64, solver: SolverKind) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.ratio == ratio && r.solver == solver)
    }
}

/// `M = round(N / ratio)`, kept in `1..=N`.
pub fn measurements_for(n: usize, ratio: f64) -> usize {
    ((n as f64 / ratio).round() as usize).clamp(1, n)
}

pub fn trial_seed(seed: u64, ratio_index: usize, trial: usize) -> u64 {
    derive_seed(seed, ((ratio_index as u64) << 32) | trial as u64)
}

/// One trial: draw `z*`, `Φ` and the noise from `seed`, then run every
/// solver on the same measurement.
pub fn run_trial(
    models: &Models,
    cfg: &ExperimentConfig,
    m: usize,
    seed: u64,
    noise_scale: f64,
    solvers: &[SolverKind],
) -> Result<(DenseVector, u64, Vec<(SolverKind, RecoveryResult, Option<f64>)>)> {
    let gen = &models.generator;
    let layout = gen.layout();
    let n = gen.n();
    let mut rng = Rng::new(seed);
    let z_star = sample_latent(layout, &mut rng, SampleMode::Hard);
    let x_star = gen.generate(&z_star)?;
    let phi_seed = rng.next_u64();
    let phi = SensingMatrix::standard(m, n, phi_seed)?;
    let meas = measure(&phi, &x_star, noise_scale, &mut rng)?;
    let solver_cfg = cfg.solver.config(seed);
    let scored = !layout.categorical_groups().is_empty();
    let accuracy = |z: &LatentVector| -> Result<Option<f64>> {
        if !scored {
            return Ok(None);
        }
        let z = LatentVector::from_flat(layout, &z.flat())?;
        codeword_accuracy(&z, &z_star.c, layout).map(Some)
    };
    let missing = |what: &str| Error::Config(format!("solver needs a {what} that was not prepared"));
    let mut out = Vec::with_capacity(solvers.len());
    for &kind in solvers {
        let r = match kind {
            SolverKind::Pinv => pinv_recover(&meas)?,
            SolverKind::Pnp => pnp_dae_recover(&meas, models.denoiser.as_ref().ok_or_else(|| missing("denoiser"))?, &solver_cfg)?,
            SolverKind::Csgm => csgm_gd_recover(&meas, gen, &solver_cfg)?,
            SolverKind::Fcsrg => {
                fcsrg_recover(&meas, gen, models.projector.as_ref().ok_or_else(|| missing("projector"))?, &solver_cfg)?
            }
            SolverKind::FcsrgUnstructured => {
                let (g, p) = models.unstructured.as_ref().ok_or_else(|| missing("unstructured projector"))?;
                fcsrg_recover(&meas, g, p, &solver_cfg)?
            }
        };
        let acc = match &r.z_hat {
            Some(z) => accuracy(z)?,
            None => None,
        };
        out.push((kind, r, acc));
    }
    Ok((x_star, phi_seed, out))
}

fn mean_se_median(xs: &[f64]) -> (f64, f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    let median = if s.len() % 2 == 1 { s[mid] } else { 0.5 * (s[mid - 1] + s[mid]) };
    (mean, (var / k).sqrt(), median)
}

fn summarize(rows: &[TrialRow], ratios: &[f64], solvers: &[SolverKind]) -> Vec<SummaryRow> {
    let mut out = Vec::with_capacity(ratios.len() * solvers.len());
    for &ratio in ratios {
        for &solver in solvers {
            let cell: Vec<&TrialRow> = rows.iter().filter(|r| r.ratio == ratio && r.solver == solver).collect();
            let errors: Vec<f64> = cell.iter().map(|r| r.error).collect();
            let (mean_error, se_error, median_error) = mean_se_median(&errors);
            let accs: Vec<f64> = cell.iter().filter_map(|r| r.accuracy).collect();
            let acc = (!accs.is_empty()).then(|| mean_se_median(&accs));
            out.push(SummaryRow {
                ratio,
                m: cell[0].m,
                solver,
                trials: cell.len(),
                mean_error,
                se_error,
                median_error,
                mean_accuracy: acc.map(|a| a.0),
                se_accuracy: acc.map(|a| a.1),
                median_accuracy: acc.map(|a| a.2),
                mean_wall_time: cell.iter().map(|r| r.wall_time).sum::<f64>() / cell.len() as f64,
            });
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Per-trial CSV. Wall time is always the last column.
pub fn sweep_csv(rows: &[TrialRow]) -> String {
    let mut s = format!("# fcsrg sweep schema {SCHEMA_VERSION}\n");
    s.push_str("ratio,m,trial,solver,seed,phi_seed,error,relative_error,accuracy,iterations,wall_time_s\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.ratio,
            r.m,
            r.trial,
            r.solver.name(),
            r.seed,
            r.phi_seed,
            r.error,
            r.relative_error,
            opt(r.accuracy),
            r.iterations,
            r.wall_time
        );
    }
    s
}

/// Per-cell CSV. Wall time is always the last column.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = format!("# fcsrg sweep summary schema {SCHEMA_VERSION}\n");
    s.push_str(
        "ratio,m,solver,trials,mean_error,se_error,median_error,mean_accuracy,se_accuracy,median_accuracy,mean_wall_time_s\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.ratio,
            r.m,
            r.solver.name(),
            r.trials,
            r.mean_error,
            r.se_error,
            r.median_error,
            opt(r.mean_accuracy),
            opt(r.se_accuracy),
            opt(r.median_accuracy),
            r.mean_wall_time
        );
    }
    s
}

/// Train what the solver list needs, then run the sweep.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let models = prepare_models(cfg, &cfg.sweep.solvers)?;
    run_sweep_with(cfg, &models)
}

/// Sweep with prepared models. Writes `sweep.csv`, `sweep_summary.csv` and
/// optional PGM dumps into `cfg.out`.
pub fn run_sweep_with(cfg: &ExperimentConfig, models: &Models) -> Result<SweepReport> {
    let spec = &cfg.sweep;
    if spec.solvers.is_empty() {
        return Err(Error::Config("sweep.solvers is empty".into()));
    }
    let n = models.generator.n();
    let dump = spec.dump_images && spec.image_width * spec.image_height == n;
    if spec.dump_images && !dump {
        return Err(Error::Config(format!(
            "image_width × image_height = {} does not match N = {n}",
            spec.image_width * spec.image_height
        )));
    }
    std::fs::create_dir_all(&cfg.out)?;
    let mut rows = Vec::with_capacity(spec.ratios.len() * spec.trials * spec.solvers.len());
    for (ri, &ratio) in spec.ratios.iter().enumerate() {
        let m = measurements_for(n, ratio);
        for t in 0..spec.trials {
            let seed = trial_seed(cfg.seed, ri, t);
            let (x_star, phi_seed, results) = run_trial(models, cfg, m, seed, spec.noise_scale, &spec.solvers)?;
            if dump && t == 0 {
                dump_image(&x_star, spec.image_width, spec.image_height, cfg.out.join(format!("x_star_r{ratio}.pgm")))?;
            }
            for (solver, r, _) in &results {
                if dump && t == 0 {
                    let file = format!("x_hat_r{ratio}_{}.pgm", solver.name());
                    dump_image(&r.x_hat, spec.image_width, spec.image_height, cfg.out.join(file))?;
                }
            }
            rows.extend(trial_rows(ratio, m, t, seed, &x_star, phi_seed, results)?);
        }
    }
    let summary = summarize(&rows, &spec.ratios, &spec.solvers);
    write_atomic(&cfg.out.join("sweep.csv"), &sweep_csv(&rows))?;
    write_atomic(&cfg.out.join("sweep_summary.csv"), &summary_csv(&summary))?;
    Ok(SweepReport { rows, summary })
}

fn trial_rows(
    ratio: f64,
    m: usize,
    trial: usize,
    seed: u64,
    x_star: &DenseVector,
    phi_seed: u64,
    results: Vec<(SolverKind, RecoveryResult, Option<f64>)>,
) -> Result<Vec<TrialRow>> {
    let scale = x_star.norm();
    results
        .into_iter()
        .map(|(solver, r, accuracy)| {
            let error = reconstruction_error(&r.x_hat, x_star)?;
            Ok(TrialRow {
                ratio,
                m,
                trial,
                solver,
                seed,
                phi_seed,
                error,
                relative_error: if scale > 0.0 { error / scale } else { error },
                accuracy,
                iterations: r.iterations,
                wall_time: r.wall_time,
            })
        })
        .collect()
}

/// Replay one trial from `recover.seed` and `recover.m`, which are the
/// `seed` and `m` columns of a sweep row. Writes `recover_one.csv` in the
/// sweep schema plus optional `x_star.pgm` / `x_hat_<solver>.pgm`.
pub fn run_recover_one(cfg: &ExperimentConfig, models: &Models) -> Result<Vec<TrialRow>> {
    let spec = &cfg.recover;
    if spec.solvers.is_empty() {
        return Err(Error::Config("recover.solvers is empty".into()));
    }
    let n = models.generator.n();
    if spec.m == 0 || spec.m > n {
        return Err(Error::Config(format!("recover.m must be in 1..={n}, got {}", spec.m)));
    }
    let (w, h) = (cfg.sweep.image_width, cfg.sweep.image_height);
    if spec.dump_images && w * h != n {
        return Err(Error::Config(format!("image_width × image_height = {} does not match N = {n}", w * h)));
    }
    std::fs::create_dir_all(&cfg.out)?;
    let (x_star, phi_seed, results) = run_trial(models, cfg, spec.m, spec.seed, spec.noise_scale, &spec.solvers)?;
    if spec.dump_images {
        dump_image(&x_star, w, h, cfg.out.join("x_star.pgm"))?;
        for (solver, r, _) in &results {
            dump_image(&r.x_hat, w, h, cfg.out.join(format!("x_hat_{}.pgm", solver.name())))?;
        }
    }
    let rows = trial_rows(n as f64 / spec.m as f64, spec.m, 0, spec.seed, &x_star, phi_seed, results)?;
    write_atomic(&cfg.out.join("recover_one.csv"), &sweep_csv(&rows))?;
    Ok(rows)
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}
