use std::time::Instant;

use super::{check_finite, Measurement, RecoveryResult, SolverConfig};
use crate::error::{Error, Result};
use crate::generative::{sample_latent, Generator, LatentLayout, LatentVector, SampleMode};
use crate::mlp::MlpNetwork;
use crate::tensor::{derive_seed, pseudo_inverse_lsq, DenseVector, RidgeSolver, Rng};

/// Halvings tried before a CSGM run is declared stalled.
const MAX_HALVINGS: usize = 60;

/// Extra controls for [`csgm_gd_recover_with`].
#[derive(Default)]
pub struct GdOptions<'a> {
    /// Replaces the first random initialization.
    pub init: Option<LatentVector>,
    /// Checked on `G(z)` after every accepted step; returning `true` ends
    /// the whole solve with the current iterate.
    pub early_stop: Option<&'a dyn Fn(&DenseVector) -> bool>,
    /// Number of random initializations, overriding `cfg.restarts`.
    pub runs: Option<usize>,
}

/// Radial projection of `c` onto `B(r_c)` and `v` onto `B(r_v)`.
fn project_balls(z: &mut LatentVector, layout: &LatentLayout) {
    z.c.project_to_ball(layout.r_c());
    z.v.project_to_ball(layout.r_v());
}

struct Objective<'a> {
    meas: &'a Measurement,
    gen: &'a Generator,
    lambda: f64,
}

impl Objective<'_> {
    /// `(‖ΦG(z) − y‖² + λ‖z‖², G(z), ΦG(z) − y)`
    fn eval(&self, z: &[f64]) -> Result<(f64, DenseVector, DenseVector)> {
        let gz = self.gen.generate_flat(z)?;
        let r = self.meas.phi.apply(&gz)?.sub(&self.meas.y);
        let f = r.norm_sq() + self.lambda * crate::tensor::dot(z, z);
        Ok((f, gz, r))
    }

    fn grad(&self, z: &[f64], r: &DenseVector) -> Result<DenseVector> {
        let cot = self.meas.phi.apply_t(r)?.scaled(2.0);
        let mut g = self.gen.net().grad_input(z, &cot)?;
        g.axpy(2.0 * self.lambda, z);
        Ok(g)
    }
}

/// Projected gradient descent on `‖y − ΦG(z)‖² + λ‖z‖²` over the latent
/// balls, best of several random starts.
pub fn csgm_gd_recover(meas: &Measurement, gen: &Generator, cfg: &SolverConfig) -> Result<RecoveryResult> {
    csgm_gd_recover_with(meas, gen, cfg, GdOptions::default())
}

pub fn csgm_gd_recover_with(
    meas: &Measurement,
    gen: &Generator,
    cfg: &SolverConfig,
    opts: GdOptions<'_>,
) -> Result<RecoveryResult> {
    cfg.validate()?;
    if gen.n() != meas.phi.n() {
        return Err(Error::dim("generator output vs signal dimension", meas.phi.n(), gen.n()));
    }
    let start = Instant::now();
    let layout = gen.layout();
    let obj = Objective {
        meas,
        gen,
        lambda: cfg.lambda,
    };
    let runs = opts.runs.unwrap_or(cfg.restarts).max(1);
    let mut best: Option<(f64, LatentVector, DenseVector, usize, Vec<f64>, Vec<f64>)> = None;
    'runs: for run in 0..runs {
        let mut z = match (&opts.init, run) {
            (Some(z0), 0) => {
                if !z0.matches(layout) {
                    return Err(Error::dim("CSGM initial latent", layout.l(), z0.c.len() + z0.v.len()));
                }
                z0.clone()
            }
            _ => sample_latent(layout, &mut Rng::new(derive_seed(cfg.seed, run as u64)), SampleMode::Soft),
        };
        project_balls(&mut z, layout);
        let mut zf = z.flat();
        let (mut f, mut gz, mut r) = obj.eval(&zf)?;
        let mut objective = vec![f];
        let mut residual = vec![r.norm()];
        let mut step = cfg.gd_step;
        let mut stop_all = opts.early_stop.is_some_and(|stop| stop(&gz));
        let mut iters = 0;
        while !stop_all && iters < cfg.gd_iters {
            let g = obj.grad(&zf, &r)?;
            check_finite(&g, "CSGM gradient", iters)?;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let mut cand = LatentVector::from_flat(layout, &zf.sub(&g.scaled(step)))?;
                project_balls(&mut cand, layout);
                let cf = cand.flat();
                let (f_new, gz_new, r_new) = obj.eval(&cf)?;
                if !f_new.is_finite() {
                    return Err(Error::numeric(format!("CSGM objective, iteration {iters}"), iters));
                }
                if f_new <= f {
                    (z, zf, f, gz, r) = (cand, cf, f_new, gz_new, r_new);
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            iters += 1;
            objective.push(f);
            residual.push(r.norm());
            stop_all = opts.early_stop.is_some_and(|stop| stop(&gz));
        }
        if best.as_ref().is_none_or(|b| f < b.0) || stop_all {
            best = Some((f, z, gz, iters, residual, objective));
        }
        if stop_all {
            break 'runs;
        }
    }
    let (_, z, gz, iters, residual, objective) = best.expect("at least one run");
    Ok(RecoveryResult {
        x_hat: gz,
        z_hat: Some(z),
        iterations: iters,
        wall_time: start.elapsed().as_secs_f64(),
        residual_trace: residual,
        objective_trace: objective,
    })
}

/// Plug-and-play ADMM: ridge x-update, `s = D(x + μ)`, dual step. Starts
/// from the pseudo-inverse and returns the last denoised iterate.
pub fn pnp_dae_recover(meas: &Measurement, denoiser: &MlpNetwork, cfg: &SolverConfig) -> Result<RecoveryResult> {
    cfg.validate()?;
    let n = meas.phi.n();
    if denoiser.input_dim() != n || denoiser.output_dim() != n {
        return Err(Error::dim("denoiser (must be N → N)", n, denoiser.input_dim()));
    }
    let start = Instant::now();
    let x0 = pseudo_inverse_lsq(&meas.phi, &meas.y)?;
    let mut s = x0;
    let mut mu = DenseVector::zeros(n);
    let mut residual = Vec::with_capacity(cfg.max_iters);
    let mut objective = Vec::with_capacity(cfg.max_iters);
    let scale = (n as f64).sqrt();
    let mut k = 0;
    if cfg.max_iters > 0 {
        let ridge = RidgeSolver::new(&meas.phi, cfg.rho)?;
        let phi_t_y = meas.phi.apply_t(&meas.y)?;
        while k < cfg.max_iters {
            let mut rhs = phi_t_y.clone();
            for ((b, si), mi) in rhs.iter_mut().zip(s.iter()).zip(mu.iter()) {
                *b += cfg.rho * (si - mi);
            }
            let x = ridge.solve(&rhs)?;
            check_finite(&x, "PnP x-update", k)?;
            s = denoiser.forward(&x.add(&mu)).map_err(|e| match e {
                Error::Numeric { context, .. } => Error::numeric(format!("denoiser ({context}), iteration {k}"), k),
                other => other,
            })?;
            let diff = x.sub(&s);
            mu.axpy(1.0, &diff);
            check_finite(&mu, "PnP dual update", k)?;
            let res = diff.norm();
            residual.push(res);
            objective.push(meas.phi.apply(&s)?.sub(&meas.y).norm());
            k += 1;
            if res / scale <= cfg.feasibility_tol {
                break;
            }
        }
    }
    Ok(RecoveryResult {
        x_hat: s,
        z_hat: None,
        iterations: k,
        wall_time: start.elapsed().as_secs_f64(),
        residual_trace: residual,
        objective_trace: objective,
    })
}
