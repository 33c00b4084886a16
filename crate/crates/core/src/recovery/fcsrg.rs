use std::time::Instant;

use super::{check_finite, Measurement, RecoveryResult, SolverConfig};
use crate::error::{Error, Result};
use crate::generative::{Generator, LatentVector};
use crate::projector::Projector;
use crate::tensor::{pseudo_inverse_lsq, DenseVector, RidgeSolver};

/// Iterates of the alternating loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: DenseVector,
    pub z: LatentVector,
    pub mu: DenseVector,
    /// `G(z)` for the current `z`.
    pub gz: DenseVector,
    pub k: usize,
    /// `‖x − G(z)‖` after each iteration.
    pub residual_trace: Vec<f64>,
}

/// F-CSRG for one measurement. The `(ΦΦᵀ + ρI)` factor and `Φᵀy` are
/// computed once at construction.
pub struct FcsrgSolver<'a> {
    meas: &'a Measurement,
    gen: &'a Generator,
    proj: &'a Projector,
    cfg: SolverConfig,
    ridge: RidgeSolver,
    phi_t_y: DenseVector,
}

impl<'a> FcsrgSolver<'a> {
    pub fn new(meas: &'a Measurement, gen: &'a Generator, proj: &'a Projector, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let n = meas.phi.n();
        if gen.n() != n {
            return Err(Error::dim("generator output vs signal dimension", n, gen.n()));
        }
        if proj.input_dim() != n {
            return Err(Error::dim("projector input vs signal dimension", n, proj.input_dim()));
        }
        if proj.layout().l() != gen.layout().l() || proj.layout().d() != gen.layout().d() {
            return Err(Error::Parameter("projector and generator latent layouts differ".into()));
        }
        let ridge = RidgeSolver::new(&meas.phi, cfg.rho)?;
        let phi_t_y = meas.phi.apply_t(&meas.y)?;
        Ok(Self {
            meas,
            gen,
            proj,
            cfg,
            ridge,
            phi_t_y,
        })
    }

    /// `z⁰ = P(Φ⁺y)`, `μ⁰ = 0`, `x⁰ = Φ⁺y`.
    pub fn init(&self) -> Result<AdmmState> {
        let x = pseudo_inverse_lsq(&self.meas.phi, &self.meas.y)?;
        let z = self.proj.project(&x)?;
        let gz = self.gen.generate(&z)?;
        let n = x.len();
        Ok(AdmmState {
            x,
            z,
            mu: DenseVector::zeros(n),
            gz,
            k: 0,
            residual_trace: Vec::new(),
        })
    }

    /// One sweep of the x-, z- and μ-updates. Returns the new residual.
    pub fn step(&self, s: &mut AdmmState) -> Result<f64> {
        let k = s.k;
        let rho = self.cfg.rho;
        let mut rhs = self.phi_t_y.clone();
        for ((r, g), m) in rhs.iter_mut().zip(s.gz.iter()).zip(s.mu.iter()) {
            *r += rho * (g - m);
        }
        s.x = self.ridge.solve(&rhs)?;
        check_finite(&s.x, "x-update", k)?;
        s.z = self.proj.project(&s.x.add(&s.mu)).map_err(|e| match e {
            Error::Numeric { context, .. } => Error::numeric(format!("z-update ({context}), iteration {k}"), k),
            other => other,
        })?;
        s.gz = self.gen.generate(&s.z)?;
        check_finite(&s.gz, "generator", k)?;
        let diff = s.x.sub(&s.gz);
        s.mu.axpy(1.0, &diff);
        check_finite(&s.mu, "dual update", k)?;
        let residual = diff.norm();
        s.residual_trace.push(residual);
        s.k += 1;
        Ok(residual)
    }

    /// `‖y − Φ G(z)‖`
    fn misfit(&self, gz: &[f64]) -> Result<f64> {
        Ok(self.meas.phi.apply(gz)?.sub(&self.meas.y).norm())
    }

    pub fn run(&self) -> Result<RecoveryResult> {
        let start = Instant::now();
        let mut s = self.init()?;
        let mut objective = Vec::with_capacity(self.cfg.max_iters);
        let scale = (s.x.len() as f64).sqrt();
        while s.k < self.cfg.max_iters {
            let r = self.step(&mut s)?;
            objective.push(self.misfit(&s.gz)?);
            if r / scale <= self.cfg.feasibility_tol {
                break;
            }
        }
        Ok(RecoveryResult {
            x_hat: s.gz,
            z_hat: Some(s.z),
            iterations: s.k,
            wall_time: start.elapsed().as_secs_f64(),
            residual_trace: s.residual_trace,
            objective_trace: objective,
        })
    }
}

/// Recover `x̂ = G(z_final)` from `y` by alternating a ridge x-update, a
/// learned projection for `z`, and a dual step on `μ`.
pub fn fcsrg_recover(meas: &Measurement, gen: &Generator, proj: &Projector, cfg: &SolverConfig) -> Result<RecoveryResult> {
    FcsrgSolver::new(meas, gen, proj, *cfg)?.run()
}
