//! Recovery solvers: F-CSRG, CSGM gradient descent, plug-and-play ADMM
//! with a denoiser, and the pseudo-inverse baseline.

mod baselines;
mod fcsrg;

pub use baselines::{csgm_gd_recover, csgm_gd_recover_with, pnp_dae_recover, GdOptions};
pub use fcsrg::{fcsrg_recover, AdmmState, FcsrgSolver};

use std::time::Instant;

use crate::error::{Error, Result};
use crate::generative::{LatentLayout, LatentVector};
use crate::tensor::{pseudo_inverse_lsq, DenseVector, Rng, SensingMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// ADMM penalty.
    pub rho: f64,
    pub max_iters: usize,
    /// Stop once `‖x − G(z)‖ / √N` falls to this value.
    pub feasibility_tol: f64,
    /// Latent penalty of the CSGM objective.
    pub lambda: f64,
    /// Initial CSGM step; halved whenever a step would raise the objective.
    pub gd_step: f64,
    pub gd_iters: usize,
    /// Random CSGM initializations (at least one run is always made).
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iters: 100,
            feasibility_tol: 1e-4,
            lambda: 0.1,
            gd_step: 1.0,
            gd_iters: 500,
            restarts: 3,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.rho) {
            return Err(Error::Parameter(format!("rho must be positive, got {}", self.rho)));
        }
        if !pos(self.gd_step) {
            return Err(Error::Parameter(format!("gd_step must be positive, got {}", self.gd_step)));
        }
        if !(self.feasibility_tol >= 0.0) || !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter("feasibility_tol and lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// Noise actually added to a measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseRecord {
    pub scale: f64,
    pub seed: u64,
    /// `‖w‖`
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub y: DenseVector,
    pub phi: SensingMatrix,
    pub noise: Option<NoiseRecord>,
}

impl Measurement {
    pub fn new(phi: SensingMatrix, y: DenseVector) -> Result<Self> {
        if y.len() != phi.m() {
            return Err(Error::dim("measurement", phi.m(), y.len()));
        }
        Ok(Self { y, phi, noise: None })
    }

    pub fn noise_norm(&self) -> f64 {
        self.noise.map_or(0.0, |w| w.norm)
    }
}

/// `y = Φx* + w` with `w ~ N(0, σ²I)`; no noise is drawn when `σ = 0`.
pub fn measure(phi: &SensingMatrix, x_star: &[f64], noise_scale: f64, rng: &mut Rng) -> Result<Measurement> {
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::Parameter(format!("noise scale must be ≥ 0, got {noise_scale}")));
    }
    let mut y = phi.apply(x_star)?;
    let noise = if noise_scale > 0.0 {
        let seed = rng.next_u64();
        let w = Rng::new(seed).normal_vec(phi.m(), noise_scale);
        y.axpy(1.0, &w);
        Some(NoiseRecord {
            scale: noise_scale,
            seed,
            norm: crate::tensor::norm(&w),
        })
    } else {
        None
    };
    Ok(Measurement {
        y,
        phi: phi.clone(),
        noise,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub x_hat: DenseVector,
    pub z_hat: Option<LatentVector>,
    pub iterations: usize,
    /// Seconds spent inside the solver.
    pub wall_time: f64,
    pub residual_trace: Vec<f64>,
    pub objective_trace: Vec<f64>,
}

impl RecoveryResult {
    /// Equality of everything except wall time.
    pub fn same_outcome(&self, other: &RecoveryResult) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        bits(&self.x_hat) == bits(&other.x_hat)
            && self.z_hat.as_ref().map(|z| bits(&z.flat())) == other.z_hat.as_ref().map(|z| bits(&z.flat()))
            && self.iterations == other.iterations
            && bits(&self.residual_trace) == bits(&other.residual_trace)
            && bits(&self.objective_trace) == bits(&other.objective_trace)
    }
}

/// Minimum-norm reconstruction `Φ⁺ y`.
pub fn pinv_recover(meas: &Measurement) -> Result<RecoveryResult> {
    let start = Instant::now();
    let x_hat = pseudo_inverse_lsq(&meas.phi, &meas.y)?;
    Ok(RecoveryResult {
        x_hat,
        z_hat: None,
        iterations: 0,
        wall_time: start.elapsed().as_secs_f64(),
        residual_trace: Vec::new(),
        objective_trace: Vec::new(),
    })
}

/// `‖x̂ − x*‖`
pub fn reconstruction_error(x_hat: &[f64], x_star: &[f64]) -> Result<f64> {
    if x_hat.len() != x_star.len() {
        return Err(Error::dim("reconstruction", x_star.len(), x_hat.len()));
    }
    Ok(crate::tensor::norm(
        &x_hat.iter().zip(x_star).map(|(a, b)| a - b).collect::<Vec<_>>(),
    ))
}

/// Fraction of categorical groups whose argmax agrees (ties toward the
/// lowest index on both sides).
pub fn codeword_accuracy(z_hat: &LatentVector, c_star: &[f64], layout: &LatentLayout) -> Result<f64> {
    if z_hat.c.len() != layout.d() {
        return Err(Error::dim("recovered codeword", layout.d(), z_hat.c.len()));
    }
    if c_star.len() != layout.d() {
        return Err(Error::dim("reference codeword", layout.d(), c_star.len()));
    }
    if layout.categorical_groups().is_empty() {
        return Err(Error::Parameter("layout has no categorical groups to score".into()));
    }
    let reference = LatentVector {
        c: DenseVector::new(c_star.to_vec()),
        v: DenseVector::zeros(0),
    };
    let got = z_hat.hard_codes(layout);
    let want = reference.hard_codes(layout);
    let hits = got.iter().zip(&want).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / want.len() as f64)
}

pub(crate) fn check_finite(v: &[f64], context: &str, step: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("{context}, iteration {step}"), step))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::{sample_latent, SampleMode};
    use crate::tensor::DenseMatrix;

    #[test]
    fn noiseless_measure_is_exact() {
        let phi = SensingMatrix::standard(5, 12, 3).unwrap();
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let m = measure(&phi, &x, 0.0, &mut Rng::new(0)).unwrap();
        assert_eq!(m.y, phi.apply(&x).unwrap());
        assert!(m.noise.is_none());
        let id = SensingMatrix::from_matrix(DenseMatrix::identity(4)).unwrap();
        let m = measure(&id, &[1.0, 2.0, 3.0, 4.0], 0.0, &mut Rng::new(0)).unwrap();
        assert_eq!(m.y.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn noise_power_matches_scale() {
        let phi = SensingMatrix::standard(20, 40, 1).unwrap();
        let x = vec![0.0; 40];
        let sigma = 0.3;
        let mut rng = Rng::new(77);
        let trials = 1000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let m = measure(&phi, &x, sigma, &mut rng).unwrap();
            acc += m.y.norm_sq() / 20.0;
            assert!((m.noise_norm() - m.y.norm()).abs() < 1e-12);
        }
        let mean = acc / trials as f64;
        assert!((mean - sigma * sigma).abs() <= 0.1 * sigma * sigma, "{mean}");
    }

    #[test]
    fn error_examples() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(reconstruction_error(&x, &x).unwrap(), 0.0);
        assert_eq!(reconstruction_error(&[1.0, 3.0, 3.0], &x).unwrap(), 1.0);
        assert!(reconstruction_error(&[1.0], &x).is_err());
    }

    #[test]
    fn accuracy_counts_groups() {
        let layout = LatentLayout::new(vec![3, 2], 0, 1).unwrap();
        let z = LatentVector {
            c: DenseVector::new(vec![0.2, 0.7, 0.1, 0.5, 0.5]),
            v: DenseVector::zeros(1),
        };
        assert_eq!(codeword_accuracy(&z, &[0.0, 1.0, 0.0, 1.0, 0.0], &layout).unwrap(), 1.0);
        assert_eq!(codeword_accuracy(&z, &[1.0, 0.0, 0.0, 0.0, 1.0], &layout).unwrap(), 0.0);
        assert_eq!(codeword_accuracy(&z, &[0.0, 1.0, 0.0, 0.0, 1.0], &layout).unwrap(), 0.5);
    }

    #[test]
    fn random_guess_accuracy_is_chance() {
        let layout = LatentLayout::new(vec![4], 0, 0).unwrap();
        let c_star = [0.0, 0.0, 1.0, 0.0];
        let mut rng = Rng::new(31);
        let trials = 10_000;
        let mut hits = 0.0;
        for _ in 0..trials {
            let guess = sample_latent(&layout, &mut rng, SampleMode::Hard);
            hits += codeword_accuracy(&guess, &c_star, &layout).unwrap();
        }
        assert!((hits / trials as f64 - 0.25).abs() <= 0.02);
    }

    #[test]
    fn pinv_square_system_is_exact() {
        let phi = SensingMatrix::standard(8, 8, 2).unwrap();
        let x: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
        let m = measure(&phi, &x, 0.0, &mut Rng::new(0)).unwrap();
        let r = pinv_recover(&m).unwrap();
        assert!(reconstruction_error(&r.x_hat, &x).unwrap() <= 1e-8);
    }
}
