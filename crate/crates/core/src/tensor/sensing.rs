use super::{Cholesky, DenseMatrix, DenseVector, Rng};
use crate::error::{Error, Result};

/// An `m × n` compression operator with i.i.d. zero-mean Gaussian entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    matrix: DenseMatrix,
    seed: u64,
    entry_variance: f64,
}

impl SensingMatrix {
    /// Deterministic draw: the same `(m, n, variance, seed)` always yields
    /// the same bits.
    pub fn gaussian(m: usize, n: usize, variance: f64, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Parameter(format!(
                "sensing matrix needs positive dimensions, got {m}x{n}"
            )));
        }
        if m > n {
            return Err(Error::Parameter(format!(
                "sensing matrix must have m <= n, got {m}x{n}"
            )));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Parameter(format!(
                "entry variance must be positive, got {variance}"
            )));
        }
        let std_dev = variance.sqrt();
        let mut rng = Rng::new(seed);
        let matrix = DenseMatrix::from_fn(m, n, |_, _| std_dev * rng.normal());
        Ok(Self {
            matrix,
            seed,
            entry_variance: variance,
        })
    }

    /// Gaussian draw with the conventional `N(0, 1/m)` entries.
    pub fn standard(m: usize, n: usize, seed: u64) -> Result<Self> {
        Self::gaussian(m, n, 1.0 / m.max(1) as f64, seed)
    }

    /// Draw a fresh matrix, taking its seed from `rng`.
    pub fn sample(m: usize, n: usize, variance: f64, rng: &mut Rng) -> Result<Self> {
        let seed = rng.next_u64();
        Self::gaussian(m, n, variance, seed)
    }

    /// Wrap a fixed matrix (fixtures, identity operators). The seed is 0 and
    /// the recorded variance is the empirical second moment of the entries.
    pub fn from_matrix(matrix: DenseMatrix) -> Result<Self> {
        let (m, n) = (matrix.rows(), matrix.cols());
        if m == 0 || n == 0 || m > n {
            return Err(Error::Parameter(format!(
                "sensing matrix must satisfy 1 <= m <= n, got {m}x{n}"
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::Parameter("sensing matrix has non-finite entries".into()));
        }
        let entry_variance = matrix.data().iter().map(|x| x * x).sum::<f64>() / (m * n) as f64;
        Ok(Self {
            matrix,
            seed: 0,
            entry_variance,
        })
    }

    pub fn m(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n(&self) -> usize {
        self.matrix.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entry_variance(&self) -> f64 {
        self.entry_variance
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    /// `Φ x`
    pub fn apply(&self, x: &[f64]) -> Result<DenseVector> {
        self.matrix.matvec(x)
    }

    /// `Φᵀ y`
    pub fn apply_t(&self, y: &[f64]) -> Result<DenseVector> {
        self.matrix.matvec_t(y)
    }
}

/// Solves `(ΦᵀΦ + ρI) x = b` through the Woodbury identity
///
/// ```text
/// (ΦᵀΦ + ρI)⁻¹ = ρ⁻¹ (I − Φᵀ (ΦΦᵀ + ρI)⁻¹ Φ)
/// ```
///
/// so only the `m × m` matrix `ΦΦᵀ + ρI` is factored, once, and each solve
/// costs two matrix-vector products plus two triangular solves.
#[derive(Debug, Clone)]
pub struct RidgeSolver {
    phi: DenseMatrix,
    rho: f64,
    factor: Cholesky,
}

impl RidgeSolver {
    pub fn new(phi: &SensingMatrix, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Parameter(format!("rho must be positive, got {rho}")));
        }
        let mut k = phi.matrix().gram_rows();
        for i in 0..k.rows() {
            k.set(i, i, k.get(i, i) + rho);
        }
        let factor = Cholesky::factor(&k)?;
        Ok(Self {
            phi: phi.matrix().clone(),
            rho,
            factor,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn solve(&self, b: &[f64]) -> Result<DenseVector> {
        if b.len() != self.phi.cols() {
            return Err(Error::dim("ridge rhs", self.phi.cols(), b.len()));
        }
        let t = self.phi.matvec_unchecked(b);
        let u = self.factor.solve(&t)?;
        let correction = self.phi.matvec_t_unchecked(&u);
        let inv_rho = 1.0 / self.rho;
        Ok(b.iter()
            .zip(correction.iter())
            .map(|(bi, ci)| (bi - ci) * inv_rho)
            .collect())
    }
}

/// One-shot `(ΦᵀΦ + ρI)⁻¹ b`. Use [`RidgeSolver`] when solving repeatedly.
pub fn ridge_solve(phi: &SensingMatrix, rho: f64, b: &[f64]) -> Result<DenseVector> {
    if b.len() != phi.n() {
        return Err(Error::dim("ridge rhs", phi.n(), b.len()));
    }
    RidgeSolver::new(phi, rho)?.solve(b)
}

/// Minimum-norm solution `Φᵀ (ΦΦᵀ)⁻¹ y` of `Φ x = y`. Requires full row rank.
pub fn pseudo_inverse_lsq(phi: &SensingMatrix, y: &[f64]) -> Result<DenseVector> {
    if y.len() != phi.m() {
        return Err(Error::dim("measurement vector", phi.m(), y.len()));
    }
    let gram = phi.matrix().gram_rows();
    let factor = Cholesky::factor(&gram)?;
    let u = factor.solve(y)?;
    Ok(phi.matrix().matvec_t_unchecked(&u))
}
