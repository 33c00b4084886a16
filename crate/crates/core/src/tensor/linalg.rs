use super::{dot, norm, DenseMatrix, DenseVector};
use crate::error::{Error, Result};

/// Relative pivot threshold below which a factorization is declared singular.
pub(crate) const PIVOT_RTOL: f64 = 1e-12;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factor `a = L Lᵀ`. A pivot at or below `1e-12 × max diag(a)` is
    /// reported as [`Error::Singular`].
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::dim("cholesky (square)", n, a.cols()));
        }
        let max_diag = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
        let threshold = PIVOT_RTOL * max_diag;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let row_j = &l[j * n..j * n + j];
            let d = a.get(j, j) - dot(row_j, row_j);
            if !(d > threshold) {
                return Err(Error::Singular {
                    row: j,
                    pivot: d,
                    threshold,
                });
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let s = a.get(i, j) - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `L Lᵀ x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<DenseVector> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::dim("cholesky rhs", n, b.len()));
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let s = dot(&self.l[i * n..i * n + i], &y[..i]);
            y[i] = (y[i] - s) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        Ok(DenseVector::new(y))
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dim("symmetric eigenvalues (square)", n, a.cols()));
    }
    let mut m = a.data().to_vec();
    let scale = norm(&m).max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // signum(0.0) == 1.0, so theta == 0 yields t = 1
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Largest singular value by power iteration on `WᵀW`.
///
/// Converges from below: the returned value never exceeds the true norm by
/// more than rounding, but may fall short when the top two singular values
/// are close.
pub fn spectral_norm_power(w: &DenseMatrix, max_iters: usize, tol: f64) -> f64 {
    let n = w.cols();
    if n == 0 || w.rows() == 0 {
        return 0.0;
    }
    let mut v: DenseVector = (0..n).map(|i| 1.0 + 0.1 * ((i as f64) * 0.7).sin()).collect();
    let nv = v.norm();
    v.scale(1.0 / nv);
    let mut sigma = 0.0;
    for _ in 0..max_iters {
        let wv = w.matvec_unchecked(&v);
        let next_sigma = wv.norm();
        let mut u = w.matvec_t_unchecked(&wv);
        let nu = u.norm();
        if nu == 0.0 {
            return next_sigma;
        }
        u.scale(1.0 / nu);
        v = u;
        let converged = (next_sigma - sigma).abs() <= tol * next_sigma.max(f64::MIN_POSITIVE);
        sigma = next_sigma;
        if converged {
            break;
        }
    }
    sigma.max(w.matvec_unchecked(&v).norm())
}

/// Largest singular value. Exact (Jacobi on the smaller Gram matrix) when
/// the smaller side is at most 160; power iteration otherwise.
pub fn spectral_norm(w: &DenseMatrix) -> f64 {
    let small = w.rows().min(w.cols());
    if small == 0 {
        return 0.0;
    }
    if small <= 160 {
        let gram = if w.rows() <= w.cols() {
            w.gram_rows()
        } else {
            w.gram_cols()
        };
        let eig = symmetric_eigenvalues(&gram).expect("gram matrix is square");
        eig.last().copied().unwrap_or(0.0).max(0.0).sqrt()
    } else {
        spectral_norm_power(w, 1000, 1e-12)
    }
}
