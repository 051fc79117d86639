//! Small dense kernels on row-major `f64` slices.
//!
//! The flow integrator calls these once per Runge-Kutta stage, so they work
//! on caller-owned buffers and never allocate. Anything that is not on a hot
//! path (eigen-decompositions, general inverses) goes through `nalgebra`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Jitter multipliers (times `trace / p`) tried in order before giving up.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// `out = a (n×k) * b (k×m)`.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for r in 0..k {
                acc += a[i * k + r] * b[r * m + j];
            }
            out[i * m + j] = acc;
        }
    }
}

/// `out = a (n×k) * bᵀ` where `b` is `m×k`.
pub fn matmul_bt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for r in 0..k {
                acc += a[i * k + r] * b[j * k + r];
            }
            out[i * m + j] = acc;
        }
    }
}

pub fn matvec(a: &[f64], x: &[f64], n: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        out[i] = (0..m).map(|j| a[i * m + j] * x[j]).sum();
    }
}

pub fn identity(p: usize) -> Vec<f64> {
    let mut m = vec![0.0; p * p];
    for i in 0..p {
        m[i * p + i] = 1.0;
    }
    m
}

pub fn transpose(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            t[j * n + i] = a[i * m + j];
        }
    }
    t
}

pub fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn to_dmatrix(a: &[f64], n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, m, a)
}

pub fn from_dmatrix(a: &DMatrix<f64>) -> Vec<f64> {
    let (n, m) = a.shape();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = a[(i, j)];
        }
    }
    out
}

/// Lower-triangular factor `L` with nonnegative diagonal such that `L Lᵀ ≈ A`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    pub dim: usize,
    pub lower: Vec<f64>,
    /// Diagonal jitter that was added to obtain the factor.
    pub jitter: f64,
}

impl Cholesky {
    /// Semidefinite Cholesky with the jitter ladder. Zero pivots are accepted
    /// (the column below them is zeroed) so rank-deficient PSD matrices factor
    /// without jitter.
    pub fn factor(a: &[f64], dim: usize) -> Result<Self> {
        let trace: f64 = (0..dim).map(|i| a[i * dim + i]).sum();
        let scale = (trace / dim as f64).abs().max(f64::MIN_POSITIVE);
        let norm = frobenius(a);
        let mut last_pivot = f64::NAN;
        for mult in JITTER_LADDER {
            let jitter = mult * scale;
            match factor_once(a, dim, jitter) {
                Ok(lower) => {
                    let chol = Cholesky { dim, lower, jitter };
                    let resid = chol.reconstruction_error(a);
                    if resid <= 1e-8 * (1.0 + norm) + jitter * dim as f64 {
                        return Ok(chol);
                    }
                }
                Err(p) => last_pivot = p,
            }
        }
        Err(Error::NotPsd {
            min_pivot: last_pivot,
        })
    }

    /// Strict variant for weight matrices: every pivot must be positive.
    /// Zero pivots move on to the next rung of the jitter ladder.
    pub fn factor_pd(a: &[f64], dim: usize) -> Result<Self> {
        let trace: f64 = (0..dim).map(|i| a[i * dim + i]).sum();
        let scale = (trace / dim as f64).abs().max(f64::MIN_POSITIVE);
        let norm = frobenius(a);
        let mut min_pivot = f64::NAN;
        for mult in JITTER_LADDER {
            let jitter = mult * scale;
            match factor_once(a, dim, jitter) {
                Ok(lower) => {
                    let chol = Cholesky { dim, lower, jitter };
                    min_pivot = (0..dim).map(|i| chol.lower[i * dim + i]).fold(f64::INFINITY, f64::min);
                    let resid = chol.reconstruction_error(a);
                    if min_pivot > 0.0 && resid <= 1e-8 * (1.0 + norm) + jitter * dim as f64 {
                        return Ok(chol);
                    }
                }
                Err(p) => min_pivot = p,
            }
        }
        Err(Error::NotPsd { min_pivot })
    }

    pub fn reconstruction_error(&self, a: &[f64]) -> f64 {
        let d = self.dim;
        let mut llt = vec![0.0; d * d];
        matmul_bt(&self.lower, &self.lower, d, d, d, &mut llt);
        max_abs_diff(&llt, a)
    }

    pub fn log_det(&self) -> f64 {
        (0..self.dim)
            .map(|i| 2.0 * self.lower[i * self.dim + i].ln())
            .sum()
    }

    /// Solves `L Lᵀ x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let d = self.dim;
        let l = &self.lower;
        for i in 0..d {
            let mut v = b[i];
            for j in 0..i {
                v -= l[i * d + j] * b[j];
            }
            b[i] = v / l[i * d + i];
        }
        for i in (0..d).rev() {
            let mut v = b[i];
            for j in (i + 1)..d {
                v -= l[j * d + i] * b[j];
            }
            b[i] = v / l[i * d + i];
        }
    }

    /// `bᵀ A⁻¹ b`.
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        // Forward substitution only: ‖L⁻¹ b‖².
        let d = self.dim;
        let l = &self.lower;
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut v = b[i];
            for j in 0..i {
                v -= l[i * d + j] * z[j];
            }
            z[i] = v / l[i * d + i];
        }
        z.iter().map(|v| v * v).sum()
    }
}

fn factor_once(a: &[f64], d: usize, jitter: f64) -> std::result::Result<Vec<f64>, f64> {
    let mut l = vec![0.0; d * d];
    let max_diag = (0..d).map(|i| a[i * d + i].abs()).fold(0.0, f64::max);
    let zero_tol = 1e-14 * (1.0 + max_diag);
    for j in 0..d {
        let mut diag = a[j * d + j] + jitter;
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if !diag.is_finite() || diag < -zero_tol {
            return Err(diag);
        }
        let ljj = if diag <= zero_tol { 0.0 } else { diag.sqrt() };
        l[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = if ljj == 0.0 { 0.0 } else { v / ljj };
        }
    }
    Ok(l)
}

/// Symmetric eigen-decomposition; eigenvalues ascending, eigenvectors as
/// columns of the returned row-major matrix.
pub fn sym_eigen(a: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let m = to_dmatrix(a, dim, dim);
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = vec![0.0; dim * dim];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..dim {
            vectors[row * dim + col] = eig.eigenvectors[(row, src)];
        }
    }
    (values, vectors)
}

/// Symmetric PSD square root `V diag(√λ) Vᵀ`; used to check that only `Σ`
/// (never its particular root) enters downstream quantities.
pub fn sym_sqrt(a: &[f64], dim: usize) -> Vec<f64> {
    let (vals, vecs) = sym_eigen(a, dim);
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            out[i * dim + j] = (0..dim)
                .map(|k| vecs[i * dim + k] * vals[k].max(0.0).sqrt() * vecs[j * dim + k])
                .sum();
        }
    }
    out
}

pub fn inverse(a: &[f64], dim: usize) -> Option<Vec<f64>> {
    to_dmatrix(a, dim, dim)
        .try_inverse()
        .map(|m| from_dmatrix(&m))
}

/// 2-norm condition number of a symmetric matrix.
pub fn sym_condition(a: &[f64], dim: usize) -> f64 {
    let (vals, _) = sym_eigen(a, dim);
    let lo = vals.first().copied().unwrap_or(0.0).abs();
    let hi = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn sym_rank(a: &[f64], dim: usize, rel_tol: f64) -> usize {
    let (vals, _) = sym_eigen(a, dim);
    let hi = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    vals.iter().filter(|v| v.abs() > rel_tol * hi).count()
}
