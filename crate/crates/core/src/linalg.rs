//! Cholesky factorisation, triangular solves and symmetric eigenvalues.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Symmetry tolerance accepted by [`assert_positive_definite`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Number of times the jitter is multiplied by ten before giving up.
pub const JITTER_ESCALATIONS: usize = 3;

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = K + jitter·I`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: Matrix<T>,
    jitter: T,
}

/// Plain Cholesky without jitter. `None` when a pivot is not strictly positive.
pub fn cholesky<T: Scalar>(k: &Matrix<T>) -> Option<Matrix<T>> {
    assert!(k.is_square(), "cholesky of non-square matrix");
    let n = k.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = k[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = k[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Factors `K + jitter·I`, escalating the jitter tenfold up to
/// [`JITTER_ESCALATIONS`] times before reporting a PD violation.
///
/// `K` must be symmetric to within [`SYMMETRY_TOL`] (relative to its scale).
pub fn assert_positive_definite<T: Scalar>(k: &Matrix<T>, jitter: T) -> Result<Cholesky<T>> {
    if !k.is_square() {
        return Err(Error::contract(format!("expected square matrix, got {}x{}", k.rows(), k.cols())));
    }
    if !k.all_finite() {
        return Err(Error::NonFinite("kernel matrix".into()));
    }
    let asym = k.asymmetry().to_f64_lossy();
    let scale = k.max_abs().to_f64_lossy().max(1.0);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Asymmetric { max_diff: asym });
    }
    let mut j = jitter;
    for attempt in 0..=JITTER_ESCALATIONS {
        if let Some(l) = cholesky(&k.add_diag(j)) {
            if attempt > 0 {
                log::debug!("cholesky succeeded after raising jitter to {j}");
            }
            return Ok(Cholesky { l, jitter: j });
        }
        if attempt < JITTER_ESCALATIONS {
            j *= T::lit(10.0);
        }
    }
    let min_eigenvalue = symmetric_eigenvalues(&k.symmetrize()).first().map_or(f64::NAN, |v| v.to_f64_lossy());
    Err(Error::NotPositiveDefinite { min_eigenvalue, jitter: j.to_f64_lossy() })
}

impl<T: Scalar> Cholesky<T> {
    /// Wraps an existing lower-triangular factor.
    pub fn from_factor(l: Matrix<T>) -> Self {
        Self { l, jitter: T::zero() }
    }

    pub fn factor(&self) -> &Matrix<T> {
        &self.l
    }

    pub fn into_factor(self) -> Matrix<T> {
        self.l
    }

    /// Jitter actually added to the diagonal.
    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// `log det(L Lᵀ)`.
    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<T>() * two
    }

    /// Solves `L X = B`.
    pub fn solve_lower(&self, b: &Matrix<T>) -> Matrix<T> {
        solve_lower_triangular(&self.l, b)
    }

    /// Solves `(L Lᵀ) X = B`.
    pub fn solve(&self, b: &Matrix<T>) -> Matrix<T> {
        let y = solve_lower_triangular(&self.l, b);
        solve_upper_transposed(&self.l, &y)
    }

    pub fn inverse(&self) -> Matrix<T> {
        self.solve(&Matrix::identity(self.dim()))
    }

    /// Reconstructs `L Lᵀ`.
    pub fn reconstruct(&self) -> Matrix<T> {
        self.l.matmul_tr(&self.l)
    }
}

/// Forward substitution `L X = B` for lower-triangular `L`.
pub fn solve_lower_triangular<T: Scalar>(l: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    assert_eq!(b.rows(), n, "triangular solve shape mismatch");
    let m = b.cols();
    let mut x = b.clone();
    for i in 0..n {
        for p in 0..i {
            let lip = l[(i, p)];
            if lip == T::zero() {
                continue;
            }
            for c in 0..m {
                let v = x[(p, c)];
                x[(i, c)] -= lip * v;
            }
        }
        let d = l[(i, i)];
        for c in 0..m {
            x[(i, c)] /= d;
        }
    }
    x
}

/// Back substitution `Lᵀ X = B` for lower-triangular `L`.
pub fn solve_upper_transposed<T: Scalar>(l: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    assert_eq!(b.rows(), n, "triangular solve shape mismatch");
    let m = b.cols();
    let mut x = b.clone();
    for i in (0..n).rev() {
        for p in (i + 1)..n {
            let lpi = l[(p, i)];
            if lpi == T::zero() {
                continue;
            }
            for c in 0..m {
                let v = x[(p, c)];
                x[(i, c)] -= lpi * v;
            }
        }
        let d = l[(i, i)];
        for c in 0..m {
            x[(i, c)] /= d;
        }
    }
    x
}

/// Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
pub fn symmetric_eigenvalues<T: Scalar>(a: &Matrix<T>) -> Vec<T> {
    assert!(a.is_square(), "eigenvalues of non-square matrix");
    let n = a.rows();
    let mut m = a.symmetrize();
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        let total: T = m.as_slice().iter().map(|&x| x * x).sum();
        if off <= eps * eps * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev = m.diag();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}
