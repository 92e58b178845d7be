//! Linear-algebra kernel for continuation: Moore-Penrose pseudoinverses,
//! oriented nullspace tangents and augmented tangent solutions.
//!
//! A continuation step solves the underdetermined system `A * tau_tilde = B`
//! where `A` is an `m x (m+1)` Jacobian of the differentiated homotopy and
//! `B` collects the drift terms.  The solution is decomposed as
//!
//! ```text
//! tau_tilde = alpha * tau + tau_bar,      A * tau = 0,  |tau| = 1,
//!                                         tau_bar = pinv(A) * B,
//! ```
//!
//! with the homogeneous direction `tau` oriented so that `det([A; tau^T])`
//! is positive.  That determinant convention makes the traced curve
//! direction continuous along regular segments and flips it consistently
//! past folds.
//!
//! All rank decisions use a relative threshold: singular values at or below
//! `rank_tol * sigma_max` are treated as zero.

use nalgebra::{DMatrix, DVector};
use std::fmt;

/// Default relative singular-value threshold used by callers that have no
/// reason to pick their own.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Orientation determinants closer to zero than this are considered ties
/// (the stacked matrix `[A; tau^T]` is numerically singular) and reported
/// as rank deficiency rather than resolved arbitrarily.
pub const ORIENTATION_TIE_TOL: f64 = 1e-12;

/// Errors from the tangent kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelError {
    /// An input matrix or vector contained NaN or an infinity.
    NonFinite,
    /// Input dimensions do not fit the operation.
    Shape {
        rows: usize,
        cols: usize,
        expected: &'static str,
    },
    /// Numerical rank fell below what the operation requires, e.g. at a
    /// bifurcation point of the traced curve.
    RankDeficient { rank: usize, required: usize },
    /// A scalar parameter (tolerance, scale) was out of range.
    BadParameter { name: &'static str, value: f64 },
}

impl fmt::Display for KernelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelError::NonFinite => write!(f, "input contains NaN or infinite entries"),
            KernelError::Shape {
                rows,
                cols,
                expected,
            } => write!(f, "matrix is {rows}x{cols}, expected {expected}"),
            KernelError::RankDeficient { rank, required } => {
                write!(f, "numerical rank {rank} below required {required}")
            }
            KernelError::BadParameter { name, value } => {
                write!(f, "parameter {name} = {value} out of range")
            }
        }
    }
}

impl std::error::Error for KernelError {}

/// Decomposed solution of `A * tau_tilde = B` on a one-dimensional solution
/// manifold: unit kernel direction `tau`, minimum-norm particular solution
/// `tau_bar`, and the scale `alpha` applied to the kernel part.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentSolution {
    /// Unit-norm homogeneous direction, oriented by the determinant rule.
    pub tau: DVector<f64>,
    /// Minimum-norm particular solution `pinv(A) * B`.
    pub tau_bar: DVector<f64>,
    /// Positive scale applied to `tau` in the combined direction.
    pub alpha: f64,
}

impl TangentSolution {
    /// Combined update direction `alpha * tau + tau_bar`.
    pub fn combined(&self) -> DVector<f64> {
        &self.tau * self.alpha + &self.tau_bar
    }
}

fn check_finite_matrix(a: &DMatrix<f64>) -> Result<(), KernelError> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KernelError::NonFinite)
    }
}

fn check_finite_vector(v: &DVector<f64>) -> Result<(), KernelError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(KernelError::NonFinite)
    }
}

fn check_rank_tol(rank_tol: f64) -> Result<(), KernelError> {
    if rank_tol.is_finite() && rank_tol > 0.0 && rank_tol < 1.0 {
        Ok(())
    } else {
        Err(KernelError::BadParameter {
            name: "rank_tol",
            value: rank_tol,
        })
    }
}

/// Thin singular value decomposition `A = U * diag(s) * V^T` with the
/// singular values sorted descending.  For an `m x n` input, `u` is
/// `m x k`, `s` has length `k`, and `v_t` is `k x n`, with `k = min(m, n)`.
///
/// Factor vectors paired with a nonzero singular value are orthonormal.
/// Vectors paired with an exactly zero singular value contribute nothing
/// to the product and come in one of two harmless flavors, depending on
/// which side the iteration ran on: zero in the iterated factor (`u` for
/// square or tall inputs, `v_t` for wide ones) and orthonormal in the
/// rotation-accumulated factor.  In particular the `v_t` of a square or
/// tall input is always a complete orthonormal basis, which is what the
/// kernel extraction relies on.
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

/// One-sided Jacobi singular value decomposition.
///
/// nalgebra's bidiagonalization SVD silently loses accuracy on some small
/// matrices whose spectra mix near-equal and zero singular values
/// (orthogonal factors but reconstruction error up to 4e-2 observed on
/// 3x4 and 5x3 inputs — see the hard-case regression test).  Every rank
/// and kernel contract in this module rides on the factorization, so the
/// module carries its own: one-sided Jacobi costs more per entry but is
/// backward stable to machine precision, and every caller works on tiny
/// systems (at most seven columns).
pub(crate) fn jacobi_svd(a: &DMatrix<f64>) -> ThinSvd {
    let (m, n) = a.shape();
    if m < n {
        // Factor the transpose and swap the roles of U and V.
        let t = jacobi_svd(&a.transpose());
        return ThinSvd {
            u: t.v_t.transpose(),
            s: t.s,
            v_t: t.u.transpose(),
        };
    }
    // m >= n: rotate column pairs of B = A * V until all are orthogonal.
    let mut b = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = b.column(p).dot(&b.column(p));
                let beta = b.column(q).dot(&b.column(q));
                let gamma = b.column(p).dot(&b.column(q));
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // The rotation angle that zeroes the p/q inner product,
                // taken as the smaller root for stability.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (bip, biq) = (b[(i, p)], b[(i, q)]);
                    b[(i, p)] = c * bip - s * biq;
                    b[(i, q)] = s * bip + c * biq;
                }
                for i in 0..n {
                    let (vip, viq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    // Column norms of B are the singular values; sort them descending.
    let norms: Vec<f64> = (0..n).map(|j| b.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));
    let mut u = DMatrix::zeros(m, n);
    let mut s = DVector::zeros(n);
    let mut v_sorted = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = norms[src];
        if norms[src] > 0.0 {
            u.column_mut(dst).copy_from(&(b.column(src) / norms[src]));
        }
        v_sorted.column_mut(dst).copy_from(&v.column(src));
    }
    ThinSvd {
        u,
        s,
        v_t: v_sorted.transpose(),
    }
}

/// Moore-Penrose pseudoinverse via singular value decomposition.
///
/// Singular values at or below `rank_tol * sigma_max` are treated as zero,
/// so rank-deficient and rectangular inputs are handled uniformly; the
/// pseudoinverse of a zero matrix is the zero matrix of transposed shape.
///
/// # Example
///
/// ```
/// use nalgebra::DMatrix;
/// let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
/// let p = homctl::pseudoinverse(&a, 1e-9).unwrap();
/// assert!((p[(0, 0)] - 0.5).abs() < 1e-14);
/// assert_eq!(p[(1, 1)], 0.0);
/// ```
pub fn pseudoinverse(a: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>, KernelError> {
    check_finite_matrix(a)?;
    check_rank_tol(rank_tol)?;
    let svd = jacobi_svd(a);
    let cut = rank_tol * svd.s.max();
    // pinv(A) = V * diag(1/sigma_i or 0) * U^T, built without forming the
    // diagonal explicitly: scale the rows of U^T.
    let mut ut = svd.u.transpose();
    for (i, s) in svd.s.iter().enumerate() {
        let inv = if *s > cut { 1.0 / s } else { 0.0 };
        ut.row_mut(i).scale_mut(inv);
    }
    Ok(svd.v_t.transpose() * ut)
}

/// Number of singular values above `rank_tol * sigma_max`.
///
/// The zero matrix has rank 0; `diag(1, 1e-12)` at the default tolerance has
/// rank 1.
pub fn numerical_rank(a: &DMatrix<f64>, rank_tol: f64) -> Result<usize, KernelError> {
    check_finite_matrix(a)?;
    check_rank_tol(rank_tol)?;
    let sv = jacobi_svd(a).s;
    let cut = rank_tol * sv.max();
    Ok(sv.iter().filter(|s| **s > cut).count())
}

/// Unit kernel vector of a full-row-rank `m x (m+1)` matrix, oriented so
/// that `det([A; tau^T]) > 0`.
///
/// Errors with [`KernelError::RankDeficient`] when the numerical rank of
/// `A` is below `m` (a bifurcation of the traced curve) or when the
/// orientation determinant ties to zero within [`ORIENTATION_TIE_TOL`].
pub fn oriented_nullspace_tangent(
    a: &DMatrix<f64>,
    rank_tol: f64,
) -> Result<DVector<f64>, KernelError> {
    check_finite_matrix(a)?;
    check_rank_tol(rank_tol)?;
    let m = a.nrows();
    if a.ncols() != m + 1 {
        return Err(KernelError::Shape {
            rows: m,
            cols: a.ncols(),
            expected: "m x (m+1)",
        });
    }
    // Pad with a zero row to get a square matrix whose full V factor exists;
    // padding adds exactly one zero singular value and leaves the row space
    // untouched, so the right singular vector of the smallest singular value
    // spans ker(A) whenever rank(A) = m.
    let mut padded = DMatrix::zeros(m + 1, m + 1);
    padded.view_mut((0, 0), (m, m + 1)).copy_from(a);
    let svd = jacobi_svd(&padded);
    let v_t = &svd.v_t;
    let sv = &svd.s; // sorted descending
    let cut = rank_tol * sv.max();
    let rank = sv.iter().filter(|s| **s > cut).count();
    if rank < m {
        return Err(KernelError::RankDeficient { rank, required: m });
    }
    let mut tau: DVector<f64> = v_t.row(m).transpose();
    let norm = tau.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(KernelError::RankDeficient { rank, required: m });
    }
    tau /= norm;
    // Orientation: det of A with tau appended as the last row.
    let mut stacked = DMatrix::zeros(m + 1, m + 1);
    stacked.view_mut((0, 0), (m, m + 1)).copy_from(a);
    stacked.row_mut(m).copy_from(&tau.transpose());
    let det = stacked.determinant();
    if det.abs() < ORIENTATION_TIE_TOL {
        return Err(KernelError::RankDeficient { rank, required: m });
    }
    if det < 0.0 {
        tau = -tau;
    }
    Ok(tau)
}

/// Full tangent solution of the inhomogeneous system `A * tau_tilde = B`
/// for a full-row-rank `m x (m+1)` matrix: oriented kernel direction,
/// minimum-norm particular solution and their `alpha`-weighted combination.
///
/// # Example
///
/// ```
/// use nalgebra::{DMatrix, DVector};
/// let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
/// let b = DVector::from_row_slice(&[1.0]);
/// let sol = homctl::augmented_tangent(&a, &b, 1.0, 1e-9).unwrap();
/// let combined = sol.combined();
/// assert!((combined[0] - 1.0).abs() < 1e-12);
/// assert!((combined[1] - 1.0).abs() < 1e-12);
/// ```
pub fn augmented_tangent(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    alpha: f64,
    rank_tol: f64,
) -> Result<TangentSolution, KernelError> {
    check_finite_vector(b)?;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(KernelError::BadParameter {
            name: "alpha",
            value: alpha,
        });
    }
    if b.len() != a.nrows() {
        return Err(KernelError::Shape {
            rows: b.len(),
            cols: 1,
            expected: "right-hand side of length m",
        });
    }
    let tau = oriented_nullspace_tangent(a, rank_tol)?;
    let pinv = pseudoinverse(a, rank_tol)?;
    let tau_bar = &pinv * b;
    Ok(TangentSolution {
        tau,
        tau_bar,
        alpha,
    })
}
