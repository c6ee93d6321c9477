//! Thin wrappers over faer's dense decompositions.

use faer::{Mat, MatRef};
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Thin SVD `A = U diag(s) Vᵀ` with singular values in non-increasing order.
///
/// Each left singular vector is sign-normalized so that its largest-magnitude
/// entry (first one on ties) is positive; the matching right vector is
/// flipped with it.
pub(crate) struct ThinSvd<T> {
    pub u: Mat<T>,
    pub s: Vec<T>,
    pub v: Mat<T>,
}

pub(crate) fn thin_svd<T: Scalar>(a: MatRef<'_, T>) -> Result<ThinSvd<T>> {
    let svd = a.thin_svd().map_err(|_| Error::SvdFailed)?;
    let k = a.nrows().min(a.ncols());
    let sv = svd.S().column_vector();
    let mut s: Vec<T> = (0..k).map(|i| sv[i]).collect();
    let mut u = svd.U().to_owned();
    let mut v = svd.V().to_owned();
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::SvdFailed);
    }

    // faer already sorts descending; enforce it so truncation is always top-r.
    if s.windows(2).any(|w| w[0] < w[1]) {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).expect("finite singular values"));
        u = Mat::from_fn(u.nrows(), k, |i, j| u[(i, order[j])]);
        v = Mat::from_fn(v.nrows(), k, |i, j| v[(i, order[j])]);
        s = order.iter().map(|&i| s[i]).collect();
    }

    for j in 0..k {
        let mut best = 0;
        let mut best_abs = T::zero();
        for i in 0..u.nrows() {
            let x = Float::abs(u[(i, j)]);
            if x > best_abs {
                best_abs = x;
                best = i;
            }
        }
        if u[(best, j)] < T::zero() {
            for i in 0..u.nrows() {
                u[(i, j)] = -u[(i, j)];
            }
            for i in 0..v.nrows() {
                v[(i, j)] = -v[(i, j)];
            }
        }
    }
    Ok(ThinSvd { u, s, v })
}

/// Least-squares solution `X` of `A X ≈ B` through the SVD of `A`.
///
/// `A` must have full column rank: the reciprocal condition number of `AᵀA`,
/// `(s_min / s_max)²`, must be at least `rcond_min`.
pub(crate) fn lstsq<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, rcond_min: f64) -> Result<Mat<T>> {
    debug_assert_eq!(a.nrows(), b.nrows());
    let svd = thin_svd(a)?;
    let k = svd.s.len();
    let smax = svd.s.first().copied().unwrap_or_else(T::zero);
    let smin = svd.s.last().copied().unwrap_or_else(T::zero);
    let rcond = if smax > T::zero() {
        (smin / smax).as_f64().powi(2)
    } else {
        0.0
    };
    if k < a.ncols() || !(rcond >= rcond_min) {
        return Err(Error::RotationSingular { rcond });
    }
    // X = V diag(1/s) Uᵀ B
    let utb = svd.u.transpose() * b;
    let scaled = Mat::from_fn(k, b.ncols(), |i, j| utb[(i, j)] / svd.s[i]);
    Ok(&svd.v * &scaled)
}

/// Square solve `A X = B` guarded by the same conditioning check as [`lstsq`].
pub(crate) fn solve_square<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, rcond_min: f64) -> Result<Mat<T>> {
    debug_assert_eq!(a.nrows(), a.ncols());
    lstsq(a, b, rcond_min)
}

/// Singular values only, in non-increasing order.
pub fn singular_values<T: Scalar>(a: &crate::matrix::DenseMatrix<T>) -> Result<Vec<T>> {
    Ok(thin_svd(a.to_faer().as_ref())?.s)
}

/// Number of singular values above `tol · s₁`.
pub fn numerical_rank<T: Scalar>(a: &crate::matrix::DenseMatrix<T>, tol: f64) -> Result<usize> {
    let s = singular_values(a)?;
    let s1 = s.first().map_or(0.0, |v| v.as_f64());
    Ok(s.iter().filter(|v| v.as_f64() > tol * s1).count())
}
