//! Tall-Wide matrix completion.
//!
//! Given a matrix whose missing cells all sit in the complement of its fully
//! observed rows and columns, TW takes the SVD of the tall block (all rows,
//! observed columns) and of the wide block (observed rows, all columns),
//! aligns the two right-singular bases over the observed columns with an
//! `r × r` rotation, and returns
//!
//! ```text
//! T̂ = U_tall Σ_tall R V_wideᵀ
//! ```
//!
//! restricted to the top `r` singular triplets.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, solve_square, thin_svd};
use crate::matrix::{DenseMatrix, MaskedMatrix};
use crate::scalar::Scalar;

/// Reciprocal-condition threshold below which the rotation solve is rejected.
pub const ROTATION_RCOND_MIN: f64 = 1e-12;

const MAX_REPORTED_CELLS: usize = 10;

/// Fully observed rows and columns of a masked matrix, plus their complements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservedPattern {
    pub r_obs: Vec<usize>,
    pub c_obs: Vec<usize>,
    pub r_miss: Vec<usize>,
    pub c_miss: Vec<usize>,
}

impl ObservedPattern {
    /// Largest rank TW can use on this pattern.
    pub fn max_rank(&self) -> usize {
        self.r_obs.len().min(self.c_obs.len())
    }
}

/// Classifies rows and columns as fully observed or not.
///
/// Any missing cell lies in a row and a column that are not fully observed,
/// so every missing cell is inside `r_miss × c_miss` by construction. The
/// only failure is an empty `r_obs` or `c_obs`.
pub fn detect_pattern<T: Scalar>(s: &MaskedMatrix<T>) -> Result<ObservedPattern> {
    let (n, m) = s.shape();
    let mut row_ok = vec![true; n];
    let mut col_ok = vec![true; m];
    for (i, j) in s.missing_cells() {
        row_ok[i] = false;
        col_ok[j] = false;
    }
    let split = |ok: &[bool]| -> (Vec<usize>, Vec<usize>) { (0..ok.len()).partition(|&k| ok[k]) };
    let (r_obs, r_miss) = split(&row_ok);
    let (c_obs, c_miss) = split(&col_ok);

    let sample = || s.missing_cells().take(MAX_REPORTED_CELLS).collect::<Vec<_>>();
    if r_obs.is_empty() {
        return Err(Error::NoObservedRows { missing: sample() });
    }
    if c_obs.is_empty() {
        return Err(Error::NoObservedCols { missing: sample() });
    }
    Ok(ObservedPattern { r_obs, c_obs, r_miss, c_miss })
}

/// Direction of the regression that aligns the tall and wide bases.
///
/// Both give the same completion on noiseless low-rank inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Regress the tall basis on the wide basis: `R = Ṽ_tallᵀ Ṽ_wide (Ṽ_wideᵀ Ṽ_wide)⁻¹`.
    #[default]
    TallOnWide,
    /// Regress the wide basis on the tall basis and invert: `R = (Ṽ_wideᵀ Ṽ_tall)⁻¹`.
    WideOnTall,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwConfig {
    pub rank: usize,
    #[serde(default)]
    pub orientation: Orientation,
}

impl TwConfig {
    pub fn new(rank: usize) -> Self {
        Self { rank, orientation: Orientation::default() }
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }
}

/// Completes `s` with TW at rank `cfg.rank`. Also denoises observed cells.
pub fn tw_complete<T: Scalar>(s: &MaskedMatrix<T>, cfg: &TwConfig) -> Result<DenseMatrix<T>> {
    let pattern = detect_pattern(s)?;
    check_rank(cfg.rank, pattern.max_rank())?;
    let all_rows: Vec<usize> = (0..s.rows()).collect();
    let all_cols: Vec<usize> = (0..s.cols()).collect();

    let tall = s.observed_block(&all_rows, &pattern.c_obs)?.to_faer();
    let wide = s.observed_block(&pattern.r_obs, &all_cols)?.to_faer();
    let tall = TallFit::new(tall.as_ref(), cfg.rank)?;
    let wide = WideFit::new(wide.as_ref(), cfg.rank)?;
    let left = tall.rotated(&wide, &pattern.c_obs, cfg.orientation)?;
    let out = &left * wide.v.transpose();
    DenseMatrix::from_faer(out.as_ref())
}

pub(crate) fn check_rank(rank: usize, max: usize) -> Result<()> {
    if rank == 0 {
        return Err(Error::invalid("completion rank must be at least 1"));
    }
    if rank > max {
        return Err(Error::RankInfeasible { rank, max });
    }
    Ok(())
}

/// Top-`r` factors of the tall block.
pub(crate) struct TallFit<T> {
    /// `U Σ` restricted to the top `r` triplets, `N × r`.
    us: Mat<T>,
    /// Right singular vectors over the observed columns, `|c_obs| × r`.
    v: Mat<T>,
}

impl<T: Scalar> TallFit<T> {
    pub(crate) fn new(tall: MatRef<'_, T>, rank: usize) -> Result<Self> {
        check_rank(rank, tall.nrows().min(tall.ncols()))?;
        let svd = thin_svd(tall)?;
        let us = Mat::from_fn(tall.nrows(), rank, |i, j| svd.u[(i, j)] * svd.s[j]);
        let v = svd.v.subcols(0, rank).to_owned();
        Ok(Self { us, v })
    }

    /// `U Σ R`, `N × r`; the completion is this times `V_wideᵀ`.
    ///
    /// An all-zero tall block completes to zero whatever the rotation, so the
    /// (then arbitrary) rotation is not solved.
    pub(crate) fn rotated(&self, wide: &WideFit<T>, c_obs: &[usize], orientation: Orientation) -> Result<Mat<T>> {
        let r = self.v.ncols();
        debug_assert_eq!(c_obs.len(), self.v.nrows());
        if self.us.col_iter().all(|c| c.iter().all(|v| *v == T::zero())) {
            return Ok(Mat::zeros(self.us.nrows(), r));
        }
        let vw = Mat::from_fn(c_obs.len(), r, |i, j| wide.v[(c_obs[i], j)]);
        let rot = match orientation {
            Orientation::TallOnWide => {
                require_unit_scale_rank(vw.as_ref())?;
                // Ṽ_wide Q ≈ Ṽ_tall, R = Qᵀ.
                let q = lstsq(vw.as_ref(), self.v.as_ref(), ROTATION_RCOND_MIN)?;
                q.transpose().to_owned()
            }
            Orientation::WideOnTall => {
                // Ṽ_tall B ≈ Ṽ_wide with B = Ṽ_tallᵀ Ṽ_wide (orthonormal Ṽ_tall), R = B⁻ᵀ.
                let b = self.v.transpose() * &vw;
                require_unit_scale_rank(b.as_ref())?;
                let identity = Mat::<T>::identity(r, r);
                solve_square(b.transpose(), identity.as_ref(), ROTATION_RCOND_MIN)?
            }
        };
        Ok(&self.us * &rot)
    }
}

/// Rejects a rotation system whose singular values, all at most one because it
/// is built from orthonormal bases, fall below the conditioning threshold.
/// Ratio-based checks cannot see this when `r = 1`.
fn require_unit_scale_rank<T: Scalar>(m: MatRef<'_, T>) -> Result<()> {
    let smin = thin_svd(m)?.s.last().copied().unwrap_or_else(T::zero).as_f64();
    let rcond = smin * smin;
    if !(rcond >= ROTATION_RCOND_MIN) {
        return Err(Error::RotationSingular { rcond });
    }
    Ok(())
}

/// Top-`r` right singular vectors of the wide block, `M × r`.
pub(crate) struct WideFit<T> {
    pub(crate) v: Mat<T>,
}

impl<T: Scalar> WideFit<T> {
    pub(crate) fn new(wide: MatRef<'_, T>, rank: usize) -> Result<Self> {
        check_rank(rank, wide.nrows().min(wide.ncols()))?;
        let svd = thin_svd(wide)?;
        Ok(Self { v: svd.v.subcols(0, rank).to_owned() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::singular_values;
    use crate::matrix::{norm, Mask, NormKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn low_rank(n: usize, m: usize, r: usize, lo: f64, hi: f64, seed: u64) -> DenseMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = DenseMatrix::from_fn(n, r, |_, _| rng.random_range(lo..hi)).unwrap();
        let v = DenseMatrix::from_fn(m, r, |_, _| rng.random_range(lo..hi)).unwrap();
        u.matmul(&v.transpose()).unwrap()
    }

    fn mask_bottom_right(t: &DenseMatrix<f64>) -> MaskedMatrix<f64> {
        let (n, m) = t.shape();
        let f = Mask::from_fn(n, m, |i, j| !(i >= n / 2 && j >= m / 2)).unwrap();
        MaskedMatrix::new(t, &f).unwrap()
    }

    fn max_err(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> f64 {
        norm(&a.sub(b).unwrap(), NormKind::Max)
    }

    #[test]
    fn pattern_fully_observed() {
        let t = DenseMatrix::filled(4, 4, 1.0).unwrap();
        let p = detect_pattern(&MaskedMatrix::observed(&t)).unwrap();
        assert_eq!(p.r_obs, vec![0, 1, 2, 3]);
        assert_eq!(p.c_obs, vec![0, 1, 2, 3]);
        assert!(p.r_miss.is_empty() && p.c_miss.is_empty());
    }

    #[test]
    fn pattern_diagonal_missing() {
        let t = DenseMatrix::filled(4, 4, 1.0).unwrap();
        let f = Mask::from_fn(4, 4, |i, j| !((i, j) == (2, 2) || (i, j) == (3, 3))).unwrap();
        let p = detect_pattern(&MaskedMatrix::new(&t, &f).unwrap()).unwrap();
        assert_eq!(p.r_obs, vec![0, 1]);
        assert_eq!(p.c_obs, vec![0, 1]);
        assert_eq!(p.r_miss, vec![2, 3]);
        assert_eq!(p.c_miss, vec![2, 3]);
    }

    #[test]
    fn pattern_scattered_cells_still_form_a_block() {
        // {(0,3), (2,0)} ⊆ {0,2} × {0,3}; rows {1,3} and columns {1,2} stay full.
        let t = low_rank(4, 4, 1, 0.5, 1.5, 7);
        let f = Mask::from_fn(4, 4, |i, j| !((i, j) == (0, 3) || (i, j) == (2, 0))).unwrap();
        let s = MaskedMatrix::new(&t, &f).unwrap();
        let p = detect_pattern(&s).unwrap();
        assert_eq!(p.r_obs, vec![1, 3]);
        assert_eq!(p.c_obs, vec![1, 2]);
        let got = tw_complete(&s, &TwConfig::new(1)).unwrap();
        assert!(max_err(&got, &t) < 1e-10);
    }

    #[test]
    fn pattern_without_full_rows_or_columns() {
        let t = DenseMatrix::filled(3, 3, 1.0).unwrap();
        let f = Mask::from_fn(3, 3, |_, j| j != 1).unwrap();
        assert!(matches!(
            detect_pattern(&MaskedMatrix::new(&t, &f).unwrap()),
            Err(Error::NoObservedRows { .. })
        ));
        let f = Mask::from_fn(3, 3, |i, _| i != 2).unwrap();
        assert!(matches!(
            detect_pattern(&MaskedMatrix::new(&t, &f).unwrap()),
            Err(Error::NoObservedCols { .. })
        ));
        // A fully missing row leaves every column incomplete.
        let mut cells = vec![Some(1.0); 9];
        for c in cells.iter_mut().take(3) {
            *c = None;
        }
        let s = MaskedMatrix::from_options(3, 3, &cells).unwrap();
        assert!(matches!(detect_pattern(&s), Err(Error::NoObservedCols { missing }) if missing.len() == 3));
    }

    #[test]
    fn rank_one_quadrant_recovery() {
        let t = low_rank(8, 8, 1, 0.5, 1.5, 11);
        let got = tw_complete(&mask_bottom_right(&t), &TwConfig::new(1)).unwrap();
        assert!(max_err(&got, &t) < 1e-8);
    }

    #[test]
    fn fully_observed_denoising_path() {
        let t = low_rank(9, 6, 2, -1.0, 1.0, 3);
        let got = tw_complete(&MaskedMatrix::observed(&t), &TwConfig::new(2)).unwrap();
        assert!(max_err(&got, &t) < 1e-8);
    }

    #[test]
    fn rank_checks() {
        let t = low_rank(8, 8, 1, 0.5, 1.5, 1);
        let s = mask_bottom_right(&t);
        assert!(matches!(
            tw_complete(&s, &TwConfig::new(5)),
            Err(Error::RankInfeasible { rank: 5, max: 4 })
        ));
        assert!(matches!(tw_complete(&s, &TwConfig::new(0)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn output_has_rank_at_most_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noisy = DenseMatrix::from_fn(12, 10, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let got = tw_complete(&mask_bottom_right(&noisy), &TwConfig::new(2)).unwrap();
        let s = singular_values(&got).unwrap();
        assert!(s[2] < 1e-8 * s[0]);
    }

    #[test]
    fn orientations_agree_on_noiseless_inputs() {
        for seed in 0..10 {
            for r in 1..=3 {
                let t = low_rank(16, 8, r, -1.0, 1.0, seed);
                let s = mask_bottom_right(&t);
                let a = tw_complete(&s, &TwConfig::new(r)).unwrap();
                let b = tw_complete(&s, &TwConfig::new(r).with_orientation(Orientation::WideOnTall)).unwrap();
                assert!((max_err(&a, &t) - max_err(&b, &t)).abs() < 1e-6);
                assert!(max_err(&b, &t) < 1e-8);
            }
        }
    }

    #[test]
    fn singular_rotation_is_reported() {
        // Observed columns carry no signal from the second factor.
        let t = DenseMatrix::from_fn(6, 6, |i, j| {
            let a = (i + 1) as f64;
            let b = if j < 3 { 1.0 } else { 0.0 };
            let c = if j >= 3 { (i * i) as f64 + 1.0 } else { 0.0 };
            a * b + c
        })
        .unwrap();
        let f = Mask::from_fn(6, 6, |i, j| !(i >= 3 && j >= 3)).unwrap();
        let err = tw_complete(&MaskedMatrix::new(&t, &f).unwrap(), &TwConfig::new(2)).unwrap_err();
        assert!(matches!(err, Error::RotationSingular { .. }), "{err:?}");
        assert!(err.is_numerical());
    }

    #[test]
    fn rank_one_rotation_with_vanishing_overlap_is_singular() {
        // the observed rows are zero on the observed columns
        let s = MaskedMatrix::from_options(
            4,
            4,
            &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 2.0, 1.0, 1.0, -1.0, -1.0, 1.0, 2.0, -1.0, -1.0]
                .iter()
                .enumerate()
                .map(|(k, &v)| if k / 4 >= 2 && k % 4 >= 2 { None } else { Some(v) })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        for o in [Orientation::TallOnWide, Orientation::WideOnTall] {
            let err = tw_complete(&s, &TwConfig::new(1).with_orientation(o)).unwrap_err();
            assert!(matches!(err, Error::RotationSingular { .. }), "{err:?}");
        }
    }

    #[test]
    fn zero_tall_block_completes_to_zero() {
        let t = DenseMatrix::<f64>::zeros(6, 6).unwrap();
        let f = Mask::from_fn(6, 6, |i, j| !(i >= 3 && j >= 3)).unwrap();
        let got = tw_complete(&MaskedMatrix::new(&t, &f).unwrap(), &TwConfig::new(2)).unwrap();
        assert_eq!(got, t);
    }

    #[test]
    fn works_in_single_precision() {
        let t = low_rank(8, 8, 1, 0.5, 1.5, 2).cast::<f32>().unwrap();
        let f = Mask::from_fn(8, 8, |i, j| !(i >= 4 && j >= 4)).unwrap();
        let got = tw_complete(&MaskedMatrix::new(&t, &f).unwrap(), &TwConfig::new(1)).unwrap();
        assert!(norm(&got.sub(&t).unwrap(), NormKind::Max) < 1e-4);
    }
}
