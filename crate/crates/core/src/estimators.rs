//! Outcome-imputation (OI), inverse-probability-weighting (IPW) and
//! doubly-robust (DR) estimators of the per-outcome average treatment effect
//!
//! ```text
//! τ_j = (1/N) Σ_i θ¹_{i,j} − (1/N) Σ_i θ⁰_{i,j}
//! ```
//!
//! DR adds an inverse-probability-weighted residual to each imputed cell:
//!
//! ```text
//! θ̂¹ᴰᴿ = θ̂¹ + (y − θ̂¹) a / p̂        θ̂⁰ᴰᴿ = θ̂⁰ + (y − θ̂⁰)(1 − a) / (1 − p̂)
//! ```
//!
//! and is asymptotically normal with variance estimated by
//! `σ̂² = (1/N) Σ (y − θ̂¹)² a / p̂² + (1/N) Σ (y − θ̂⁰)² (1 − a) / (1 − p̂)²`.
//! Only DR carries standard errors and confidence intervals; the variance
//! estimate is consistent only when the nuisances were fitted independently
//! of the noise they are applied to, which cross-fitting is designed to give
//! and which cannot be checked from data.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cfsvd::NuisanceEstimates;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "OI")]
    Oi,
    #[serde(rename = "IPW")]
    Ipw,
    #[serde(rename = "DR")]
    Dr,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Oi, EstimatorKind::Ipw, EstimatorKind::Dr];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Oi => "OI",
            EstimatorKind::Ipw => "IPW",
            EstimatorKind::Dr => "DR",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oi" => Ok(EstimatorKind::Oi),
            "ipw" => Ok(EstimatorKind::Ipw),
            "dr" => Ok(EstimatorKind::Dr),
            other => Err(Error::Parse(format!("unknown estimator {other:?}; expected oi, ipw or dr"))),
        }
    }
}

/// One effect estimate for outcome `outcome_index`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteResult<T> {
    pub outcome_index: usize,
    pub estimator: EstimatorKind,
    pub estimate: T,
    /// `σ̂_j / √N`; DR only.
    pub std_error: Option<T>,
    pub ci_low: Option<T>,
    pub ci_high: Option<T>,
    pub n_units: usize,
}

/// True mean matrices, propensities and per-cell noise standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<T> {
    pub theta0: DenseMatrix<T>,
    pub theta1: DenseMatrix<T>,
    pub p: DenseMatrix<T>,
    pub sigma0: DenseMatrix<T>,
    pub sigma1: DenseMatrix<T>,
}

impl<T: Scalar> GroundTruth<T> {
    /// Requires equal shapes, `p` in `[0, 1]` and non-negative sigmas.
    ///
    /// The boundary values of `p` are admitted so degenerate designs can be
    /// sampled; [`true_asymptotic_variance`] needs `p` strictly inside.
    pub fn new(
        theta0: DenseMatrix<T>,
        theta1: DenseMatrix<T>,
        p: DenseMatrix<T>,
        sigma0: DenseMatrix<T>,
        sigma1: DenseMatrix<T>,
    ) -> Result<Self> {
        for other in [&theta1, &p, &sigma0, &sigma1] {
            theta0.require_same_shape(other, "ground truth")?;
        }
        for (k, &v) in p.as_slice().iter().enumerate() {
            if v < T::zero() || v > T::one() {
                return Err(Error::ProbabilityBoundary {
                    row: k / p.cols(),
                    col: k % p.cols(),
                    value: v.as_f64(),
                });
            }
        }
        for s in [&sigma0, &sigma1] {
            if s.min_value() < T::zero() {
                return Err(Error::invalid("noise standard deviations must be non-negative"));
            }
        }
        Ok(Self { theta0, theta1, p, sigma0, sigma1 })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.p.shape()
    }
}

pub(crate) fn check_column<T: Scalar>(m: &DenseMatrix<T>, j: usize) -> Result<()> {
    if j >= m.cols() {
        return Err(Error::IndexOutOfRange { index: j, len: m.cols() });
    }
    Ok(())
}

pub(crate) fn check_open_unit<T: Scalar>(p: &DenseMatrix<T>, j: usize) -> Result<()> {
    for i in 0..p.rows() {
        let v = p.get(i, j);
        if !(v > T::zero() && v < T::one()) {
            return Err(Error::ProbabilityBoundary { row: i, col: j, value: v.as_f64() });
        }
    }
    Ok(())
}

pub(crate) fn check_binary_column<T: Scalar>(a: &DenseMatrix<T>, j: usize) -> Result<()> {
    for i in 0..a.rows() {
        let v = a.get(i, j);
        if v != T::zero() && v != T::one() {
            return Err(Error::NotBinary { row: i, col: j, value: v.as_f64() });
        }
    }
    Ok(())
}

/// Left-to-right sum divided by the count. Every column average goes
/// through here so that algebraically equal estimators agree bit-for-bit.
pub(crate) fn mean_of<T: Scalar>(values: impl Iterator<Item = T>, n: usize) -> T {
    values.fold(T::zero(), |acc, v| acc + v) / T::from_count(n)
}

/// DR pseudo-outcome for arm 1.
#[inline]
pub(crate) fn dr_cell1<T: Scalar>(theta1: T, outcome: T, a: T, p: T) -> T {
    theta1 + (outcome - theta1) * a / p
}

/// DR pseudo-outcome for arm 0.
#[inline]
pub(crate) fn dr_cell0<T: Scalar>(theta0: T, outcome: T, a: T, p: T) -> T {
    theta0 + (outcome - theta0) * (T::one() - a) / (T::one() - p)
}

/// `τ_j` from the true mean matrices.
pub fn true_ate<T: Scalar>(gt: &GroundTruth<T>, j: usize) -> Result<T> {
    check_column(&gt.theta0, j)?;
    Ok(gt.theta1.column_mean(j)? - gt.theta0.column_mean(j)?)
}

/// Column-mean difference of the imputed matrices.
pub fn oi_estimate<T: Scalar>(est: &NuisanceEstimates<T>, j: usize) -> Result<AteResult<T>> {
    check_column(&est.p_hat, j)?;
    let n = est.p_hat.rows();
    let mu1 = mean_of((0..n).map(|i| est.theta1_hat.get(i, j)), n);
    let mu0 = mean_of((0..n).map(|i| est.theta0_hat.get(i, j)), n);
    Ok(AteResult {
        outcome_index: j,
        estimator: EstimatorKind::Oi,
        estimate: mu1 - mu0,
        std_error: None,
        ci_low: None,
        ci_high: None,
        n_units: n,
    })
}

/// Horvitz-Thompson style weighting of observed outcomes by `1/p̂` and `1/(1 − p̂)`.
pub fn ipw_estimate<T: Scalar>(
    y: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    p_hat: &DenseMatrix<T>,
    j: usize,
) -> Result<AteResult<T>> {
    y.require_same_shape(a, "ipw_estimate")?;
    y.require_same_shape(p_hat, "ipw_estimate")?;
    check_column(y, j)?;
    check_binary_column(a, j)?;
    check_open_unit(p_hat, j)?;
    let n = y.rows();
    let one = T::one();
    let mu1 = mean_of((0..n).map(|i| y.get(i, j) * a.get(i, j) / p_hat.get(i, j)), n);
    let mu0 = mean_of(
        (0..n).map(|i| y.get(i, j) * (one - a.get(i, j)) / (one - p_hat.get(i, j))),
        n,
    );
    Ok(AteResult {
        outcome_index: j,
        estimator: EstimatorKind::Ipw,
        estimate: mu1 - mu0,
        std_error: None,
        ci_low: None,
        ci_high: None,
        n_units: n,
    })
}

/// DR point estimate and `σ̂_j²` for column `j`.
pub fn dr_point_and_variance<T: Scalar>(
    y: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    est: &NuisanceEstimates<T>,
    j: usize,
) -> Result<(T, T)> {
    y.require_same_shape(a, "dr_estimate")?;
    y.require_same_shape(&est.p_hat, "dr_estimate")?;
    check_column(y, j)?;
    check_binary_column(a, j)?;
    check_open_unit(&est.p_hat, j)?;
    let n = y.rows();
    let one = T::one();
    let cell = |i: usize| (y.get(i, j), a.get(i, j), est.p_hat.get(i, j));
    let mu1 = mean_of(
        (0..n).map(|i| {
            let (yv, av, pv) = cell(i);
            dr_cell1(est.theta1_hat.get(i, j), yv, av, pv)
        }),
        n,
    );
    let mu0 = mean_of(
        (0..n).map(|i| {
            let (yv, av, pv) = cell(i);
            dr_cell0(est.theta0_hat.get(i, j), yv, av, pv)
        }),
        n,
    );
    let var1 = mean_of(
        (0..n).map(|i| {
            let (yv, av, pv) = cell(i);
            let r = yv - est.theta1_hat.get(i, j);
            r * r * av / (pv * pv)
        }),
        n,
    );
    let var0 = mean_of(
        (0..n).map(|i| {
            let (yv, av, pv) = cell(i);
            let r = yv - est.theta0_hat.get(i, j);
            r * r * (one - av) / ((one - pv) * (one - pv))
        }),
        n,
    );
    Ok((mu1 - mu0, var1 + var0))
}

/// DR estimate with a two-sided normal confidence interval at `level`.
pub fn dr_estimate<T: Scalar>(
    y: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    est: &NuisanceEstimates<T>,
    j: usize,
    level: f64,
) -> Result<AteResult<T>> {
    let z = T::lit(two_sided_z(level)?);
    let (tau, var) = dr_point_and_variance(y, a, est, j)?;
    let n = y.rows();
    let se = var.sqrt() / T::from_count(n).sqrt();
    Ok(AteResult {
        outcome_index: j,
        estimator: EstimatorKind::Dr,
        estimate: tau,
        std_error: Some(se),
        ci_low: Some(tau - z * se),
        ci_high: Some(tau + z * se),
        n_units: n,
    })
}

/// Every requested estimator for every column, ordered by column then kind.
pub fn estimate_all<T: Scalar>(
    y: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    est: &NuisanceEstimates<T>,
    level: f64,
    kinds: &[EstimatorKind],
) -> Result<Vec<AteResult<T>>> {
    two_sided_z(level)?;
    y.require_same_shape(&est.p_hat, "estimate_all")?;
    let mut out = Vec::with_capacity(y.cols() * kinds.len());
    for j in 0..y.cols() {
        for &kind in kinds {
            out.push(match kind {
                EstimatorKind::Oi => oi_estimate(est, j)?,
                EstimatorKind::Ipw => ipw_estimate(y, a, &est.p_hat, j)?,
                EstimatorKind::Dr => dr_estimate(y, a, est, j, level)?,
            });
        }
    }
    Ok(out)
}

/// `σ̄_j² = (1/N) Σ (σ¹)²/p + (1/N) Σ (σ⁰)²/(1 − p)` over column `j`.
pub fn true_asymptotic_variance<T: Scalar>(gt: &GroundTruth<T>, j: usize) -> Result<T> {
    check_column(&gt.p, j)?;
    check_open_unit(&gt.p, j)?;
    let n = gt.p.rows();
    let one = T::one();
    let v1 = mean_of(
        (0..n).map(|i| {
            let s = gt.sigma1.get(i, j);
            s * s / gt.p.get(i, j)
        }),
        n,
    );
    let v0 = mean_of(
        (0..n).map(|i| {
            let s = gt.sigma0.get(i, j);
            s * s / (one - gt.p.get(i, j))
        }),
        n,
    );
    Ok(v1 + v0)
}

/// `Φ⁻¹(1 − (1 − level)/2)`.
pub fn two_sided_z(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level must lie in (0, 1), got {level}")));
    }
    Ok(normal_quantile(1.0 - (1.0 - level) / 2.0))
}

/// Inverse standard-normal CDF by Acklam's rational approximation
/// (relative error below 1.2e-9 on (0, 1)). `normal_quantile(0.975) ≈ 1.959964`.
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn col(values: &[f64]) -> DenseMatrix<f64> {
        DenseMatrix::column_vector(values).unwrap()
    }

    fn est(theta0: &[f64], theta1: &[f64], p: &[f64]) -> NuisanceEstimates<f64> {
        NuisanceEstimates::new(col(theta0), col(theta1), col(p)).unwrap()
    }

    fn gt(theta0: &[f64], theta1: &[f64], p: &[f64], s0: &[f64], s1: &[f64]) -> GroundTruth<f64> {
        GroundTruth::new(col(theta0), col(theta1), col(p), col(s0), col(s1)).unwrap()
    }

    #[test]
    fn true_ate_examples() {
        let g = gt(&[0., 2.], &[2., 4.], &[0.5, 0.5], &[1., 1.], &[1., 1.]);
        assert_eq!(true_ate(&g, 0).unwrap(), 2.0);
        let same = gt(&[1., 5.], &[1., 5.], &[0.5, 0.5], &[0., 0.], &[0., 0.]);
        assert_eq!(true_ate(&same, 0).unwrap(), 0.0);
        let single = gt(&[1.5], &[4.0], &[0.3], &[0.], &[0.]);
        assert_eq!(true_ate(&single, 0).unwrap(), 2.5);
        assert!(matches!(true_ate(&g, 1), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn oi_examples() {
        assert_eq!(oi_estimate(&est(&[0., 2.], &[2., 4.], &[0.5, 0.5]), 0).unwrap().estimate, 2.0);
        let r = oi_estimate(&est(&[3., 1.], &[3., 1.], &[0.5, 0.5]), 0).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert!(r.std_error.is_none() && r.ci_low.is_none() && r.ci_high.is_none());
    }

    #[test]
    fn ipw_examples() {
        let p = col(&[0.5, 0.5]);
        let r = ipw_estimate(&col(&[2., 2.]), &col(&[1., 0.]), &p, 0).unwrap();
        assert_eq!(r.estimate, 0.0);
        let r = ipw_estimate(&col(&[3., 3.]), &col(&[1., 1.]), &p, 0).unwrap();
        assert_eq!(r.estimate, 6.0);
        let r = ipw_estimate(&col(&[0., 0.]), &col(&[1., 0.]), &p, 0).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert!(matches!(
            ipw_estimate(&col(&[1., 1.]), &col(&[1., 0.]), &col(&[1.0, 0.5]), 0),
            Err(Error::ProbabilityBoundary { row: 0, .. })
        ));
    }

    #[test]
    fn dr_examples() {
        let e = est(&[0., 2.], &[2., 4.], &[0.5, 0.5]);
        let a = col(&[1., 0.]);
        let r = dr_estimate(&col(&[2., 2.]), &a, &e, 0, 0.95).unwrap();
        // μ̂¹ = (2 + 4)/2 = 3 and μ̂⁰ = (0 + 2)/2 = 1.
        assert_eq!(r.estimate, 2.0);

        let (tau, var) = dr_point_and_variance(&col(&[3., 1.]), &a, &e, 0).unwrap();
        assert_eq!(var, 4.0);
        let r = dr_estimate(&col(&[3., 1.]), &a, &e, 0, 0.95).unwrap();
        assert_eq!(r.estimate, tau);
        let se = r.std_error.unwrap();
        assert!((se - 2.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((r.ci_high.unwrap() - tau - 1.959964 * se).abs() < 1e-6);
        assert!(r.ci_low.unwrap() <= r.estimate && r.estimate <= r.ci_high.unwrap());
        assert!(dr_estimate(&col(&[3., 1.]), &a, &e, 0, 1.0).is_err());
    }

    #[test]
    fn dr_reduces_to_oi_when_imputation_matches_outcomes() {
        let y = col(&[1.5, -2.0, 0.25]);
        let a = col(&[1., 0., 1.]);
        let e = est(&[7.0, -2.0, 3.0], &[1.5, 9.0, 0.25], &[0.3, 0.6, 0.9]);
        let dr = dr_estimate(&y, &a, &e, 0, 0.95).unwrap();
        assert_eq!(dr.estimate, oi_estimate(&e, 0).unwrap().estimate);
        assert_eq!(dr.std_error, Some(0.0));
    }

    #[test]
    fn estimate_all_layout() {
        let e = est(&[0., 2.], &[2., 4.], &[0.5, 0.5]);
        let out = estimate_all(&col(&[2., 2.]), &col(&[1., 0.]), &e, 0.95, &EstimatorKind::ALL).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.iter().map(|r| r.estimator).collect::<Vec<_>>(), EstimatorKind::ALL);
        assert!(out[2].ci_low.is_some());
    }

    #[test]
    fn true_variance_examples() {
        let g = gt(&[0., 0.], &[0., 0.], &[0.5, 0.5], &[1., 1.], &[1., 1.]);
        assert_eq!(true_asymptotic_variance(&g, 0).unwrap(), 4.0);
        let g = gt(&[0.], &[0.], &[0.5], &[0.], &[0.]);
        assert_eq!(true_asymptotic_variance(&g, 0).unwrap(), 0.0);
        let g = gt(&[0.], &[0.], &[0.25], &[0.], &[2.]);
        assert_eq!(true_asymptotic_variance(&g, 0).unwrap(), 16.0);
        let g = gt(&[0.], &[0.], &[1.0], &[0.], &[2.]);
        assert!(matches!(true_asymptotic_variance(&g, 0), Err(Error::ProbabilityBoundary { .. })));
    }

    #[test]
    fn ground_truth_validation() {
        assert!(GroundTruth::new(col(&[0.]), col(&[0.]), col(&[1.2]), col(&[0.]), col(&[0.])).is_err());
        assert!(GroundTruth::new(col(&[0.]), col(&[0.]), col(&[0.2]), col(&[-1.]), col(&[0.])).is_err());
        assert!(GroundTruth::new(col(&[0.]), col(&[0., 1.]), col(&[0.2]), col(&[0.]), col(&[0.])).is_err());
    }

    #[test]
    fn quantile_matches_reference_cdf() {
        let n = Normal::standard();
        assert!((normal_quantile(0.975) - 1.959964).abs() < 1e-6);
        for k in 1..2000 {
            let p = k as f64 / 2000.0;
            let z = normal_quantile(p);
            assert!((z - n.inverse_cdf(p)).abs() < 1e-8 * (1.0 + z.abs()), "p={p}");
        }
        for p in [1e-10, 1e-6, 0.001, 0.999, 1.0 - 1e-6] {
            assert!((normal_quantile(p) - n.inverse_cdf(p)).abs() < 1e-8 * normal_quantile(p).abs());
        }
        assert_eq!(normal_quantile(0.5), 0.0);
        assert_eq!(two_sided_z(0.95).unwrap(), normal_quantile(0.975));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("DR".parse::<EstimatorKind>().unwrap(), EstimatorKind::Dr);
        assert_eq!(" ipw".parse::<EstimatorKind>().unwrap(), EstimatorKind::Ipw);
        assert!("foo".parse::<EstimatorKind>().is_err());
        assert_eq!(serde_json::to_string(&EstimatorKind::Oi).unwrap(), "\"OI\"");
    }
}
