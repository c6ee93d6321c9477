//! Simulation data-generating process with confounding through shared unit factors.
//!
//! With `r = max(r_p, r_θ)`, factors `U` (N×r) and `V, V⁰, V¹` (M×r) are drawn
//! iid from `Uniform[√λ, √(1−λ))`. Then
//!
//! ```text
//! P  = (1/r_p) U[:, :r_p] V[:, :r_p]ᵀ                      ∈ [λ, 1 − λ]
//! Θᵃ = cᵃ Sum(Σᵃ)/r_θ · Uᵃ[:, :r_θ] Wᵃ[:, :r_θ]ᵀ,   (Uᵃ, Σᵃ, Wᵃ) = SVD(U Vᵃᵀ)
//! ```
//!
//! and every cell of arm `a` gets noise standard deviation equal to the
//! population standard deviation of the entries of `Θᵃ`. A realization draws
//! `a ~ Bernoulli(p)` and `εᵃ ~ N(0, σᵃ²)` independently per cell.
//!
//! Randomness is ChaCha8 seeded from a single `u64`. The ground truth uses
//! stream 0 and replication `k` uses stream `k + 1`, so each replication is a
//! pure function of `(seed, k)`. Normals come from `rand_distr`'s ziggurat
//! sampler; bit-identity is promised per platform only.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimators::GroundTruth;
use crate::linalg::thin_svd;
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

/// Parameters of the ground-truth draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DgpParams {
    pub n: usize,
    pub m: usize,
    pub r_p: usize,
    pub r_theta: usize,
    pub lambda: f64,
    pub c0: f64,
    pub c1: f64,
}

impl DgpParams {
    pub fn factor_rank(&self) -> usize {
        self.r_p.max(self.r_theta)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.r_p == 0 || self.r_theta == 0 {
            errors.push("r_p and r_theta must be at least 1".to_string());
        }
        if self.factor_rank() > self.n.min(self.m) {
            errors.push(format!(
                "max(r_p, r_theta) = {} exceeds min(n, m) = {}",
                self.factor_rank(),
                self.n.min(self.m)
            ));
        }
        if !(self.lambda > 0.0 && self.lambda <= 0.5) {
            errors.push(format!("lambda must lie in (0, 0.5], got {}", self.lambda));
        }
        for (name, c) in [("c0", self.c0), ("c1", self.c1)] {
            if !(c > 0.0 && c.is_finite()) {
                errors.push(format!("{name} must be positive, got {c}"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errors))
        }
    }
}

/// Latent factors behind a ground truth draw.
#[derive(Clone, Debug, PartialEq)]
pub struct DgpFactors<T> {
    /// `N × r`, shared by `P`, `Θ⁰` and `Θ¹`.
    pub u_shared: DenseMatrix<T>,
    /// `M × r` factors of `P`, `Θ⁰` and `Θ¹`.
    pub v: DenseMatrix<T>,
    pub v0: DenseMatrix<T>,
    pub v1: DenseMatrix<T>,
}

/// RNG for the ground truth (`None`) or for replication `k`.
pub fn stream_rng(seed: u64, replication: Option<u64>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication.map_or(0, |k| k + 1));
    rng
}

/// Draws `U, V, V⁰, V¹` in that order, each row-major.
pub fn sample_factors<T: Scalar, R: Rng + ?Sized>(params: &DgpParams, rng: &mut R) -> Result<DgpFactors<T>> {
    params.validate()?;
    let r = params.factor_rank();
    let lo = params.lambda.sqrt();
    let hi = (1.0 - params.lambda).sqrt();
    let mut draw = |rows: usize| {
        let data: Vec<T> = (0..rows * r)
            .map(|_| if lo < hi { T::lit(rng.random_range(lo..hi)) } else { T::lit(lo) })
            .collect();
        DenseMatrix::from_vec(rows, r, data)
    };
    let u_shared = draw(params.n)?;
    let v = draw(params.m)?;
    let v0 = draw(params.m)?;
    let v1 = draw(params.m)?;
    Ok(DgpFactors { u_shared, v, v0, v1 })
}

/// `P = (1/r_p) U[:, :r_p] V[:, :r_p]ᵀ`.
pub fn propensity_from_factors<T: Scalar>(f: &DgpFactors<T>, r_p: usize) -> Result<DenseMatrix<T>> {
    let cols: Vec<usize> = (0..r_p).collect();
    let rows_u: Vec<usize> = (0..f.u_shared.rows()).collect();
    let rows_v: Vec<usize> = (0..f.v.rows()).collect();
    let u = f.u_shared.select(&rows_u, &cols)?;
    let v = f.v.select(&rows_v, &cols)?;
    u.matmul(&v.transpose())?.scale(T::one() / T::from_count(r_p))
}

/// `c Sum(Σ)/r_θ · U'[:, :r_θ] W[:, :r_θ]ᵀ` for `(U', Σ, W) = SVD(U Vᵃᵀ)`.
///
/// The SVD of the rank-`r` product is taken through thin QR factors of `U`
/// and `Vᵃ` and an `r × r` SVD, then sign-normalized like every other SVD in
/// the crate.
pub fn mean_outcomes_from_factors<T: Scalar>(
    u: &DenseMatrix<T>,
    va: &DenseMatrix<T>,
    r_theta: usize,
    c: f64,
) -> Result<DenseMatrix<T>> {
    let r = u.cols();
    if r_theta == 0 || r_theta > r {
        return Err(Error::RankInfeasible { rank: r_theta, max: r });
    }
    let qr_u = u.to_faer().qr();
    let qr_v = va.to_faer().qr();
    let q_u = qr_u.compute_thin_Q();
    let q_v = qr_v.compute_thin_Q();
    let core = qr_u.thin_R() * qr_v.thin_R().transpose();
    let svd = thin_svd(core.as_ref())?;
    let mut left = &q_u * &svd.u;
    let mut right = &q_v * &svd.v;
    // Sign convention applies to the full-length left vectors.
    for k in 0..r {
        let mut best = 0;
        for i in 0..left.nrows() {
            if left[(i, k)].abs() > left[(best, k)].abs() {
                best = i;
            }
        }
        if left[(best, k)] < T::zero() {
            for i in 0..left.nrows() {
                left[(i, k)] = -left[(i, k)];
            }
            for i in 0..right.nrows() {
                right[(i, k)] = -right[(i, k)];
            }
        }
    }
    let total = svd.s.iter().fold(T::zero(), |acc, &s| acc + s);
    let scale = T::lit(c) * total / T::from_count(r_theta);
    let l = Mat::from_fn(left.nrows(), r_theta, |i, k| left[(i, k)] * scale);
    let w = right.subcols(0, r_theta);
    let theta = &l * w.transpose();
    DenseMatrix::from_faer(theta.as_ref())
}

/// Population standard deviation of all entries.
pub fn entry_std<T: Scalar>(m: &DenseMatrix<T>) -> T {
    let mean = m.mean();
    let ss = m.as_slice().iter().fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean));
    (ss / T::from_count(m.as_slice().len())).sqrt()
}

/// Ground truth from given factors.
pub fn ground_truth_from_factors<T: Scalar>(params: &DgpParams, f: &DgpFactors<T>) -> Result<GroundTruth<T>> {
    params.validate()?;
    let p = propensity_from_factors(f, params.r_p)?;
    let theta0 = mean_outcomes_from_factors(&f.u_shared, &f.v0, params.r_theta, params.c0)?;
    let theta1 = mean_outcomes_from_factors(&f.u_shared, &f.v1, params.r_theta, params.c1)?;
    let (n, m) = p.shape();
    let sigma0 = DenseMatrix::filled(n, m, entry_std(&theta0))?;
    let sigma1 = DenseMatrix::filled(n, m, entry_std(&theta1))?;
    GroundTruth::new(theta0, theta1, p, sigma0, sigma1)
}

/// Draws factors from `rng` and builds the ground truth.
pub fn generate_ground_truth<T: Scalar, R: Rng + ?Sized>(params: &DgpParams, rng: &mut R) -> Result<GroundTruth<T>> {
    let f = sample_factors(params, rng)?;
    ground_truth_from_factors(params, &f)
}

/// One draw of `(Y, A)`.
///
/// Every cell consumes one uniform and two standard normals in row-major
/// order whatever its assignment, so draws stay aligned across designs.
pub fn sample_realization<T: Scalar, R: Rng + ?Sized>(
    gt: &GroundTruth<T>,
    rng: &mut R,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    let (n, m) = gt.shape();
    let mut y = Vec::with_capacity(n * m);
    let mut a = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            let u: f64 = rng.random();
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            let treated = u < gt.p.get(i, j).as_f64();
            let out = if treated {
                gt.theta1.get(i, j) + gt.sigma1.get(i, j) * T::lit(e1)
            } else {
                gt.theta0.get(i, j) + gt.sigma0.get(i, j) * T::lit(e0)
            };
            y.push(out);
            a.push(if treated { T::one() } else { T::zero() });
        }
    }
    Ok((DenseMatrix::from_vec(n, m, y)?, DenseMatrix::from_vec(n, m, a)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{numerical_rank, singular_values};
    use crate::matrix::{khatri_rao, norm, NormKind};

    fn params(n: usize, m: usize, r_p: usize, r_theta: usize) -> DgpParams {
        DgpParams { n, m, r_p, r_theta, lambda: 0.05, c0: 1.0, c1: 2.0 }
    }

    #[test]
    fn lower_bound_factors_give_lower_bound_propensity() {
        let lo = 0.05f64.sqrt();
        let p = params(4, 3, 1, 1);
        let f = DgpFactors {
            u_shared: DenseMatrix::filled(4, 1, lo).unwrap(),
            v: DenseMatrix::filled(3, 1, lo).unwrap(),
            v0: DenseMatrix::filled(3, 1, lo).unwrap(),
            v1: DenseMatrix::filled(3, 1, lo).unwrap(),
        };
        let prop = propensity_from_factors(&f, p.r_p).unwrap();
        assert!(prop.as_slice().iter().all(|&v| (v - 0.05).abs() < 1e-15));
    }

    #[test]
    fn default_settings_generate_valid_truth() {
        let p = params(60, 50, 3, 3);
        let gt: GroundTruth<f64> = generate_ground_truth(&p, &mut stream_rng(1, None)).unwrap();
        assert!(gt.p.min_value() >= 0.05 && gt.p.max_value() <= 0.95);
        for theta in [&gt.theta0, &gt.theta1] {
            assert_eq!(numerical_rank(theta, 1e-8).unwrap(), 3);
        }
        assert!(gt.sigma0.as_slice().iter().all(|&s| s == gt.sigma0.get(0, 0)));
        assert!(gt.sigma1.get(0, 0) > 0.0);
    }

    #[test]
    fn rank_of_mean_outcomes_is_r_theta() {
        for (r_p, r_theta) in [(3, 5), (5, 3), (2, 2)] {
            let p = params(40, 30, r_p, r_theta);
            let gt: GroundTruth<f64> = generate_ground_truth(&p, &mut stream_rng(7, None)).unwrap();
            let s = singular_values(&gt.theta1).unwrap();
            assert!(s[r_theta] < 1e-8 * s[0]);
            assert!(s[r_theta - 1] > 1e-6 * s[0]);
        }
    }

    #[test]
    fn mean_outcomes_match_direct_svd() {
        let p = params(12, 9, 2, 2);
        let f: DgpFactors<f64> = sample_factors(&p, &mut stream_rng(3, None)).unwrap();
        let prod = f.u_shared.matmul(&f.v1.transpose()).unwrap();
        let svd = thin_svd(prod.to_faer().as_ref()).unwrap();
        let total: f64 = svd.s.iter().take(2).sum();
        let direct = DenseMatrix::from_fn(12, 9, |i, j| {
            (0..2).map(|k| svd.u[(i, k)] * svd.v[(j, k)]).sum::<f64>() * 2.0 * total / 2.0
        })
        .unwrap();
        let got = mean_outcomes_from_factors(&f.u_shared, &f.v1, 2, 2.0).unwrap();
        assert!(norm(&got.sub(&direct).unwrap(), NormKind::Max) < 1e-10);
    }

    #[test]
    fn shared_unit_factors_span_the_left_subspaces() {
        let p = params(30, 20, 3, 3);
        let f: DgpFactors<f64> = sample_factors(&p, &mut stream_rng(4, None)).unwrap();
        let gt = ground_truth_from_factors(&p, &f).unwrap();
        // Projecting onto span(U) leaves P and Θᵃ unchanged.
        let u = f.u_shared.to_faer();
        let q = u.qr().compute_thin_Q();
        for m in [&gt.p, &gt.theta0, &gt.theta1] {
            let x = m.to_faer();
            let proj = &q * (q.transpose() * &x);
            let diff = DenseMatrix::from_faer((&proj - &x).as_ref()).unwrap();
            assert!(norm(&diff, NormKind::Max) < 1e-6 * norm(m, NormKind::Max));
        }
    }

    #[test]
    fn khatri_rao_rank_of_weighted_means() {
        // With independent factors the Hadamard product reaches the full
        // Khatri-Rao rank r_θ(r_p + 1) for Θ⁰ ⊙ (1 − P).
        let mut rng = stream_rng(5, None);
        let (n, m, r_p, r_t) = (40, 40, 2, 2);
        let d = |rows, cols, rng: &mut ChaCha8Rng| {
            DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.2..0.9)).unwrap()
        };
        let (u, v, u0, v0) = (d(n, r_p, &mut rng), d(m, r_p, &mut rng), d(n, r_t, &mut rng), d(m, r_t, &mut rng));
        let ubar = DenseMatrix::from_fn(n, r_p + 1, |i, k| if k == 0 { 1.0 } else { -u.get(i, k - 1) / r_p as f64 }).unwrap();
        let vbar = DenseMatrix::from_fn(m, r_p + 1, |j, k| if k == 0 { 1.0 } else { v.get(j, k - 1) }).unwrap();
        let p_mat = u.matmul(&v.transpose()).unwrap().scale(1.0 / r_p as f64).unwrap();
        let theta0 = u0.matmul(&v0.transpose()).unwrap();
        let target = crate::matrix::hadamard(&theta0, &p_mat.map(|x| 1.0 - x).unwrap()).unwrap();
        let via_kr = khatri_rao(&u0, &ubar).unwrap().matmul(&khatri_rao(&v0, &vbar).unwrap().transpose()).unwrap();
        assert!(norm(&target.sub(&via_kr).unwrap(), NormKind::Max) < 1e-10);
        assert_eq!(numerical_rank(&target, 1e-8).unwrap(), r_t * (r_p + 1));
    }

    #[test]
    fn degenerate_realization() {
        let p = params(5, 4, 1, 1);
        let mut gt: GroundTruth<f64> = generate_ground_truth(&p, &mut stream_rng(1, None)).unwrap();
        gt = GroundTruth::new(
            gt.theta0.clone(),
            gt.theta1.clone(),
            DenseMatrix::filled(5, 4, 1.0).unwrap(),
            DenseMatrix::zeros(5, 4).unwrap(),
            DenseMatrix::zeros(5, 4).unwrap(),
        )
        .unwrap();
        let (y, a) = sample_realization(&gt, &mut stream_rng(1, Some(0))).unwrap();
        assert!(a.as_slice().iter().all(|&v| v == 1.0));
        assert_eq!(y, gt.theta1);
    }

    #[test]
    fn bernoulli_frequency() {
        let z = DenseMatrix::<f64>::zeros(100, 100).unwrap();
        let gt = GroundTruth::new(z.clone(), z.clone(), DenseMatrix::filled(100, 100, 0.3).unwrap(), z.clone(), z).unwrap();
        let (_, a) = sample_realization(&gt, &mut stream_rng(9, Some(3))).unwrap();
        assert!((a.mean() - 0.3).abs() < 0.015);
    }

    #[test]
    fn realizations_are_reproducible() {
        let p = params(10, 8, 2, 2);
        let gt: GroundTruth<f64> = generate_ground_truth(&p, &mut stream_rng(2, None)).unwrap();
        let a = sample_realization(&gt, &mut stream_rng(2, Some(5))).unwrap();
        let b = sample_realization(&gt, &mut stream_rng(2, Some(5))).unwrap();
        assert_eq!(a, b);
        let c = sample_realization(&gt, &mut stream_rng(2, Some(6))).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_params_are_enumerated() {
        let bad = DgpParams { n: 2, m: 2, r_p: 3, r_theta: 1, lambda: 0.7, c0: -1.0, c1: 1.0 };
        match bad.validate() {
            Err(Error::InvalidConfig(msgs)) => assert_eq!(msgs.len(), 3),
            other => panic!("{other:?}"),
        }
    }
}
