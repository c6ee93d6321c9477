//! Panel-data extensions: lagged effects and staggered adoption.
//!
//! Columns are time periods `t = 1..T` stored at indices `0..T`. The lagged
//! model is `y_t = α⁽ᵃ⁾ y_{t−1} + θ_t + ε_t` with the arm-specific
//! autoregressive coefficient; `y0` supplies the outcome before period 1.
//!
//! The staggered estimator shares unit factors across the propensity and both
//! outcome arms. Unit factors come from the pre-period control outcomes; time
//! factors for half `s` are fitted on the other half only, so estimates for a
//! unit never read that unit's half at the target period.

use faer::Mat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cfsvd::{NuisanceEstimates, DEFAULT_LAMBDA_BAR};
use crate::error::{Error, Result};
use crate::estimators::{
    check_binary_column, check_column, check_open_unit, dr_cell0, dr_cell1, dr_estimate, mean_of, AteResult,
    EstimatorKind,
};
use crate::linalg::{lstsq, thin_svd};
use crate::matrix::{DenseMatrix, Mask, MaskedMatrix};
use crate::scalar::Scalar;
use crate::tw::ROTATION_RCOND_MIN;

/// Bound applied to least-squares autoregressive estimates.
pub const ALPHA_BOUND: f64 = 0.99;

#[derive(Clone, Debug, PartialEq)]
pub struct LaggedConfig<T> {
    pub alpha0_hat: T,
    pub alpha1_hat: T,
    /// Target period `T` (1-based).
    pub horizon: usize,
    /// Number of trailing periods `J` entering the estimate.
    pub window: usize,
    /// Outcomes at period 0, one per unit.
    pub y0: Vec<T>,
}

impl<T: Scalar> LaggedConfig<T> {
    pub fn validate(&self, n: usize, periods: usize) -> Result<()> {
        let mut errors = Vec::new();
        if self.horizon == 0 || self.horizon > periods {
            errors.push(format!("horizon {} must lie in 1..={periods}", self.horizon));
        }
        if self.window == 0 || self.window > self.horizon {
            errors.push(format!("window {} must lie in 1..={}", self.window, self.horizon));
        }
        for (name, a) in [("alpha0_hat", self.alpha0_hat), ("alpha1_hat", self.alpha1_hat)] {
            if !(a.abs() < T::one()) {
                errors.push(format!("|{name}| must be below 1, got {}", a.as_f64()));
            }
        }
        if self.y0.len() != n {
            errors.push(format!("y0 has {} entries for {n} units", self.y0.len()));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errors))
        }
    }
}

fn check_panel<T: Scalar>(y: &DenseMatrix<T>, a: &DenseMatrix<T>, y0: &[T]) -> Result<()> {
    y.require_same_shape(a, "panel")?;
    a.check_binary()?;
    if y0.len() != y.rows() {
        return Err(Error::Shape {
            op: "panel initial outcomes",
            left: y.shape(),
            right: (y0.len(), 1),
        });
    }
    Ok(())
}

/// `y_{i,t} − α⁽ᵃ⁾ y_{i,t−1}` with `a = a_{i,t}`, both arms in one matrix.
pub fn lagged_residuals<T: Scalar>(
    y: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    alpha0: T,
    alpha1: T,
    y0: &[T],
) -> Result<DenseMatrix<T>> {
    check_panel(y, a, y0)?;
    DenseMatrix::from_fn(y.rows(), y.cols(), |i, t| {
        let prev = if t == 0 { y0[i] } else { y.get(i, t - 1) };
        let alpha = if a.get(i, t) == T::one() { alpha1 } else { alpha0 };
        y.get(i, t) - alpha * prev
    })
}

/// Residual matrices `(Ỹ⁽⁰⁾, Ỹ⁽¹⁾)`; cell `(i, t)` is observed in the arm
/// that unit `i` received at `t`.
pub fn residual_matrices<T: Scalar>(
    y: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    alpha0: T,
    alpha1: T,
    y0: &[T],
) -> Result<(MaskedMatrix<T>, MaskedMatrix<T>)> {
    let r = lagged_residuals(y, a, alpha0, alpha1, y0)?;
    let treated = Mask::from_fn(a.rows(), a.cols(), |i, t| a.get(i, t) == T::one())?;
    let control = Mask::from_fn(a.rows(), a.cols(), |i, t| a.get(i, t) == T::zero())?;
    Ok((MaskedMatrix::new(&r, &control)?, MaskedMatrix::new(&r, &treated)?))
}

/// Least-squares autoregressive coefficient for one arm.
///
/// Uses cells with `a_{i,t} = a_{i,t−1} = arm` and `t ≥ 2`. Both `y_t` and
/// `y_{t−1}` are demeaned within each period to absorb `θ_{·,t}`; the slope is
/// clamped to `±ALPHA_BOUND` and is zero when the regressor has no variation.
pub fn estimate_alpha<T: Scalar>(y: &DenseMatrix<T>, a: &DenseMatrix<T>, arm: u8) -> Result<T> {
    y.require_same_shape(a, "estimate_alpha")?;
    a.check_binary()?;
    let arm_v = if arm == 0 { T::zero() } else { T::one() };
    let mut cells = 0;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for t in 1..y.cols() {
        let rows: Vec<usize> = (0..y.rows())
            .filter(|&i| a.get(i, t) == arm_v && a.get(i, t - 1) == arm_v)
            .collect();
        if rows.is_empty() {
            continue;
        }
        cells += rows.len();
        let mx = mean_of(rows.iter().map(|&i| y.get(i, t - 1)), rows.len());
        let my = mean_of(rows.iter().map(|&i| y.get(i, t)), rows.len());
        for &i in &rows {
            let dx = y.get(i, t - 1) - mx;
            sxy = sxy + dx * (y.get(i, t) - my);
            sxx = sxx + dx * dx;
        }
    }
    if cells < 2 {
        return Err(Error::InsufficientData(format!(
            "arm {arm} has {cells} cells with the same arm in consecutive periods; at least 2 are needed"
        )));
    }
    if sxx == T::zero() {
        return Ok(T::zero());
    }
    let bound = T::lit(ALPHA_BOUND);
    Ok((sxy / sxx).max(-bound).min(bound))
}

/// Always-treated minus never-treated mean outcome at period `horizon`,
/// truncated to the last `window` periods.
///
/// `est` must be fitted on [`lagged_residuals`]. No interval is reported.
pub fn dr_lagged_estimate<T: Scalar>(
    y: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    est: &NuisanceEstimates<T>,
    cfg: &LaggedConfig<T>,
) -> Result<AteResult<T>> {
    check_panel(y, a, &cfg.y0)?;
    y.require_same_shape(&est.p_hat, "dr_lagged_estimate")?;
    cfg.validate(y.rows(), y.cols())?;
    let n = y.rows();
    let last = cfg.horizon - 1;
    let cols: Vec<usize> = (0..cfg.window).map(|s| last - s).collect();
    for &t in &cols {
        check_open_unit(&est.p_hat, t)?;
    }
    let resid = lagged_residuals(y, a, cfg.alpha0_hat, cfg.alpha1_hat, &cfg.y0)?;

    let unit_value = |i: usize, alpha: T, cell: &dyn Fn(usize) -> T| {
        let mut acc = alpha.powi(cfg.horizon as i32) * cfg.y0[i];
        for (s, &t) in cols.iter().enumerate() {
            acc = acc + alpha.powi(s as i32) * cell(t);
        }
        acc
    };
    let mu1 = mean_of(
        (0..n).map(|i| {
            unit_value(i, cfg.alpha1_hat, &|t| {
                dr_cell1(est.theta1_hat.get(i, t), resid.get(i, t), a.get(i, t), est.p_hat.get(i, t))
            })
        }),
        n,
    );
    let mu0 = mean_of(
        (0..n).map(|i| {
            unit_value(i, cfg.alpha0_hat, &|t| {
                dr_cell0(est.theta0_hat.get(i, t), resid.get(i, t), a.get(i, t), est.p_hat.get(i, t))
            })
        }),
        n,
    );
    Ok(AteResult {
        outcome_index: last,
        estimator: EstimatorKind::Dr,
        estimate: mu1 - mu0,
        std_error: None,
        ci_low: None,
        ci_high: None,
        n_units: n,
    })
}

/// Link between unit and time factors in the propensity model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// `g(u, v) = ⟨u, v⟩`.
    #[default]
    Linear,
    /// `g(u, v) = 1 − (1 − u)^v`; scalar factors only.
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaggeredConfig {
    /// Number of pre-periods `T₀` during which every unit is under control.
    pub t0: usize,
    /// Target period (1-based), in `T₀ + 1..=T`.
    pub target_t: usize,
    pub r: usize,
    pub link: Link,
    pub seed: u64,
    pub lambda_bar: f64,
}

impl StaggeredConfig {
    pub fn new(t0: usize, target_t: usize, r: usize, link: Link, seed: u64) -> Self {
        Self {
            t0,
            target_t,
            r,
            link,
            seed,
            lambda_bar: DEFAULT_LAMBDA_BAR,
        }
    }

    pub fn validate(&self, periods: usize) -> Result<()> {
        let mut errors = Vec::new();
        if self.r == 0 {
            errors.push("r must be at least 1".into());
        }
        if self.t0 < self.r {
            errors.push(format!("t0 ({}) must be at least r ({})", self.t0, self.r));
        }
        if self.target_t <= self.t0 || self.target_t > periods {
            errors.push(format!(
                "target_t {} must lie in {}..={periods}",
                self.target_t,
                self.t0 + 1
            ));
        }
        if self.link == Link::Geometric && self.r != 1 {
            errors.push(format!("the geometric link needs r = 1, got {}", self.r));
        }
        if !(self.lambda_bar > 0.0 && self.lambda_bar <= 0.5) {
            errors.push(format!("lambda_bar must lie in (0, 0.5], got {}", self.lambda_bar));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errors))
        }
    }
}

/// Adoption period per unit: the 1-based index of the first treated period,
/// or `None` for never-treated units. Rejects any row where a 1 precedes a 0.
pub fn adoption_times<T: Scalar>(a: &DenseMatrix<T>) -> Result<Vec<Option<usize>>> {
    a.check_binary()?;
    (0..a.rows())
        .map(|i| {
            let first = (0..a.cols()).find(|&t| a.get(i, t) == T::one());
            if let Some(f) = first {
                if let Some(t) = (f..a.cols()).find(|&t| a.get(i, t) == T::zero()) {
                    return Err(Error::NotStaggered {
                        row: i,
                        reason: format!("treated at period {} but control at period {}", f + 1, t + 1),
                    });
                }
            }
            Ok(first.map(|f| f + 1))
        })
        .collect()
}

/// Checks the staggered pattern and that nobody adopts within the pre-period.
pub fn check_staggered<T: Scalar>(a: &DenseMatrix<T>, t0: usize) -> Result<Vec<Option<usize>>> {
    let times = adoption_times(a)?;
    for (i, t) in times.iter().enumerate() {
        if let Some(t) = *t {
            if t <= t0 {
                return Err(Error::NotStaggered {
                    row: i,
                    reason: format!("adopts at period {t}, within the first {t0} periods"),
                });
            }
        }
    }
    Ok(times)
}

/// Splits the units of each arm at `target_t` into halves of sizes
/// `⌈n/2⌉` and `⌊n/2⌋` after a seeded shuffle. Returns `[R₀, R₁]`, sorted.
pub fn split_units<T: Scalar>(a: &DenseMatrix<T>, target_t: usize, seed: u64) -> Result<[Vec<usize>; 2]> {
    if target_t == 0 || target_t > a.cols() {
        return Err(Error::IndexOutOfRange { index: target_t, len: a.cols() });
    }
    let col = target_t - 1;
    check_binary_column(a, col)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut halves = [Vec::new(), Vec::new()];
    for arm in [T::zero(), T::one()] {
        let mut units: Vec<usize> = (0..a.rows()).filter(|&i| a.get(i, col) == arm).collect();
        units.shuffle(&mut rng);
        let cut = units.len().div_ceil(2);
        halves[0].extend_from_slice(&units[..cut]);
        halves[1].extend_from_slice(&units[cut..]);
    }
    halves[0].sort_unstable();
    halves[1].sort_unstable();
    Ok(halves)
}

/// Per-unit nuisance estimates at the target period.
#[derive(Clone, Debug, PartialEq)]
pub struct StaggeredEstimates<T> {
    pub target_t: usize,
    pub p_hat: Vec<T>,
    pub theta0_hat: Vec<T>,
    pub theta1_hat: Vec<T>,
    pub halves: [Vec<usize>; 2],
}

impl<T: Scalar> StaggeredEstimates<T> {
    /// The estimates as `N×1` nuisance matrices.
    pub fn to_nuisance(&self) -> Result<NuisanceEstimates<T>> {
        let n = self.p_hat.len();
        NuisanceEstimates::new(
            DenseMatrix::column_vector(&self.theta0_hat)?,
            DenseMatrix::column_vector(&self.theta1_hat)?,
            DenseMatrix::from_vec(n, 1, self.p_hat.clone())?,
        )
    }
}

/// Scaled leading left factors of the pre-period outcomes, `Y_pre V̂_r / √T₀`.
///
/// With pre-period time factors of unit root-mean-square this reproduces the
/// unit factors themselves, which the geometric link needs on their true scale.
pub fn unit_factors<T: Scalar>(y: &DenseMatrix<T>, t0: usize, r: usize) -> Result<DenseMatrix<T>> {
    if t0 == 0 || t0 > y.cols() || r == 0 || r > t0.min(y.rows()) {
        return Err(Error::RankInfeasible { rank: r, max: t0.min(y.rows()) });
    }
    let pre: Vec<usize> = (0..t0).collect();
    let all: Vec<usize> = (0..y.rows()).collect();
    let svd = thin_svd(y.select(&all, &pre)?.to_faer().as_ref())?;
    let scale = T::from_count(t0).sqrt();
    DenseMatrix::from_fn(y.rows(), r, |i, k| svd.u[(i, k)] * svd.s[k] / scale)
}

const GN_MAX_ITER: usize = 200;
const GN_MAX_HALVINGS: usize = 60;
const UNIT_EPS: f64 = 1e-12;

/// Time factor minimizing `Σ (target_i − g(u_i, v))²` over the given rows.
///
/// Linear links are ordinary least squares without intercept. The geometric
/// link is a scalar Gauss-Newton iteration with backtracking started from
/// `ln(1 − ā)/ln(1 − ū)`.
pub fn fit_time_factor<T: Scalar>(u: &DenseMatrix<T>, target: &[T], link: Link) -> Result<Vec<T>> {
    if u.rows() != target.len() {
        return Err(Error::Shape {
            op: "fit_time_factor",
            left: u.shape(),
            right: (target.len(), 1),
        });
    }
    match link {
        Link::Linear => {
            let b = Mat::from_fn(target.len(), 1, |i, _| target[i]);
            let x = lstsq(u.to_faer().as_ref(), b.as_ref(), ROTATION_RCOND_MIN)?;
            Ok((0..u.cols()).map(|k| x[(k, 0)]).collect())
        }
        Link::Geometric => {
            if u.cols() != 1 {
                return Err(Error::invalid(format!("the geometric link needs r = 1, got {}", u.cols())));
            }
            Ok(vec![fit_geometric(&u.column(0), target)])
        }
    }
}

fn log_survival<T: Scalar>(u: T) -> T {
    let eps = T::lit(UNIT_EPS);
    (T::one() - u.max(eps).min(T::one() - eps)).ln()
}

/// `1 − (1 − u)^v`, with `u` kept inside the open unit interval.
pub fn geometric_link<T: Scalar>(u: T, v: T) -> T {
    T::one() - (v * log_survival(u)).exp()
}

/// Gradient `Σ J_i r_i` of the geometric least-squares objective.
pub fn geometric_gradient<T: Scalar>(u: &[T], target: &[T], v: T) -> T {
    u.iter().zip(target).fold(T::zero(), |acc, (&ui, &ti)| {
        let l = log_survival(ui);
        let jac = -l * (v * l).exp();
        acc + jac * (ti - geometric_link(ui, v))
    })
}

fn fit_geometric<T: Scalar>(u: &[T], target: &[T]) -> T {
    let sse = |v: T| {
        u.iter()
            .zip(target)
            .fold(T::zero(), |acc, (&ui, &ti)| acc + (ti - geometric_link(ui, v)).powi(2))
    };
    let n = u.len().max(1);
    let eps = T::lit(1e-6);
    let a_bar = mean_of(target.iter().copied(), n).max(eps).min(T::one() - eps);
    let u_bar = mean_of(u.iter().copied(), n);
    let mut v = (T::one() - a_bar).ln() / log_survival(u_bar);
    if !v.is_finite() {
        v = T::one();
    }
    let mut f = sse(v);
    for _ in 0..GN_MAX_ITER {
        let mut g = T::zero();
        let mut h = T::zero();
        for (&ui, &ti) in u.iter().zip(target) {
            let l = log_survival(ui);
            let jac = -l * (v * l).exp();
            g = g + jac * (ti - geometric_link(ui, v));
            h = h + jac * jac;
        }
        if h == T::zero() || g == T::zero() {
            break;
        }
        let mut step = g / h;
        let mut improved = false;
        for _ in 0..GN_MAX_HALVINGS {
            let cand = v + step;
            let fc = sse(cand);
            if fc <= f {
                improved = cand != v;
                v = cand;
                f = fc;
                break;
            }
            step = step / T::lit(2.0);
        }
        if !improved {
            break;
        }
    }
    v
}

/// Cross-fitted regression with a seeded unit split.
pub fn cross_fitted_regression<T: Scalar>(
    y: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    cfg: &StaggeredConfig,
) -> Result<StaggeredEstimates<T>> {
    cfg.validate(y.cols())?;
    let halves = split_units(a, cfg.target_t, cfg.seed)?;
    cross_fitted_regression_with_split(y, a, cfg, halves)
}

/// Cross-fitted regression on a caller-supplied split `[R₀, R₁]`.
///
/// Estimates for units in `R_s` use time factors fitted on `R_{1−s}` only.
pub fn cross_fitted_regression_with_split<T: Scalar>(
    y: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    cfg: &StaggeredConfig,
    halves: [Vec<usize>; 2],
) -> Result<StaggeredEstimates<T>> {
    y.require_same_shape(a, "cross_fitted_regression")?;
    cfg.validate(y.cols())?;
    check_staggered(a, cfg.t0)?;
    let n = y.rows();
    let mut seen = vec![false; n];
    for &i in halves.iter().flatten() {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Partition(format!("unit {i} is out of range or listed twice")));
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Partition(format!("unit {i} is in neither half")));
    }

    let col = cfg.target_t - 1;
    let u = unit_factors(y, cfg.t0, cfg.r)?;
    let lo = T::lit(cfg.lambda_bar);
    let hi = T::one() - lo;
    let mut p_hat = vec![T::zero(); n];
    let mut theta = [vec![T::zero(); n], vec![T::zero(); n]];
    let rows_of = |idx: &[usize]| -> Result<DenseMatrix<T>> { u.select(idx, &(0..cfg.r).collect::<Vec<_>>()) };

    for s in 0..2 {
        let fit = &halves[1 - s];
        let targets: Vec<T> = fit.iter().map(|&i| a.get(i, col)).collect();
        let v = fit_time_factor(&rows_of(fit)?, &targets, cfg.link)?;
        let mut v_arm = Vec::with_capacity(2);
        for arm in 0..2u8 {
            let arm_v = T::from_count(arm as usize);
            let idx: Vec<usize> = fit.iter().copied().filter(|&i| a.get(i, col) == arm_v).collect();
            if idx.is_empty() {
                return Err(Error::DegenerateSplit { arm, half: (1 - s) as u8 });
            }
            let ys: Vec<T> = idx.iter().map(|&i| y.get(i, col)).collect();
            v_arm.push(fit_time_factor(&rows_of(&idx)?, &ys, Link::Linear)?);
        }
        for &i in &halves[s] {
            let ui = u.row(i);
            let p = match cfg.link {
                Link::Linear => dot(ui, &v),
                Link::Geometric => geometric_link(ui[0], v[0]),
            };
            p_hat[i] = p.max(lo).min(hi);
            for arm in 0..2 {
                theta[arm][i] = dot(ui, &v_arm[arm]);
            }
        }
    }
    let [theta0_hat, theta1_hat] = theta;
    Ok(StaggeredEstimates {
        target_t: cfg.target_t,
        p_hat,
        theta0_hat,
        theta1_hat,
        halves,
    })
}

fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

/// DR estimate with a normal interval at the target period.
pub fn staggered_dr_estimate<T: Scalar>(
    y: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    est: &StaggeredEstimates<T>,
    level: f64,
) -> Result<AteResult<T>> {
    let col = est.target_t - 1;
    check_column(y, col)?;
    let all: Vec<usize> = (0..y.rows()).collect();
    let mut res = dr_estimate(&y.select(&all, &[col])?, &a.select(&all, &[col])?, &est.to_nuisance()?, 0, level)?;
    res.outcome_index = col;
    Ok(res)
}
