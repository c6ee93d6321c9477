//! Cross-fitted nuisance estimation for the treatment-effect estimators.
//!
//! ```text
//! P̂  = clamp(CF-TW_{r1}(A), λ̄, 1 − λ̄)
//! Θ̂⁰ = CF-TW_{r2}(Y ⊙ (1 − A)) ⊘ (1 − P̂)
//! Θ̂¹ = CF-TW_{r3}(Y ⊙ A) ⊘ P̂
//! ```
//!
//! where CF-TW is cross-fitted Tall-Wide completion over a shared block
//! partition. `Y ⊙ A` is the treated-arm outcome matrix with untreated cells
//! set to zero; its mean is `Θ¹ ⊙ P`, whose rank is at most `r_θ1 · r_p`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crossfit::{cross_fitted_tw, BlockPartition, PartitionSpec};
use crate::error::{Error, Result};
use crate::io::{read_dense_file, write_dense_file};
use crate::matrix::{hadamard, hadamard_div, DenseMatrix};
use crate::scalar::Scalar;
use crate::tw::TwConfig;

/// Default propensity floor `λ̄`.
pub const DEFAULT_LAMBDA_BAR: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfsvdConfig {
    /// TW rank for `A`.
    pub r1: usize,
    /// TW rank for `Y ⊙ (1 − A)`.
    pub r2: usize,
    /// TW rank for `Y ⊙ A`.
    pub r3: usize,
    /// Propensity estimates are projected onto `[λ̄, 1 − λ̄]`.
    ///
    /// Must not exceed the true propensity bound; that bound is unknown from
    /// data, so choosing it is left to the caller.
    pub lambda_bar: f64,
}

impl CfsvdConfig {
    /// Ranks implied by factor dimensions: `r1 = r_p`, `r2 = r_θ0 (r_p + 1)`, `r3 = r_θ1 r_p`.
    pub fn from_factor_ranks(r_p: usize, r_theta0: usize, r_theta1: usize, lambda_bar: f64) -> Self {
        Self {
            r1: r_p,
            r2: r_theta0 * (r_p + 1),
            r3: r_theta1 * r_p,
            lambda_bar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        for (name, r) in [("r1", self.r1), ("r2", self.r2), ("r3", self.r3)] {
            if r == 0 {
                errors.push(format!("{name} must be at least 1"));
            }
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

/// The nuisance triple `(Θ̂⁰, Θ̂¹, P̂)`, all of one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct NuisanceEstimates<T> {
    pub theta0_hat: DenseMatrix<T>,
    pub theta1_hat: DenseMatrix<T>,
    pub p_hat: DenseMatrix<T>,
}

#[derive(Serialize, Deserialize)]
struct NuisanceManifest {
    rows: usize,
    cols: usize,
    config: Option<CfsvdConfig>,
    partition: Option<PartitionSpec>,
}

const THETA0_FILE: &str = "theta0_hat.csv";
const THETA1_FILE: &str = "theta1_hat.csv";
const P_FILE: &str = "p_hat.csv";
const MANIFEST_FILE: &str = "nuisance.json";

impl<T: Scalar> NuisanceEstimates<T> {
    pub fn new(theta0_hat: DenseMatrix<T>, theta1_hat: DenseMatrix<T>, p_hat: DenseMatrix<T>) -> Result<Self> {
        theta0_hat.require_same_shape(&theta1_hat, "nuisance estimates")?;
        theta0_hat.require_same_shape(&p_hat, "nuisance estimates")?;
        Ok(Self { theta0_hat, theta1_hat, p_hat })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.p_hat.shape()
    }

    /// Writes the three matrices as CSVs plus a JSON manifest into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, config: Option<&CfsvdConfig>, partition: Option<&BlockPartition>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_dense_file(dir.join(THETA0_FILE), &self.theta0_hat, false)?;
        write_dense_file(dir.join(THETA1_FILE), &self.theta1_hat, false)?;
        write_dense_file(dir.join(P_FILE), &self.p_hat, false)?;
        let (rows, cols) = self.shape();
        let manifest = NuisanceManifest {
            rows,
            cols,
            config: config.copied(),
            partition: partition.map(BlockPartition::to_spec),
        };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Reads estimates written by [`NuisanceEstimates::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: NuisanceManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let est = Self::new(
            read_dense_file(dir.join(THETA0_FILE), false)?,
            read_dense_file(dir.join(THETA1_FILE), false)?,
            read_dense_file(dir.join(P_FILE), false)?,
        )?;
        if est.shape() != (manifest.rows, manifest.cols) {
            return Err(Error::Shape {
                op: "nuisance manifest",
                left: est.shape(),
                right: (manifest.rows, manifest.cols),
            });
        }
        Ok(est)
    }
}

/// Entrywise clamp onto `[lo, hi]`.
pub fn project_interval<T: Scalar>(m: &DenseMatrix<T>, lo: T, hi: T) -> Result<DenseMatrix<T>> {
    if lo > hi {
        return Err(Error::invalid(format!("empty interval [{lo}, {hi}]")));
    }
    m.map(|v| v.max(lo).min(hi))
}

/// `P̂`: cross-fitted TW of the binary treatment matrix, clamped to `[λ̄, 1 − λ̄]`.
pub fn estimate_propensity<T: Scalar>(a: &DenseMatrix<T>, p: &BlockPartition, cfg: &CfsvdConfig) -> Result<DenseMatrix<T>> {
    cfg.validate()?;
    a.check_binary()?;
    let completed = cross_fitted_tw(a, p, &TwConfig::new(cfg.r1))?;
    clamp_propensity(&completed, cfg.lambda_bar)
}

fn clamp_propensity<T: Scalar>(m: &DenseMatrix<T>, lambda_bar: f64) -> Result<DenseMatrix<T>> {
    let lo = T::lit(lambda_bar);
    project_interval(m, lo, T::one() - lo)
}

/// Zero-filled arm outcome: `Y ⊙ A` for arm 1, `Y ⊙ (1 − A)` for arm 0.
pub fn arm_outcomes<T: Scalar>(y: &DenseMatrix<T>, a: &DenseMatrix<T>, arm: u8) -> Result<DenseMatrix<T>> {
    match arm {
        1 => hadamard(y, a),
        0 => hadamard(y, &a.map(|v| T::one() - v)?),
        _ => Err(Error::invalid(format!("arm must be 0 or 1, got {arm}"))),
    }
}

fn arm_rank(cfg: &CfsvdConfig, arm: u8) -> usize {
    if arm == 1 {
        cfg.r3
    } else {
        cfg.r2
    }
}

fn divide_by_arm_probability<T: Scalar>(completed: &DenseMatrix<T>, p_hat: &DenseMatrix<T>, arm: u8) -> Result<DenseMatrix<T>> {
    if arm == 1 {
        hadamard_div(completed, p_hat)
    } else {
        hadamard_div(completed, &p_hat.map(|v| T::one() - v)?)
    }
}

/// `Θ̂ᵃ`: cross-fitted TW of the zero-filled arm outcomes divided by the arm
/// probability `P̂` (arm 1) or `1 − P̂` (arm 0).
pub fn estimate_theta<T: Scalar>(
    y: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    p_hat: &DenseMatrix<T>,
    arm: u8,
    p: &BlockPartition,
    cfg: &CfsvdConfig,
) -> Result<DenseMatrix<T>> {
    cfg.validate()?;
    y.require_same_shape(a, "estimate_theta")?;
    y.require_same_shape(p_hat, "estimate_theta")?;
    a.check_binary()?;
    let ybar = arm_outcomes(y, a, arm)?;
    let completed = cross_fitted_tw(&ybar, p, &TwConfig::new(arm_rank(cfg, arm)))?;
    divide_by_arm_probability(&completed, p_hat, arm)
}

/// Full nuisance estimation. The three completions run concurrently.
pub fn cfsvd<T: Scalar>(
    y: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    p: &BlockPartition,
    cfg: &CfsvdConfig,
) -> Result<NuisanceEstimates<T>> {
    cfg.validate()?;
    y.require_same_shape(a, "cfsvd")?;
    a.check_binary()?;
    let y0 = arm_outcomes(y, a, 0)?;
    let y1 = arm_outcomes(y, a, 1)?;
    let (pa, (c0, c1)) = rayon::join(
        || cross_fitted_tw(a, p, &TwConfig::new(cfg.r1)),
        || {
            rayon::join(
                || cross_fitted_tw(&y0, p, &TwConfig::new(cfg.r2)),
                || cross_fitted_tw(&y1, p, &TwConfig::new(cfg.r3)),
            )
        },
    );
    let p_hat = clamp_propensity(&pa?, cfg.lambda_bar)?;
    let theta0_hat = divide_by_arm_probability(&c0?, &p_hat, 0)?;
    let theta1_hat = divide_by_arm_probability(&c1?, &p_hat, 1)?;
    NuisanceEstimates::new(theta0_hat, theta1_hat, p_hat)
}
