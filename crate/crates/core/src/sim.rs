//! Monte-Carlo replication harness.
//!
//! The ground truth is drawn once from `seed`; replication `k` resamples only
//! the noise and the assignments from its own stream, re-estimates the
//! nuisances, and records OI/IPW/DR errors together with DR confidence
//! interval coverage under both the estimated and the true variance.
//! Replications run on the current rayon pool and are stored by index, so
//! the report does not depend on the schedule.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfsvd::{cfsvd, CfsvdConfig};
use crate::crossfit::BlockPartition;
use crate::dgp::{generate_ground_truth, sample_realization, stream_rng, DgpParams};
use crate::error::{Error, Result};
use crate::estimators::{
    dr_point_and_variance, ipw_estimate, oi_estimate, true_asymptotic_variance, true_ate, two_sided_z,
    EstimatorKind, GroundTruth,
};
use crate::scalar::Scalar;

/// How the simulation splits units and outcomes for cross-fitting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    #[default]
    Halves,
    /// Seeded shuffle before halving; the seed is the simulation seed.
    Random,
}

/// Simulation settings. Every field has a default, so config files only
/// need the fields they change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub m: usize,
    pub r_p: usize,
    pub r_theta: usize,
    pub lambda: f64,
    pub c0: f64,
    pub c1: f64,
    /// Number of replications `Q`.
    pub reps: usize,
    pub seed: u64,
    pub lambda_bar: f64,
    pub ci_level: f64,
    /// Outcomes to report; defaults to the first `min(20, m)`.
    pub outcome_indices: Option<Vec<usize>>,
    /// Outcome whose error histogram is emitted.
    pub histogram_j: usize,
    pub histogram_bins: usize,
    pub partition: PartitionKind,
    /// TW rank overrides; unset ranks follow the factor dimensions.
    pub r1: Option<usize>,
    pub r2: Option<usize>,
    pub r3: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            m: 1000,
            r_p: 3,
            r_theta: 3,
            lambda: 0.05,
            c0: 1.0,
            c1: 2.0,
            reps: 2500,
            seed: 0,
            lambda_bar: 0.05,
            ci_level: 0.95,
            outcome_indices: None,
            histogram_j: 0,
            histogram_bins: 50,
            partition: PartitionKind::Halves,
            r1: None,
            r2: None,
            r3: None,
        }
    }
}

const DEFAULT_OUTCOMES: usize = 20;

impl SimConfig {
    pub fn dgp_params(&self) -> DgpParams {
        DgpParams {
            n: self.n,
            m: self.m,
            r_p: self.r_p,
            r_theta: self.r_theta,
            lambda: self.lambda,
            c0: self.c0,
            c1: self.c1,
        }
    }

    /// TW ranks: explicit overrides as given, otherwise the factor-derived
    /// defaults capped at the largest rank a cross-fitting block supports.
    pub fn cfsvd_config(&self) -> CfsvdConfig {
        let base = CfsvdConfig::from_factor_ranks(self.r_p, self.r_theta, self.r_theta, self.lambda_bar);
        let cap = (self.n / 2).min(self.m / 2).max(1);
        CfsvdConfig {
            r1: self.r1.unwrap_or(base.r1.min(cap)),
            r2: self.r2.unwrap_or(base.r2.min(cap)),
            r3: self.r3.unwrap_or(base.r3.min(cap)),
            lambda_bar: self.lambda_bar,
        }
    }

    pub fn outcomes(&self) -> Vec<usize> {
        match &self.outcome_indices {
            Some(js) => js.clone(),
            None => (0..self.m.min(DEFAULT_OUTCOMES)).collect(),
        }
    }

    pub fn partition(&self) -> Result<BlockPartition> {
        match self.partition {
            PartitionKind::Halves => BlockPartition::halves(self.n, self.m),
            PartitionKind::Random => BlockPartition::random(self.n, self.m, self.seed),
        }
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.n < 2 || self.m < 2 {
            errors.push(format!("n and m must be at least 2, got {}x{}", self.n, self.m));
        }
        if self.reps == 0 {
            errors.push("reps must be at least 1".into());
        }
        if let Err(Error::InvalidConfig(e)) = self.dgp_params().validate() {
            errors.extend(e);
        }
        if let Err(Error::InvalidConfig(e)) = self.cfsvd_config().validate() {
            errors.extend(e);
        }
        if self.lambda_bar > self.lambda {
            errors.push(format!(
                "lambda_bar ({}) must not exceed lambda ({})",
                self.lambda_bar, self.lambda
            ));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            errors.push(format!("ci_level must lie in (0, 1), got {}", self.ci_level));
        }
        let outcomes = self.outcomes();
        if outcomes.is_empty() {
            errors.push("outcome_indices must not be empty".into());
        }
        if let Some(&j) = outcomes.iter().find(|&&j| j >= self.m) {
            errors.push(format!("outcome index {j} out of range for m = {}", self.m));
        }
        if self.histogram_j >= self.m {
            errors.push(format!("histogram_j {} out of range for m = {}", self.histogram_j, self.m));
        }
        if self.histogram_bins == 0 {
            errors.push("histogram_bins must be at least 1".into());
        }
        let max_rank = (self.n / 2).min(self.m / 2);
        let cf = self.cfsvd_config();
        for (name, r) in [("r1", cf.r1), ("r2", cf.r2), ("r3", cf.r3)] {
            if r > max_rank && self.n >= 2 && self.m >= 2 {
                errors.push(format!("{name} = {r} exceeds the largest cross-fitting rank {max_rank}"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errors))
        }
    }
}

/// One replication's results for one outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub j: usize,
    /// `τ̂ − τ` for OI, IPW and DR, in [`EstimatorKind::ALL`] order.
    pub errors: [f64; 3],
    /// `σ̂_j`.
    pub sigma_hat: f64,
    pub covered_hat: bool,
    pub covered_bar: bool,
}

impl OutcomeRecord {
    pub fn error(&self, kind: EstimatorKind) -> f64 {
        self.errors[kind_index(kind)]
    }
}

fn kind_index(kind: EstimatorKind) -> usize {
    match kind {
        EstimatorKind::Oi => 0,
        EstimatorKind::Ipw => 1,
        EstimatorKind::Dr => 2,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationResult {
    pub rep: usize,
    /// Per-outcome records, or the error that aborted the replication.
    pub outcome: std::result::Result<Vec<OutcomeRecord>, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimReport {
    pub config: SimConfig,
    pub outcomes: Vec<usize>,
    /// `τ_j` per reported outcome.
    pub true_ate: Vec<f64>,
    /// `σ̄_j²` per reported outcome.
    pub sigma_bar_sq: Vec<f64>,
    pub replications: Vec<ReplicationResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub bias: f64,
    /// Sample standard deviation (`Q − 1` denominator).
    pub std: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeAggregate {
    pub j: usize,
    pub tau: f64,
    pub sigma_bar_sq: f64,
    pub completed: usize,
    pub oi: ErrorSummary,
    pub ipw: ErrorSummary,
    pub dr: ErrorSummary,
    pub coverage_hat: f64,
    pub coverage_bar: f64,
    pub mean_sigma_hat_sq: f64,
    /// Mean and standard deviation of `√N (τ̂ − τ)/σ̂`.
    pub standardized_mean: f64,
    pub standardized_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimAggregate {
    pub reps: usize,
    pub completed: usize,
    pub failed: usize,
    pub mean_coverage_hat: f64,
    pub mean_coverage_bar: f64,
    pub outcomes: Vec<OutcomeAggregate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub estimator: EstimatorKind,
    pub low: f64,
    pub high: f64,
    pub count: usize,
    /// Normalized so the histogram integrates to one.
    pub density: f64,
}

fn summarize(xs: &[f64]) -> ErrorSummary {
    let q = xs.len() as f64;
    let bias = xs.iter().sum::<f64>() / q;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - bias).powi(2)).sum::<f64>() / (q - 1.0)
    } else {
        0.0
    };
    let rmse = (xs.iter().map(|x| x * x).sum::<f64>() / q).sqrt();
    ErrorSummary { bias, std: var.sqrt(), rmse }
}

impl SimReport {
    pub fn completed(&self) -> impl Iterator<Item = &[OutcomeRecord]> {
        self.replications.iter().filter_map(|r| r.outcome.as_deref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (usize, &str)> {
        self.replications
            .iter()
            .filter_map(|r| r.outcome.as_ref().err().map(|e| (r.rep, e.as_str())))
    }

    /// Errors of `kind` on the `idx`-th reported outcome across completed replications.
    pub fn errors(&self, idx: usize, kind: EstimatorKind) -> Vec<f64> {
        self.completed().map(|recs| recs[idx].error(kind)).collect()
    }

    pub fn aggregate(&self) -> SimAggregate {
        let n = self.config.n as f64;
        let completed = self.completed().count();
        let mut outcomes = Vec::with_capacity(self.outcomes.len());
        for (idx, &j) in self.outcomes.iter().enumerate() {
            let recs: Vec<&OutcomeRecord> = self.completed().map(|r| &r[idx]).collect();
            let q = recs.len().max(1) as f64;
            let frac = |f: &dyn Fn(&OutcomeRecord) -> bool| recs.iter().filter(|r| f(r)).count() as f64 / q;
            let standardized: Vec<f64> = recs
                .iter()
                .map(|r| n.sqrt() * r.error(EstimatorKind::Dr) / r.sigma_hat)
                .collect();
            let st = summarize(&standardized);
            outcomes.push(OutcomeAggregate {
                j,
                tau: self.true_ate[idx],
                sigma_bar_sq: self.sigma_bar_sq[idx],
                completed: recs.len(),
                oi: summarize(&self.errors(idx, EstimatorKind::Oi)),
                ipw: summarize(&self.errors(idx, EstimatorKind::Ipw)),
                dr: summarize(&self.errors(idx, EstimatorKind::Dr)),
                coverage_hat: frac(&|r| r.covered_hat),
                coverage_bar: frac(&|r| r.covered_bar),
                mean_sigma_hat_sq: recs.iter().map(|r| r.sigma_hat * r.sigma_hat).sum::<f64>() / q,
                standardized_mean: st.bias,
                standardized_std: st.std,
            });
        }
        let k = outcomes.len().max(1) as f64;
        SimAggregate {
            reps: self.replications.len(),
            completed,
            failed: self.replications.len() - completed,
            mean_coverage_hat: outcomes.iter().map(|o| o.coverage_hat).sum::<f64>() / k,
            mean_coverage_bar: outcomes.iter().map(|o| o.coverage_bar).sum::<f64>() / k,
            outcomes,
        }
    }

    /// Error histograms for outcome `j`, one set of `bins` equal-width bins
    /// per estimator spanning that estimator's error range.
    pub fn histogram(&self, j: usize, bins: usize) -> Result<Vec<HistogramBin>> {
        let idx = self
            .outcomes
            .iter()
            .position(|&o| o == j)
            .ok_or_else(|| Error::invalid(format!("outcome {j} is not among the reported outcomes")))?;
        let mut out = Vec::new();
        for kind in EstimatorKind::ALL {
            let xs = self.errors(idx, kind);
            if xs.is_empty() {
                continue;
            }
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
            let mut counts = vec![0usize; bins];
            for x in &xs {
                let b = (((x - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
            for (b, &count) in counts.iter().enumerate() {
                out.push(HistogramBin {
                    estimator: kind,
                    low: lo + b as f64 * width,
                    high: lo + (b + 1) as f64 * width,
                    count,
                    density: count as f64 / (xs.len() as f64 * width),
                });
            }
        }
        Ok(out)
    }

    /// One row per (replication, outcome, estimator); failed replications get
    /// a single row carrying the error in `status`.
    pub fn write_replications_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record([
            "rep", "j", "estimator", "error", "sigma_hat", "covered_hat", "covered_bar", "status",
        ])?;
        for rep in &self.replications {
            match &rep.outcome {
                Ok(recs) => {
                    for r in recs {
                        for kind in EstimatorKind::ALL {
                            let dr = kind == EstimatorKind::Dr;
                            let opt = |s: String| if dr { s } else { String::new() };
                            w.write_record([
                                rep.rep.to_string(),
                                r.j.to_string(),
                                kind.to_string(),
                                r.error(kind).to_string(),
                                opt(r.sigma_hat.to_string()),
                                opt(u8::from(r.covered_hat).to_string()),
                                opt(u8::from(r.covered_bar).to_string()),
                                "ok".to_string(),
                            ])?;
                        }
                    }
                }
                Err(msg) => {
                    w.write_record([rep.rep.to_string(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), format!("failed: {msg}")])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregate_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, &self.aggregate())?;
        writeln!(w)?;
        Ok(())
    }

    pub fn write_histogram_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["estimator", "low", "high", "count", "density"])?;
        for b in self.histogram(self.config.histogram_j, self.config.histogram_bins)? {
            w.write_record([
                b.estimator.to_string(),
                b.low.to_string(),
                b.high.to_string(),
                b.count.to_string(),
                b.density.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the simulation in precision `T` on the current rayon pool.
pub fn run_simulation<T: Scalar>(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let mut outcomes = cfg.outcomes();
    if !outcomes.contains(&cfg.histogram_j) {
        outcomes.push(cfg.histogram_j);
    }
    let gt: GroundTruth<T> = generate_ground_truth(&cfg.dgp_params(), &mut stream_rng(cfg.seed, None))?;
    run_simulation_with_truth(cfg, &gt, &outcomes)
}

/// Replications against a given ground truth, reporting `outcomes`.
pub fn run_simulation_with_truth<T: Scalar>(cfg: &SimConfig, gt: &GroundTruth<T>, outcomes: &[usize]) -> Result<SimReport> {
    let partition = cfg.partition()?;
    let cf = cfg.cfsvd_config();
    let z = two_sided_z(cfg.ci_level)?;
    let n = gt.shape().0 as f64;
    let true_tau = outcomes
        .iter()
        .map(|&j| true_ate(gt, j).map(Scalar::as_f64))
        .collect::<Result<Vec<_>>>()?;
    let sigma_bar_sq = outcomes
        .iter()
        .map(|&j| true_asymptotic_variance(gt, j).map(Scalar::as_f64))
        .collect::<Result<Vec<_>>>()?;

    let replicate = |k: usize| -> Result<Vec<OutcomeRecord>> {
        let mut rng = stream_rng(cfg.seed, Some(k as u64));
        let (y, a) = sample_realization(gt, &mut rng)?;
        let est = cfsvd(&y, &a, &partition, &cf)?;
        outcomes
            .iter()
            .enumerate()
            .map(|(idx, &j)| {
                let tau = true_tau[idx];
                let oi = oi_estimate(&est, j)?.estimate.as_f64();
                let ipw = ipw_estimate(&y, &a, &est.p_hat, j)?.estimate.as_f64();
                let (dr, var) = dr_point_and_variance(&y, &a, &est, j)?;
                let dr_err = dr.as_f64() - tau;
                let sigma_hat = var.as_f64().sqrt();
                Ok(OutcomeRecord {
                    j,
                    errors: [oi - tau, ipw - tau, dr_err],
                    sigma_hat,
                    covered_hat: dr_err.abs() <= z * sigma_hat / n.sqrt(),
                    covered_bar: dr_err.abs() <= z * sigma_bar_sq[idx].sqrt() / n.sqrt(),
                })
            })
            .collect()
    };

    let replications = (0..cfg.reps)
        .into_par_iter()
        .map(|k| ReplicationResult {
            rep: k,
            outcome: replicate(k).map_err(|e| e.to_string()),
        })
        .collect();

    Ok(SimReport {
        config: cfg.clone(),
        outcomes: outcomes.to_vec(),
        true_ate: true_tau,
        sigma_bar_sq,
        replications,
    })
}
