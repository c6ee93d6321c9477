use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use drlfm::cfsvd::{cfsvd, estimate_propensity, estimate_theta, CfsvdConfig};
use drlfm::crossfit::{BlockPartition, PartitionSpec};
use drlfm::estimators::{estimate_all, AteResult};
use drlfm::io::{read_dense_file, read_masked_file, read_masked_pair, write_dense_file};
use drlfm::sim::{run_simulation, SimConfig};
use drlfm::tw::{tw_complete, TwConfig};
use drlfm::{Masked, Matrix};
use serde::Serialize;
use serde_json::json;

use crate::manifest::Run;
use crate::{CompleteArgs, EstimateArgs, SimulateArgs};

/// Resolves `halves`, `random` or a partition JSON file.
fn resolve_partition(spec: &str, n: usize, m: usize, seed: u64, run: &mut Run) -> Result<BlockPartition> {
    Ok(match spec {
        "halves" => BlockPartition::halves(n, m)?,
        "random" => BlockPartition::random(n, m, seed)?,
        path => {
            let path = Path::new(path);
            run.record_input(path)?;
            let text = fs::read_to_string(path).with_context(|| format!("cannot read partition file {}", path.display()))?;
            let spec: PartitionSpec = serde_json::from_str(&text)
                .with_context(|| format!("{} is not a partition file with r0 and c0 index lists", path.display()))?;
            BlockPartition::from_spec(n, m, &spec)?
        }
    })
}

#[derive(Serialize)]
struct ResultRow {
    j: usize,
    estimator: String,
    estimate: f64,
    std_error: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
}

fn write_results(run: &Run, results: &[AteResult<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(run.path("results.csv"))?;
    for r in results {
        w.serialize(ResultRow {
            j: r.outcome_index,
            estimator: r.estimator.to_string(),
            estimate: r.estimate,
            std_error: r.std_error,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
        })?;
    }
    w.flush()?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(run.path("results.json"))?), results)?;
    Ok(())
}

pub fn estimate(args: EstimateArgs) -> Result<()> {
    let mut run = Run::start("estimate", &args.output.out, args.output.force)?;
    run.record_input(&args.y)?;
    run.record_input(&args.a)?;
    let y: Matrix = read_dense_file(&args.y, args.header).with_context(|| format!("reading {}", args.y.display()))?;
    let a: Matrix = read_dense_file(&args.a, args.header).with_context(|| format!("reading {}", args.a.display()))?;
    y.require_same_shape(&a, "outcome and treatment inputs")?;
    a.check_binary()?;
    let cfg = CfsvdConfig::from_factor_ranks(args.rank_p, args.rank_theta0, args.rank_theta1, args.lambda_bar);
    cfg.validate()?;
    drlfm::estimators::two_sided_z(args.level)?;
    let (n, m) = y.shape();
    let partition = resolve_partition(&args.partition, n, m, args.seed, &mut run)?;

    let est = cfsvd(&y, &a, &partition, &cfg)?;
    let results = estimate_all(&y, &a, &est, args.level, &args.estimators)?;
    write_results(&run, &results)?;
    est.save(run.path("nuisance"), Some(&cfg), Some(&partition))?;

    let config = json!({
        "y": args.y,
        "a": args.a,
        "header": args.header,
        "cfsvd": cfg,
        "level": args.level,
        "partition": args.partition,
        "estimators": args.estimators,
    });
    run.finish(config, args.seed)
}

fn load_sim_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).with_context(|| format!("invalid JSON config {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("invalid TOML config {}", path.display()))
    }
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let mut run = Run::start("simulate", &args.output.out, args.output.force)?;
    let mut cfg = match &args.config {
        Some(path) => {
            run.record_input(path)?;
            load_sim_config(path)?
        }
        None => SimConfig::default(),
    };
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(m) = args.m {
        cfg.m = m;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(threads) = args.threads {
        if threads == 0 {
            bail!("--threads must be at least 1");
        }
        pool = pool.num_threads(threads);
    }
    let pool = pool.build()?;
    let report = pool.install(|| run_simulation::<f64>(&cfg))?;

    report.write_replications_csv(BufWriter::new(File::create(run.path("replications.csv"))?))?;
    report.write_aggregate_json(BufWriter::new(File::create(run.path("aggregate.json"))?))?;
    report.write_histogram_csv(BufWriter::new(File::create(run.path("histogram.csv"))?))?;
    let failed = report.failures().count();
    if failed > 0 {
        eprintln!("warning: {failed} of {} replications failed; see replications.csv", cfg.reps);
    }
    let config = json!({ "simulation": cfg, "resolved_tw_ranks": cfg.cfsvd_config() });
    run.finish(config, cfg.seed)
}

pub fn complete(args: CompleteArgs) -> Result<()> {
    let mut run = Run::start("complete", &args.output.out, args.output.force)?;
    run.record_input(&args.s)?;
    let s: Masked = match &args.mask {
        Some(mask) => {
            run.record_input(mask)?;
            read_masked_pair(&args.s, mask, args.header)?
        }
        None => read_masked_file(&args.s, args.header)?,
    };

    let completed = if args.cross_fit {
        let (n, m) = s.shape();
        let observed = Matrix::from_fn(n, m, |i, j| if s.is_observed(i, j) { 1.0 } else { 0.0 })?;
        let filled = s.fill_missing(0.0);
        let cfg = CfsvdConfig {
            r1: args.rank_p,
            r2: args.rank,
            r3: args.rank,
            lambda_bar: args.lambda_bar,
        };
        cfg.validate()?;
        let partition = resolve_partition(&args.partition, n, m, args.seed, &mut run)?;
        let p_hat = estimate_propensity(&observed, &partition, &cfg)?;
        estimate_theta(&filled, &observed, &p_hat, 1, &partition, &cfg)?
    } else {
        tw_complete(&s, &TwConfig::new(args.rank))?
    };
    write_dense_file(run.path("completed.csv"), &completed, args.header)?;

    let config = json!({
        "s": args.s,
        "mask": args.mask,
        "rank": args.rank,
        "cross_fit": args.cross_fit,
        "rank_p": args.rank_p,
        "lambda_bar": args.lambda_bar,
        "partition": args.partition,
        "header": args.header,
    });
    run.finish(config, args.seed)
}
