use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drlfm::dgp::{generate_ground_truth, sample_realization, stream_rng, DgpParams};
use drlfm::estimators::GroundTruth;
use drlfm::io::{read_dense_file, write_dense_file};
use drlfm::Matrix;

fn drlfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drlfm"))
        .args(args)
        .env_remove("DRLFM_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a 100×50 realization and returns the (y, a) paths.
fn write_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let params = DgpParams { n: 100, m: 50, r_p: 1, r_theta: 1, lambda: 0.05, c0: 1.0, c1: 2.0 };
    let gt: GroundTruth<f64> = generate_ground_truth(&params, &mut stream_rng(3, None)).unwrap();
    let (y, a) = sample_realization(&gt, &mut stream_rng(3, Some(0))).unwrap();
    let (yp, ap) = (dir.join("y.csv"), dir.join("a.csv"));
    write_dense_file(&yp, &y, false).unwrap();
    write_dense_file(&ap, &a, false).unwrap();
    (yp, ap)
}

fn estimate_args<'a>(y: &'a str, a: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "estimate", "--y", y, "--a", a, "--rank-p", "1", "--rank-theta0", "1", "--rank-theta1", "1", "--out", out,
    ]
}

#[test]
fn estimate_writes_results_for_every_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let (y, a) = write_inputs(dir.path());
    let out = dir.path().join("run");
    let res = drlfm(&estimate_args(s(&y), s(&a), s(&out)));
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let mut rdr = csv::Reader::from_path(out.join("results.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["j", "estimator", "estimate", "std_error", "ci_low", "ci_high"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 50 * 3);
    let dr_rows: Vec<_> = rows.iter().filter(|r| &r[1] == "DR").collect();
    assert_eq!(dr_rows.len(), 50);
    assert!(dr_rows.iter().all(|r| !r[3].is_empty()));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "estimate");
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 2);
    assert!(out.join("nuisance/p_hat.csv").exists());

    // a second run into the same directory needs --force
    let again = drlfm(&estimate_args(s(&y), s(&a), s(&out)));
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("--force"));
    let mut forced = estimate_args(s(&y), s(&a), s(&out));
    forced.extend(["--force", "--estimators", "dr", "--partition", "random", "--seed", "4"]);
    let res = drlfm(&forced);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let rows = csv::Reader::from_path(out.join("results.csv")).unwrap().records().count();
    assert_eq!(rows, 50);
}

#[test]
fn estimate_rejects_non_binary_treatment() {
    let dir = tempfile::tempdir().unwrap();
    let (y, a) = write_inputs(dir.path());
    let mut bad: Matrix = read_dense_file(&a, false).unwrap();
    bad = Matrix::from_fn(bad.rows(), bad.cols(), |i, j| if (i, j) == (3, 4) { 2.0 } else { bad.get(i, j) }).unwrap();
    write_dense_file(&a, &bad, false).unwrap();
    let res = drlfm(&estimate_args(s(&y), s(&a), s(&dir.path().join("run"))));
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("treatment matrix must be binary"), "{}", stderr(&res));
}

#[test]
fn estimate_rejects_bad_lambda_bar_and_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let (y, a) = write_inputs(dir.path());
    let r1 = dir.path().join("r1");
    let mut args = estimate_args(s(&y), s(&a), s(&r1));
    args.extend(["--lambda-bar", "0.6"]);
    let res = drlfm(&args);
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("lambda_bar"));

    let small = dir.path().join("small.csv");
    fs::write(&small, "1,0\n0,1\n").unwrap();
    let res = drlfm(&estimate_args(s(&y), s(&small), s(&dir.path().join("r2"))));
    assert_eq!(code(&res), 2);
    let msg = stderr(&res);
    assert!(msg.contains("(100, 50)") && msg.contains("(2, 2)"), "{msg}");

    let res = drlfm(&estimate_args(s(&dir.path().join("missing.csv")), s(&a), s(&dir.path().join("r3"))));
    assert_eq!(code(&res), 2);
}

#[test]
fn simulate_is_thread_count_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    fs::write(&cfg, "n = 20\nm = 20\nr_p = 1\nr_theta = 1\nreps = 6\nseed = 9\n").unwrap();
    let mut csvs = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(format!("t{threads}"));
        let res = drlfm(&["simulate", "--config", s(&cfg), "--threads", threads, "--out", s(&out)]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
        for f in ["aggregate.json", "histogram.csv", "manifest.json"] {
            assert!(out.join(f).exists());
        }
        csvs.push(fs::read(out.join("replications.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn simulate_flags_override_config_and_errors_are_enumerated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(&cfg, r#"{"n": 20, "m": 20, "r_p": 1, "r_theta": 1, "reps": 50}"#).unwrap();
    let out = dir.path().join("run");
    let res = drlfm(&["simulate", "--config", s(&cfg), "--reps", "2", "--seed", "3", "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["simulation"]["reps"], 2);
    assert_eq!(manifest["seed"], 3);

    fs::write(&cfg, r#"{"n": 20, "lambda_bar": 0.7, "ci_level": 2.0, "reps": 0}"#).unwrap();
    let res = drlfm(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("bad"))]);
    assert_eq!(code(&res), 2);
    let msg = stderr(&res);
    for needle in ["lambda_bar must lie", "ci_level", "reps must be"] {
        assert!(msg.contains(needle), "{needle} missing from {msg}");
    }
}

fn rank_one(n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..m).map(|j| (0.5 + i as f64 / n as f64) * (0.7 + (j as f64 * 0.3).sin().abs())).collect())
        .collect()
}

fn write_masked_csv(path: &Path, rows: &[Vec<f64>], missing: impl Fn(usize, usize) -> bool) {
    let text: String = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.iter()
                .enumerate()
                .map(|(j, v)| if missing(i, j) { String::new() } else { v.to_string() })
                .collect::<Vec<_>>()
                .join(",")
                + "\n"
        })
        .collect();
    fs::write(path, text).unwrap();
}

#[test]
fn complete_recovers_a_block_missing_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let truth = rank_one(8, 8);
    let input = dir.path().join("s.csv");
    write_masked_csv(&input, &truth, |i, j| i >= 4 && j >= 4);
    let out = dir.path().join("run");
    let res = drlfm(&["complete", "--s", s(&input), "--rank", "1", "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let got: Matrix = read_dense_file(out.join("completed.csv"), false).unwrap();
    for (i, row) in truth.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            assert!((got.get(i, j) - v).abs() < 1e-8);
        }
    }

    // fully observed input is returned denoised, here unchanged
    write_masked_csv(&input, &truth, |_, _| false);
    let res = drlfm(&["complete", "--s", s(&input), "--rank", "1", "--out", s(&out), "--force"]);
    assert_eq!(code(&res), 0);
    let got: Matrix = read_dense_file(out.join("completed.csv"), false).unwrap();
    assert!((got.get(7, 7) - truth[7][7]).abs() < 1e-8);
}

#[test]
fn complete_reports_scattered_missingness() {
    let dir = tempfile::tempdir().unwrap();
    let truth = rank_one(12, 12);
    let input = dir.path().join("s.csv");
    // one hole per row leaves no fully observed row
    write_masked_csv(&input, &truth, |i, j| j == (i * 5) % 12);
    let res = drlfm(&["complete", "--s", s(&input), "--rank", "1", "--out", s(&dir.path().join("a"))]);
    assert_eq!(code(&res), 2);
    let msg = stderr(&res);
    assert!(msg.contains("no fully observed rows") && msg.contains("(0, 0)"), "{msg}");

    let out = dir.path().join("b");
    let res = drlfm(&["complete", "--s", s(&input), "--rank", "1", "--cross-fit", "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let got: Matrix = read_dense_file(out.join("completed.csv"), false).unwrap();
    assert_eq!(got.shape(), (12, 12));
}

#[test]
fn singular_rotation_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("s.csv");
    // observed rows vanish on the observed columns, so the alignment is singular
    fs::write(&input, "0,0,1,1\n0,0,1,2\n1,1,,\n1,2,,\n").unwrap();
    let res = drlfm(&["complete", "--s", s(&input), "--rank", "1", "--out", s(&dir.path().join("run"))]);
    assert_eq!(code(&res), 3, "{}", stderr(&res));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&drlfm(&["estimate"])), 2);
    assert_eq!(code(&drlfm(&["frobnicate"])), 2);
}
