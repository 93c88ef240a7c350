//! Contract tests for the `pspt` binary: exit codes, file formats, atomic
//! emission, and ingest/emit round-trips.

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use pathwise_spt_cli::ingest::ingest_csv;

fn pspt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pspt"))
        .args(args)
        .env_remove("PSPT_OUT")
        .output()
        .expect("binary runs")
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

const SMALL_CONFIG: &str = "\
synthetic.dim = 3
synthetic.steps = 1024
synthetic.diffusion = 0.21,0,0; 0.07,0.18,0; 0.03,-0.04,0.23
seed = 42
family = geometric
lambda = 1.0
theta = 16
depth = 10
levels = 6,8,10
";

#[test]
fn run_emits_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    write(&config, SMALL_CONFIG);
    let out_dir = dir.path().join("out");
    let output = pspt(&["run", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));

    let ledger = std::fs::read_to_string(out_dir.join("ledger_state_level10.csv")).unwrap();
    assert!(ledger.starts_with("t,lhs,G_term,g_cum,h_cum,residual\n"));
    assert_eq!(ledger.lines().count(), 1026);

    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("status = pass"));
    assert!(summary.contains("rng_algorithm = chacha12-boxmuller"));
    assert!(summary.lines().all(|l| l.is_empty() || l.contains(" = ")));
}

#[test]
fn collapsed_mixing_makes_route_ledgers_agree() {
    // With the path dependence mixed away, the state-dependent and
    // path-dependent ledgers describe the same numbers; their CSVs agree
    // cell by cell within float tolerance.
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    write(&config, SMALL_CONFIG);
    let out_dir = dir.path().join("out");
    let output = pspt(&["run", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(output.status.success());

    for level in [6, 8, 10] {
        let state = std::fs::read_to_string(out_dir.join(format!("ledger_state_level{level}.csv"))).unwrap();
        let functional =
            std::fs::read_to_string(out_dir.join(format!("ledger_functional_level{level}.csv"))).unwrap();
        for (ls, lf) in state.lines().skip(1).zip(functional.lines().skip(1)) {
            for (cs, cf) in ls.split(',').zip(lf.split(',')) {
                let a: f64 = cs.parse().unwrap();
                let b: f64 = cf.parse().unwrap();
                assert!((a - b).abs() <= 1e-12, "{a} vs {b} at level {level}");
            }
        }
    }
}

#[test]
fn simulate_then_ingest_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("path.spec");
    write(&spec, "dim = 2\nsteps = 200\nvol = 0.3\ndrift = 0.05,-0.02\ninitial = 1.5,0.7\nseed = 9\n");
    let csv = dir.path().join("prices.csv");
    let output = pspt(&["simulate", "--spec", spec.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));

    let ingested = ingest_csv(&csv).unwrap();
    assert_eq!(ingested.tickers, vec!["A1", "A2"]);

    let spec = pathwise_spt::synthetic::SyntheticSpec {
        dim: 2,
        steps: 200,
        horizon: 1.0,
        drift: vec![0.05, -0.02],
        diffusion: vec![vec![0.3, 0.0], vec![0.0, 0.3]],
        initial: vec![1.5, 0.7],
        seed: 9,
    };
    let original = pathwise_spt::synthetic::simulate_paths(&spec).unwrap();
    assert_eq!(original.values(), ingested.path.values());
}

#[test]
fn csv_source_backtest_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("path.spec");
    write(&spec, "dim = 3\nsteps = 512\nvol = 0.2\nseed = 4\n");
    let csv = dir.path().join("prices.csv");
    assert!(pspt(&["simulate", "--spec", spec.to_str().unwrap(), "--out", csv.to_str().unwrap()])
        .status
        .success());

    let config = dir.path().join("run.conf");
    write(
        &config,
        &format!(
            "csv = {}\nfamily = entropy\nlambda = 0.9\ntheta = 16\ndepth = 9\nlevels = 5,7,9\n",
            csv.display()
        ),
    );
    let out_dir = dir.path().join("out");
    let output = pspt(&["run", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("day_count = days"));
    assert!(summary.contains("tickers = A1,A2,A3"));
}

#[test]
fn wide_market_csv_ingests_quickly() {
    // A 30-asset, 2600-row table is the shape of a daily large-cap index
    // history; parsing must stay well under a second.
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("path.spec");
    write(&spec, "dim = 30\nsteps = 2599\nvol = 0.2\nseed = 11\n");
    let csv = dir.path().join("prices.csv");
    assert!(pspt(&["simulate", "--spec", spec.to_str().unwrap(), "--out", csv.to_str().unwrap()])
        .status
        .success());

    let start = Instant::now();
    let ingested = ingest_csv(&csv).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(ingested.path.dim(), 30);
    assert_eq!(ingested.path.len(), 2600);
    assert!(elapsed.as_secs_f64() < 1.0, "ingest took {elapsed:?}");
}

#[test]
fn check_reports_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    write(&config, SMALL_CONFIG);
    let output = pspt(&["check", "--config", config.to_str().unwrap()]);
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("status = pass"));
    assert!(!dir.path().join("pspt-out").exists());
}

#[test]
fn env_var_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    write(&config, SMALL_CONFIG);
    let out_dir = dir.path().join("via-env");
    let output = Command::new(env!("CARGO_BIN_EXE_pspt"))
        .args(["run", "--config", config.to_str().unwrap()])
        .env("PSPT_OUT", &out_dir)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(out_dir.join("summary.txt").exists());
}

#[test]
fn usage_and_io_errors_exit_two() {
    let output = pspt(&["run", "--config", "/nonexistent/run.conf"]);
    assert_eq!(output.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.conf");
    write(&config, "family = entropy\n"); // no data source
    let output = pspt(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("no data source"));

    let csv = dir.path().join("bad.csv");
    write(&csv, "date,AAA\n2020-01-01,1.0\n2020-01-02,-3.0\n");
    let run_conf = dir.path().join("run.conf");
    write(&run_conf, &format!("csv = {}\nfamily = entropy\nlambda = 0.9\ntheta = 4\n", csv.display()));
    let output = pspt(&["run", "--config", run_conf.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("not strictly positive"));
}

#[test]
fn unwritable_directory_leaves_no_partial_files() {
    // A destination nested under a regular file cannot be created by any
    // user (permission-bit schemes don't block a root test runner).
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    write(&config, SMALL_CONFIG);
    let blocker = dir.path().join("blocker");
    write(&blocker, "not a directory");

    let out_dir = blocker.join("out");
    let output = pspt(&["run", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(!out_dir.exists());
    assert_eq!(std::fs::read_to_string(&blocker).unwrap(), "not a directory");
}

#[test]
fn failing_diagnostics_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    // An absurd threshold forces a diagnostic failure on a healthy run.
    write(&config, &format!("{SMALL_CONFIG}threshold.residual = 1e-18\n"));
    let out_dir = dir.path().join("out");
    let output = pspt(&["run", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("status = fail"));
}
