use std::fs;
use std::path::Path;
use std::process::Command;

use isvi::trace::{read_evals, read_trace, EVAL_HEADER, TRACE_HEADER};

const FIT: &str = r#"
seed = 4
batch_size = 10
wall_clock = false
[model]
kind = "conjugate-normal-known-variance"
dim = 2
[data]
n = 50
[stop]
max_epochs = 3
[eval]
every_steps = 5
num_samples = 3
[optimizer]
kind = "isgd"
reuse_probability = 0.5
"#;

fn isvi(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_isvi")).args(args).output().unwrap()
}

fn run_with(dir: &Path, sub: &str, config: &str, out: &str) -> std::process::Output {
    let cfg = dir.join(format!("{out}.toml"));
    fs::write(&cfg, config).unwrap();
    let out_dir = dir.join(out);
    isvi(&[sub, "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()])
}

#[test]
fn fit_writes_reproducible_files() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = run_with(dir.path(), "fit", FIT, name);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["run.trace.csv", "run.eval.csv", "summary.json"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    let trace = fs::read_to_string(dir.path().join("a/run.trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some(TRACE_HEADER));
    let records = read_trace(trace.as_bytes()).unwrap();
    assert!(records.windows(2).all(|w| w[1].step == w[0].step + 1));
    assert!(records.iter().all(|r| r.wall_ms == 0.0));

    let evals = fs::read_to_string(dir.path().join("a/run.eval.csv")).unwrap();
    assert_eq!(evals.lines().next(), Some(EVAL_HEADER));
    assert_eq!(read_evals(evals.as_bytes()).unwrap()[0].step, 0);

    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"].as_u64(), Some(records.len() as u64));
    assert!(summary["analytic_posterior"]["log_evidence"].is_f64());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fit.toml");
    fs::write(&cfg, FIT).unwrap();
    let run = |seed: &str, out: &str| {
        let o = dir.path().join(out);
        let status = isvi(&["fit", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", o.to_str().unwrap()]);
        assert!(status.status.success());
        fs::read(o.join("run.trace.csv")).unwrap()
    };
    assert_eq!(run("4", "same"), fs::read(dir.path().join("same/run.trace.csv")).unwrap());
    assert_ne!(run("4", "four"), run("5", "five"));
}

#[test]
fn invalid_reuse_probability_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(dir.path(), "fit", &FIT.replace("reuse_probability = 0.5", "reuse_probability = 1.5"), "bad");
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("reuse_probability"), "{err}");
}

#[test]
fn unknown_keys_and_missing_seed_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(dir.path(), "fit", &FIT.replace("[stop]", "[stop]\nmax_epoch = 3"), "typo");
    assert_eq!(out.status.code(), Some(1));
    let out = run_with(dir.path(), "fit", &FIT.replace("seed = 4", ""), "noseed");
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(isvi(&["fit", "--config", "/nonexistent/run.toml"]).status.code(), Some(1));
}

const BENCH: &str = r#"
seed = 2
batch_size = 10
wall_clock = false
[model]
kind = "conjugate-normal-known-variance"
dim = 2
[data]
n = 50
[stop]
max_epochs = 4
[[variants]]
kind = "sgd"
"#;

#[test]
fn bench_needs_two_variants() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(dir.path(), "bench", BENCH, "one");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("variants"));
}

#[test]
fn bench_writes_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{BENCH}[[variants]]\nkind = \"isgd\"\n[threshold]\nnats = 1000.0\n");
    let out = run_with(dir.path(), "bench", &config, "two");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("two/comparison.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("variant,reached,step,model_grad_evals,logp_evals,wall_ms"));
    assert!(rows[1].starts_with("sgd,true") && rows[2].starts_with("isgd,true"));
    assert!(dir.path().join("two/isgd.trace.csv").exists());
}

#[test]
fn unreachable_threshold_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = FIT.replace("[optimizer]", "[threshold]\nelbo = 1e9\n[optimizer]");
    let out = run_with(dir.path(), "fit", &config, "high");
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("high/summary.json").exists());
}

#[test]
fn weight_decay_writes_one_file_per_size() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
seed = 1
batch_size = 100
[model]
kind = "conjugate-normal-known-variance"
dim = 10
[data]
n = 20
[approximation]
init_log_scale = -1.0
[adam]
learning_rate = 0.1
[weight_decay]
factor_sizes = [1, 5, 10]
replicates = 20
reuse_steps = 4
"#;
    let out = run_with(dir.path(), "weight-decay", config, "wd");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for s in [1, 5, 10] {
        let csv = fs::read_to_string(dir.path().join(format!("wd/weight_decay_size_{s}.csv"))).unwrap();
        assert_eq!(csv.lines().next(), Some("reuse_step,mean_weight,std_error,replicates"));
        assert_eq!(csv.lines().count(), 5);
    }
}
