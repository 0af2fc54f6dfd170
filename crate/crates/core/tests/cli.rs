use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sqlshaper::catalog::SchemaCatalog;
use sqlshaper::config::RunConfig;
use sqlshaper::pipeline::{self, GenerateOptions, Manifest, PipelineError, RunStatus};

const DEMO: &str = r#"seed = 7

[benchmark]
name = "uniform-1k"
cost_type = "plan_cost"
range = [0.0, 10000.0]
num_queries = 1000
num_intervals = 10
shape = { kind = "uniform" }

[catalog]
builtin = "tpch"

[oracle]
kind = "synthetic"
default = "linear(0, 10000)"

[provider]
kind = "mock"
seed = 7
"#;

fn sqlshaper(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqlshaper")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&sqlshaper(&["--help"])), 0);
    assert_eq!(code(&sqlshaper(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&sqlshaper(&["frobnicate"])), 1);
    let o = sqlshaper(&["generate"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
}

#[test]
fn bad_configs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{DEMO}\nunknown_key = 3\n"));
    assert_eq!(code(&sqlshaper(&["--config", &cfg, "generate"])), 1);

    let cfg = write_config(dir.path(), &DEMO.replace("seed = 7\n\n[benchmark]", "[benchmark]"));
    assert_eq!(code(&sqlshaper(&["--config", &cfg, "templates"])), 1);

    let cfg = write_config(dir.path(), &DEMO.replace("num_intervals = 10", "num_intervals = 2000"));
    assert_eq!(code(&sqlshaper(&["--config", &cfg, "generate"])), 1);
}

#[test]
fn unreachable_database_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = DEMO.replace("[catalog]\nbuiltin = \"tpch\"", "[database]\nurl = \"fixture://nowhere\"");
    let cfg = write_config(dir.path(), &text);
    let o = sqlshaper(&["--config", &cfg, "--out", dir.path().to_str().unwrap(), "introspect"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn report_without_manifest_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&sqlshaper(&["--out", dir.path().to_str().unwrap(), "report"])), 1);
}

#[test]
fn introspect_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let text = DEMO.replace("[catalog]\nbuiltin = \"tpch\"", "[database]\nurl = \"fixture://users_orders\"");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let args = ["--config", &cfg, "--out", out.to_str().unwrap(), "introspect"];
    assert_eq!(code(&sqlshaper(&args)), 0);
    let first = fs::read(out.join("catalog.json")).unwrap();
    let catalog: SchemaCatalog = serde_json::from_slice(&first).unwrap();
    assert_eq!(catalog.tables.len(), 2);
    assert_eq!(catalog.join_edges.len(), 1);
    assert_eq!(code(&sqlshaper(&args)), 0);
    assert_eq!(fs::read(out.join("catalog.json")).unwrap(), first);
}

#[test]
fn generate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), DEMO);
    let out = dir.path().join("out");
    let o = sqlshaper(&["--config", &cfg, "--out", out.to_str().unwrap(), "generate"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("complete: 1000 queries"));

    let csv = fs::read_to_string(out.join("histogram.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.ends_with(",100,100")), "{csv}");
    assert_eq!(fs::read_dir(out.join("queries")).unwrap().count(), 1000);

    let o = sqlshaper(&["--out", out.to_str().unwrap(), "report"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("wasserstein distance 0"), "{text}");
    assert!(!text.contains("unmet"));
    assert!(!text.contains("warning"));
}

#[test]
fn report_flags_unmet_bins() {
    let dir = tempfile::tempdir().unwrap();
    let text = DEMO.replace("default = \"linear(0, 10000)\"", "default = \"linear(0, 7999)\"");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    assert_eq!(code(&sqlshaper(&["--config", &cfg, "--out", out.to_str().unwrap(), "--no-refine", "generate"])), 0);
    let report = String::from_utf8_lossy(&sqlshaper(&["--out", out.to_str().unwrap(), "report"]).stdout).to_string();
    assert_eq!(report.matches("unmet").count(), 2, "{report}");
    assert!(report.contains("skipped intervals: [8, 9]"), "{report}");
}

#[test]
fn resume_finishes_a_stopped_run_identically() {
    let config = RunConfig::parse(DEMO).unwrap();
    let fresh = tempfile::tempdir().unwrap();
    let whole = pipeline::run_generate(&config, fresh.path(), GenerateOptions::default()).unwrap();

    let mut limited = config.clone();
    limited.limits.max_evaluations = Some(whole.oracle_evaluations / 2);
    limited.limits.checkpoint_every = 20;
    let dir = tempfile::tempdir().unwrap();
    let stopped = pipeline::run_generate(&limited, dir.path(), GenerateOptions::default()).unwrap();
    assert_eq!(stopped.status, RunStatus::Incomplete);
    assert!(stopped.distance > 0.0);

    let resumed = pipeline::run_generate(&config, dir.path(), GenerateOptions { resume: true }).unwrap();
    assert_eq!(resumed.status, RunStatus::Complete);
    assert_eq!(resumed.distance, 0.0);
    assert_eq!(resumed.queries, whole.queries);
    assert_eq!(resumed.oracle_evaluations, whole.oracle_evaluations);
    assert_eq!(Manifest::load(dir.path()).unwrap().queries, whole.queries);
    assert_eq!(
        fs::read_to_string(dir.path().join("workload.sql")).unwrap(),
        fs::read_to_string(fresh.path().join("workload.sql")).unwrap()
    );
}

#[test]
fn resume_rejects_another_config() {
    let config = RunConfig::parse(DEMO).unwrap();
    let dir = tempfile::tempdir().unwrap();
    pipeline::run_generate(&config, dir.path(), GenerateOptions::default()).unwrap();
    let mut other = config.clone();
    other.seed = 8;
    let err = pipeline::run_generate(&other, dir.path(), GenerateOptions { resume: true }).unwrap_err();
    assert!(matches!(err, PipelineError::Resume(_)), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn empty_spec_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("specs.toml"), "specs = []\n").unwrap();
    let cfg = write_config(dir.path(), &format!("{DEMO}\n[templates]\nspecs_file = \"specs.toml\"\n"));
    let o = sqlshaper(&["--config", &cfg, "--out", dir.path().join("out").to_str().unwrap(), "templates"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("defines no specs"));
}

#[test]
fn unsatisfiable_spec_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let specs = "[[specs]]\nid = \"one_join\"\nnum_joins = 1\n\n[[specs]]\nid = \"five_joins\"\nnum_joins = 5\n";
    fs::write(dir.path().join("specs.toml"), specs).unwrap();
    let text = DEMO.replace("builtin = \"tpch\"", "builtin = \"users_orders\"");
    let cfg = write_config(dir.path(), &format!("{text}\n[templates]\nspecs_file = \"specs.toml\"\n"));
    let o = sqlshaper(&["--config", &cfg, "--out", dir.path().join("out").to_str().unwrap(), "templates"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("verified 1 of 2 specs"), "{stdout}");
    assert!(stdout.contains("failed five_joins"), "{stdout}");
}
