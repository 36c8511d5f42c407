use std::path::Path;
use std::process::{Command, Output};

fn decmm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decmm"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
name = "small"
seeds = [1, 2]
log_every = 10
output = "out"

[problem]
kind = "pl-game"
agents = 4
samples = 50
dim = 4

[graph]
kind = "ring"

[algorithm]
methods = ["spider", "sgd"]
s1 = 10
s2 = 2
q = 10

[algorithm.step]
mode = "explicit"
eta_x = 0.01
eta_y = 0.05

[budget]
iterations = 40
"#;

#[test]
fn run_writes_outputs_relative_to_the_working_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let elsewhere = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    let o = decmm(&["run", cfg.to_str().unwrap()], elsewhere.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("wrote 4 CSVs"));
    let csv = std::fs::read_to_string(elsewhere.path().join("out/spider-seed1.csv")).unwrap();
    assert!(csv.starts_with("t,epoch,oracle_calls,comm_rounds,stationarity,consensus,dual_subopt,grad_phi_norm,est_error\n"));
    assert_eq!(csv.lines().count(), 6);
    assert!(elsewhere.path().join("out/summary.json").is_file());
}

#[test]
fn json_configs_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: toml::Value = toml::from_str(SMALL).unwrap();
    std::fs::write(dir.path().join("small.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = decmm(
        &["run", "small.json", "--seeds", "7", "--agents", "3", "--graph", "complete", "--output", "o2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o2/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["agents"], 3);
    assert_eq!(summary["seeds"], serde_json::json!([7]));
    assert!(summary["rho"].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn invalid_config_reports_field_paths() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), SMALL.replace("q = 10", "q = 0")).unwrap();
    let o = decmm(&["run", "bad.toml"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("algorithm.q"), "{}", stderr(&o));
}

#[test]
fn compare_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let o = decmm(&["compare", "small.toml", "--methods", "spider,sgd", "--epochs", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("matched budget: 100 draws per agent"), "{text}");
    assert!(text.contains("wins (row beats column)"));
    let o = decmm(&["compare", "small.toml", "--methods", "spider"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("≥2 methods required"));
}

#[test]
fn sweep_over_er_probability() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let o = decmm(
        &["sweep", "small.toml", "--axis", "er_p", "--values", "0.3,0.9", "--replicates", "2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("er_p = 0.3: mean rho"));
    let rows = std::fs::read_to_string(dir.path().join("out/sweep-er_p.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 2 * 2);
    let o = decmm(&["sweep", "small.toml", "--axis", "rho", "--values", "1"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn validate_graph_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = r#"{"M": 3, "edges": [[0, 1], [1, 2], [0, 2]], "weights": [0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5]}"#;
    let bad = r#"{"M": 3, "edges": [[0, 1], [1, 2], [0, 2]], "weights": [0.9, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5]}"#;
    std::fs::write(dir.path().join("good.json"), good).unwrap();
    std::fs::write(dir.path().join("bad.json"), bad).unwrap();
    let o = decmm(&["validate-graph", "good.json"], dir.path());
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let o = decmm(&["validate-graph", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

#[test]
fn preset_prints_parseable_toml() {
    let dir = tempfile::tempdir().unwrap();
    let o = decmm(&["preset", "pl-game"], dir.path());
    assert!(o.status.success());
    let back = decmm::ExperimentConfig::parse(&stdout(&o)).unwrap();
    assert_eq!(back, decmm::preset("pl-game").unwrap());
    assert!(!decmm(&["preset", "nope"], dir.path()).status.success());
}
