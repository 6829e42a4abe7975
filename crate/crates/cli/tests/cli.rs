use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 5
replications = 200
n_grid = [30, 60]

[model]
mu1 = 0.5
mu2 = 0.0
beta = [1.0, 1.0]
sigma_eps = 1.0

[[covariates]]
kind = "discrete"
levels = [[0.0, 0.5], [1.0, 0.5]]
cutpoints = [0.5]

[[covariates]]
kind = "discrete"
levels = [[0.0, 0.5], [1.0, 0.5]]
cutpoints = [0.5]

[[procedures]]
kind = "complete"

[[procedures]]
kind = "pocock_simon"
"#;

fn carct(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carct"))
        .args(args)
        .current_dir(dir)
        .env_remove("CARCT_WORKERS")
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_g_reports_each_condition() {
    let dir = tempfile::tempdir().unwrap();
    let out = carct(&["validate-g", "step:0.6667"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    let result = |cond: &str| text.lines().find(|l| l.contains(cond)).unwrap().split_whitespace().nth(1).unwrap().to_string();
    assert_eq!(result("favours_lagging_arm"), "pass");
    assert_eq!(result("strong_drift"), "pass");
    assert_eq!(result("vanishing_bias"), "fail");
    assert_eq!(result("symmetric"), "pass");
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = setup();
    assert_eq!(carct(&["validate-g", "step:x"], dir.path()).status.code(), Some(2));
    assert_eq!(carct(&["validate-g", "step:0.3"], dir.path()).status.code(), Some(2));
    assert_eq!(carct(&["simulate", "missing.toml"], dir.path()).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), CONFIG.replace("seed", "sed")).unwrap();
    let out = carct(&["simulate", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("did you mean `seed`"));
}

#[test]
fn unwritable_output_exits_with_three() {
    let dir = setup();
    std::fs::write(dir.path().join("blocker"), "").unwrap();
    let out = carct(&["simulate", "exp.toml", "--out-dir", "blocker/out"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = setup();
    assert!(carct(&["simulate", "exp.toml", "--out-dir", "a"], dir.path()).status.success());
    assert!(carct(&["simulate", "exp.toml", "--out-dir", "b", "--workers", "4"], dir.path()).status.success());
    for f in ["summary.csv", "summary.json", "series_M_n.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    // the manifest alone is enough to rerun
    assert!(carct(&["simulate", "a/manifest.json", "--out-dir", "c"], dir.path()).status.success());
    assert_eq!(
        std::fs::read(dir.path().join("a/summary.csv")).unwrap(),
        std::fs::read(dir.path().join("c/summary.csv")).unwrap()
    );
}

#[test]
fn environment_overrides_worker_flag() {
    let dir = setup();
    let out = Command::new(env!("CARGO_BIN_EXE_carct"))
        .args(["simulate", "exp.toml", "--workers", "2"])
        .env("CARCT_WORKERS", "3")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest = std::fs::read_to_string(dir.path().join("carct-out/manifest.json")).unwrap();
    assert!(manifest.contains("\"workers\": 3"), "{manifest}");

    let out = Command::new(env!("CARGO_BIN_EXE_carct"))
        .args(["simulate", "exp.toml"])
        .env("CARCT_WORKERS", "many")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn power_table_carries_the_prediction() {
    let dir = setup();
    let out = carct(&["power", "exp.toml", "--format", "json", "--seed", "9"], dir.path());
    assert!(out.status.success());
    let rows: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let complete = rows.as_array().unwrap().iter().find(|r| r["procedure"] == "complete").unwrap();
    let want = (1.0f64 + 0.0625).powf(-1.5);
    assert!((complete["predicted_LossP"].as_f64().unwrap() - want).abs() < 1e-14);
    assert!(dir.path().join("carct-out/power.json").exists());
    let manifest = std::fs::read_to_string(dir.path().join("carct-out/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 9"));
}

#[test]
fn selection_bias_and_oracle_commands_write_tables() {
    let dir = setup();
    assert!(carct(&["selection-bias", "exp.toml", "--replications", "50"], dir.path()).status.success());
    assert!(dir.path().join("carct-out/selection_bias.csv").exists());
    assert!(dir.path().join("carct-out/rates.csv").exists());
    std::fs::write(dir.path().join("small.toml"), CONFIG.replace("n_grid = [30, 60]", "n_grid = [1, 2, 3]")).unwrap();
    let out = carct(&["oracle-check", "small.toml", "--out-dir", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("o/oracle_check.csv")).unwrap();
    assert!(table.lines().count() > 10);
}
