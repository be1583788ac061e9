use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use psmed::simulation::simulate;

fn psmed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psmed")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_data(path: &Path, n: usize, seed: u64, shift: f64) {
    let d = simulate(n, seed).unwrap();
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["x1", "x2", "x3", "x4", "z", "d", "m", "y"]).unwrap();
    for i in 0..d.n() {
        let mut row: Vec<String> = d.x_row(i).iter().map(|v| v.to_string()).collect();
        row.push(d.z()[i].to_string());
        row.push(d.d()[i].to_string());
        row.push(d.m()[i].to_string());
        row.push((d.y()[i] + shift).to_string());
        w.write_record(&row).unwrap();
    }
    w.flush().unwrap();
}

const DATA: &str = r#"
[data]
path = "data.csv"
treatment = "z"
event = "d"
mediator = "m"
outcome = "y"
covariates = ["x1", "x2", "x3", "x4"]
mediator_kind = "binary"
monotonicity = "standard"
"#;

fn estimate_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{DATA}\n{extra}")).unwrap();
    path
}

#[test]
fn estimate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_data(&dir.path().join("data.csv"), 600, 1, 0.0);
    let cfg = estimate_config(dir.path(), "[analysis]\nmethods = [\"mr\", \"np\"]\nscales = [\"difference\", \"ratio\"]\nbootstrap = 50\nseed = 9\n");
    let cfg = cfg.to_str().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = psmed(&["estimate", "--config", cfg, "--out", out_dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((fs::read(out_dir.join("psmed_results.csv")).unwrap(), fs::read(out_dir.join("psmed_metadata.json")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert!(text.starts_with("estimand,stratum,scale,method,point,se,ci_low,ci_high,inference,b_or_v,seed\n"));
    assert!(text.lines().any(|l| l.starts_with("pnie,10,difference,mr,")));
    assert!(text.lines().any(|l| l.contains(",np,") && l.contains("eif_wald")));
}

#[test]
fn seed_flag_changes_bootstrap_only() {
    let dir = tempfile::tempdir().unwrap();
    write_data(&dir.path().join("data.csv"), 500, 2, 0.0);
    let cfg = estimate_config(dir.path(), "[analysis]\nbootstrap = 50\n");
    let run = |seed: &str, sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = psmed(&["estimate", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out_dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
        fs::read_to_string(out_dir.join("psmed_results.csv")).unwrap()
    };
    let (a, b) = (run("1", "a"), run("2", "b"));
    assert_ne!(a, b);
    let point = |t: &str| t.lines().nth(1).unwrap().split(',').nth(4).unwrap().to_string();
    assert_eq!(point(&a), point(&b));
}

#[test]
fn ratio_scale_with_negative_theta_is_an_estimation_error() {
    let dir = tempfile::tempdir().unwrap();
    write_data(&dir.path().join("data.csv"), 500, 3, -1000.0);
    let cfg = estimate_config(dir.path(), "[analysis]\nscales = [\"ratio\"]\nbootstrap = 0\n");
    let out = psmed(&["estimate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    let diag = fs::read_to_string(dir.path().join("psmed_diagnostics.json")).unwrap();
    assert!(diag.contains("\"exit_code\": 4") && diag.contains("division by zero"));
}

#[test]
fn missing_column_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write_data(&dir.path().join("data.csv"), 200, 4, 0.0);
    let path = dir.path().join("run.toml");
    fs::write(&path, DATA.replace("\"x4\"", "\"x5\"")).unwrap();
    assert_eq!(code(&psmed(&["estimate", "--config", path.to_str().unwrap()])), 3);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = estimate_config(dir.path(), "[analysis]\nbootsrap = 50\n");
    assert_eq!(code(&psmed(&["estimate", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn invalid_scenario_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.toml");
    fs::write(&path, "scenario = \"VII\"\nreps = 5\n").unwrap();
    let out = psmed(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("VII"));
}

#[test]
fn short_simulation_is_flagged_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.toml");
    fs::write(
        &path,
        "scenario = \"III\"\nn = 400\nreps = 10\nmethods = [\"c\", \"mr\"]\ntruth_draws = 1000000\nseed = 4\n\n[[targets]]\nestimand = \"theta10\"\nstratum = \"10\"\n",
    )
    .unwrap();
    let mut summaries = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let out = psmed(&["simulate", "--config", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("low replicate count"));
        summaries.push(fs::read(out_dir.join("psmed_summary.csv")).unwrap());
        let reps = fs::read_to_string(out_dir.join("psmed_replicates.csv")).unwrap();
        assert_eq!(reps.lines().count(), 1 + 10 * 2);
        assert!(out_dir.join("psmed_truth.csv").exists());
    }
    assert_eq!(summaries[0], summaries[1]);
    let text = String::from_utf8(summaries[0].clone()).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn sensitivity_grid_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    write_data(&dir.path().join("data.csv"), 800, 5, 0.0);
    let path = dir.path().join("sens.toml");
    let text = format!("{DATA}\n[effect]\nestimand = \"pnie\"\nstratum = \"10\"\n\n[grid]\nframework = \"t\"\nzeta = [0.5, 1.0, 2.0]\n");
    fs::write(&path, text).unwrap();
    let out = psmed(&["sensitivity", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let grid = fs::read_to_string(dir.path().join("psmed_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 4);
    assert!(grid.lines().nth(2).unwrap().starts_with("t,NA,NA,NA,NA,1,pnie,10,difference,mr,"));
}

#[test]
fn oracle_passes_on_the_shipped_fixture() {
    let out = psmed(&["oracle"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/reference_strong_dgp.json");
    assert_eq!(code(&psmed(&["oracle", "--fixture", fixture])), 0);
}

#[test]
fn tampered_golden_value_fails_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let src = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/reference_dgp.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&src).unwrap();
    let g = &mut v["golden"][0]["value"];
    *g = serde_json::json!(g.as_f64().unwrap() + 1e-6);
    let path = dir.path().join("tampered.json");
    fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    let out = psmed(&["oracle", "--fixture", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let report = fs::read_to_string(dir.path().join("psmed_oracle.csv")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("golden values,") && l.contains(",false,")));
}

#[test]
fn corrupted_fixture_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{\"name\": \"x\", \"points\": [").unwrap();
    assert_eq!(code(&psmed(&["oracle", "--fixture", path.to_str().unwrap()])), 3);
    let src = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/reference_dgp.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&src).unwrap();
    v["points"][0]["prob"] = serde_json::json!(0.9);
    fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    assert_eq!(code(&psmed(&["oracle", "--fixture", path.to_str().unwrap()])), 3);
}
