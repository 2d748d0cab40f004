use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use covbal_core::synth::{self, Design};
use covbal_service::report::Report;
use tempfile::TempDir;

const ROLES: &str = r#"
[roles]
treatment = "treatment"
treated_level = "1"
outcome = "outcome"
continuous = ["age", "score", "dose"]
binary = ["female"]
categorical = ["region"]
"#;

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn covbal(config: &Path, data: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covbal"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--data")
        .arg(data)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn covbal")
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn report(out: &Path) -> Report {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn bundled_run_writes_five_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = covbal(&bundled("synthetic.toml"), &bundled("synthetic.csv"), &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "report.md", "weights.csv", "balance.csv", "sensitivity.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let r = report(&out);
    assert!(r.effect.stamp.is_none());
    // bundled data carries a true effect of 2
    let e = &r.effect.estimate;
    assert!((e.estimate - 2.0).abs() < 4.0 * e.se, "{e:?}");
}

#[test]
fn failing_named_method_exits_one() {
    // treated rows all sit above every control on x, so no reweighting of
    // the controls can reach the pooled mean
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("t,y,x,z\n");
    for i in 0..40 {
        let treated = i >= 20;
        let x = if treated { 10.0 + i as f64 } else { i as f64 };
        csv.push_str(&format!("{},{},{x},{}\n", u8::from(treated), i % 7, (i * 37) % 11));
    }
    let data = write(&dir, "sep.csv", &csv);
    let config = write(
        &dir,
        "sep.toml",
        r#"
[roles]
treatment = "t"
treated_level = "1"
outcome = "y"
continuous = ["x", "z"]

[analysis]
method = "EB#1"

[estimators]
methods = ["LR", "EB#1"]

[sensitivity]
enabled = false
"#,
    );
    let o = covbal(&config, &data, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("method") && err.contains("EB#1"), "{err}");
}

#[test]
fn null_data_gives_effect_near_zero() {
    let dir = TempDir::new().unwrap();
    let d = synth::generate(&Design::null(2000, 31)).unwrap();
    let data = write(&dir, "null.csv", &synth::to_csv(&d).unwrap());
    let config = write(
        &dir,
        "null.toml",
        &format!("{ROLES}\n[estimators]\nmethods = [\"LR\", \"CBPS#1\", \"EB#1\"]\n\n[sensitivity]\nenabled = false\n"),
    );
    let out = dir.path().join("out");
    let o = covbal(&config, &data, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let e = report(&out).effect.estimate;
    assert!(e.estimate.abs() < 3.0 * e.se, "{e:?}");
    assert!(e.ci_low < 0.0 && 0.0 < e.ci_high);
    let marker: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("sensitivity.json")).unwrap()).unwrap();
    assert_eq!(marker["skipped"], true);
}

#[test]
fn unbalanced_weights_exit_two_with_stamp() {
    // a boosting run too short to move the weights leaves the imbalance in place
    let dir = TempDir::new().unwrap();
    let d = synth::generate(&Design::confounded(600, 2.0, 5)).unwrap();
    let data = write(&dir, "d.csv", &synth::to_csv(&d).unwrap());
    let config = write(
        &dir,
        "d.toml",
        &format!(
            "{ROLES}\n[estimators]\nmethods = [\"GBM_ES\"]\n\n[estimators.gbm]\nmax_trees = 10\nshrinkage = 0.0001\n\n[sensitivity]\nenabled = false\n"
        ),
    );
    let out = dir.path().join("out");
    let o = covbal(&config, &data, &out);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert!(r.effect.stamp.as_deref().unwrap().contains("associational"));
    assert!(std::fs::read_to_string(out.join("report.md")).unwrap().contains("associational"));
}

#[test]
fn bad_config_is_an_error() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "bad.toml", &format!("{ROLES}\n[analysis]\nestimand = \"ATX\"\n"));
    let o = covbal(&config, &bundled("synthetic.csv"), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config"));
}

#[test]
fn simulate_round_trips_through_run() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("sim.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_covbal"))
        .args(["simulate", "--n", "300", "--seed", "4", "--out"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 301);
    assert!(text.starts_with("treatment,outcome,age,score,dose,female,region"));
}
