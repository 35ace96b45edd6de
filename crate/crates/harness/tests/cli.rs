use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn padsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_padsim")).args(args).output().expect("padsim runs")
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name).to_string_lossy().into_owned()
}

fn run(name: &str, out: &Path, sets: &[&str]) -> Output {
    let s = scenario(name);
    let mut args = vec!["run", s.as_str(), "--out", out.to_str().unwrap()];
    for k in sets {
        args.push("--set");
        args.push(k);
    }
    padsim(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_every_artifact_and_repeats_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let sets = ["horizon=30", "snapshot_steps=[0,10,20]", "gaia.enabled=true", "gaia.eval_every=8"];
    assert!(run("reduced.toml", &a, &sets).status.success());
    assert!(run("reduced.toml", &b, &sets).status.success());
    for f in
        ["metrics.csv", "timing.csv", "migrations.csv", "cost.json", "run-manifest.json", "digest.bin", "scenario.toml"]
    {
        assert!(a.join(f).exists(), "{f}");
    }
    for t in [0, 10, 20] {
        assert!(a.join("snapshots").join(format!("step_{t}.csv")).exists());
    }
    let metrics = std::fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics, std::fs::read(b.join("metrics.csv")).unwrap());
    let text = String::from_utf8(metrics).unwrap();
    assert!(text.starts_with(
        "step,lcr_percent,messages_local,messages_remote,nulls,rollbacks,antimessages,migrations,roster_lp0,roster_lp1,roster_lp2\n"
    ));
    assert_eq!(text.lines().count(), 31);
    let snap = std::fs::read_to_string(a.join("snapshots/step_10.csv")).unwrap();
    assert_eq!(snap.lines().next(), Some("entity,x,y,lp"));
    assert_eq!(snap.lines().count(), 1000);
}

#[test]
fn a_manifest_reproduces_its_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run("reduced.toml", &a, &["horizon=20", "sync.protocol=cmb"]).status.success());
    let manifest = a.join("run-manifest.json");
    let o = padsim(&["run", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(a.join("metrics.csv")).unwrap(), std::fs::read(b.join("metrics.csv")).unwrap());
    let c = padsim(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(c.status.success());
    assert_eq!(stdout(&c).trim(), "equal");
}

#[test]
fn compare_reports_equality_and_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<PathBuf> = ["seq", "ts", "other"].iter().map(|d| tmp.path().join(d)).collect();
    assert!(run("reduced.toml", &dirs[0], &["horizon=15", "sync.protocol=sequential"]).status.success());
    assert!(run("reduced.toml", &dirs[1], &["horizon=15"]).status.success());
    assert!(run("reduced.toml", &dirs[2], &["horizon=15", "seed=7"]).status.success());
    // Static placement: the oracle classifies traffic exactly as the LPs do.
    let metrics = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(metrics(&dirs[0]), metrics(&dirs[1]));
    let eq = padsim(&["compare", dirs[0].to_str().unwrap(), dirs[1].to_str().unwrap()]);
    assert!(eq.status.success());
    assert_eq!(stdout(&eq).trim(), "equal");
    let ne = padsim(&["compare", dirs[0].to_str().unwrap(), dirs[2].to_str().unwrap()]);
    assert_eq!(ne.status.code(), Some(1));
    assert!(stdout(&ne).starts_with("diverged at step 0"), "{}", stdout(&ne));
    let missing = padsim(&["compare", dirs[0].to_str().unwrap(), tmp.path().to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("digest.bin"));
}

#[test]
fn invalid_scenarios_fail_with_key_level_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run("reduced.toml", &tmp.path().join("x"), &["sync.protocl=cmb", "model.radius=-1", "lps=0"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("sync.protocl: unknown key"), "{err}");
    assert!(err.contains("model:"), "{err}");
    assert!(err.contains("lps:"), "{err}");
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn a_crash_without_replication_fails_and_flushes_partial_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("crash");
    let o = run("ft-crash.toml", &dir, &["ft.enabled=false", "ft.barrier_timeout_s=2.0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("partial artifacts"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
    assert!(manifest["error"].is_string());
    let rows = std::fs::read_to_string(dir.join("metrics.csv")).unwrap().lines().count();
    assert!(rows > 1);
}

#[test]
fn cost_prices_a_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("r");
    assert!(run("groups.toml", &dir, &["horizon=5"]).status.success());
    std::fs::write(dir.join("cost.json"), r#"{"wct_s": 1800.0, "nodes": ["0", "1", "2"], "steps": 1000}"#).unwrap();
    let d = dir.to_str().unwrap();
    let total = |o: &Output| -> f64 {
        let v: serde_json::Value = serde_json::from_str(&stdout(o)).unwrap();
        v["total_cost"].as_f64().unwrap()
    };
    let up = padsim(&["cost", d, "--rate", "0=0.10", "--rate", "1=0.10", "--rate", "2=0.10"]);
    assert!(up.status.success(), "{}", stderr(&up));
    assert!((total(&up) - 0.30).abs() < 1e-9);
    let exact = padsim(&["cost", d, "--rate", "*=0.10", "--no-hour-rounding"]);
    assert!((total(&exact) - 0.15).abs() < 1e-9);
    let neg = padsim(&["cost", d, "--rate", "*=-1"]);
    assert_eq!(neg.status.code(), Some(2));
    assert!(stderr(&neg).contains("negative rate"));
    let missing = padsim(&["cost", d, "--rate", "0=0.10"]);
    assert!(stderr(&missing).contains("no rate given for node 1"));
    std::fs::write(dir.join("cost.json"), r#"{"wct_s": 1800.0, "nodes": [], "steps": 1000}"#).unwrap();
    let none = padsim(&["cost", d, "--rate", "*=0.10"]);
    assert!(stderr(&none).contains("at least one node"));
}
