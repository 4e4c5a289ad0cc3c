use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scatwave"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("scatwave-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    fs::write(&p, body).unwrap();
    p
}

const MINK3: &str = r#""metric": {"n": 3, "class": "exact_minkowski", "profile": {"family": "minkowski"}}"#;

#[test]
fn invalid_dimension_is_a_config_error() {
    let d = scratch("n1");
    let cfg = write_config(
        &d,
        r#"{"task": "resonances", "metric": {"n": 1, "class": "exact_minkowski", "profile": {"family": "minkowski"}}}"#,
    );
    let out = bin()
        .args(["resonances", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(d.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid dimension"));
    assert!(!d.join("out").exists(), "no compute or output before validation");
}

#[test]
fn usage_errors_exit_two() {
    let out = bin().args(["resonances"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let d = scratch("task");
    let cfg = write_config(&d, &format!(r#"{{"task": "flow", {MINK3}}}"#));
    let out = bin().args(["resonances", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let cfg = write_config(&d, &format!(r#"{{"task": "resonances", "bogus": 1, {MINK3}}}"#));
    let out = bin().args(["resonances", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_metric_file_is_a_config_error() {
    let d = scratch("mf");
    let cfg = write_config(&d, r#"{"task": "resonances", "metric_file": "nope.json"}"#);
    let out = bin().args(["resonances", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn metric_file_relative_to_config() {
    let d = scratch("mfr");
    fs::write(
        d.join("metric.json"),
        r#"{"n": 5, "class": "exact_minkowski", "profile": {"family": "minkowski"}}"#,
    )
    .unwrap();
    let cfg = write_config(&d, r#"{"task": "resonances", "metric_file": "metric.json", "size": 32}"#);
    let out = bin()
        .args(["resonances", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(d.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn identical_runs_give_identical_outputs() {
    let d = scratch("det");
    let cfg = write_config(&d, &format!(r#"{{"task": "resonances", "size": 32, {MINK3}}}"#));
    for k in ["a", "b"] {
        let st = bin()
            .args(["resonances", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(d.join(k))
            .arg("--seed")
            .arg("11")
            .status()
            .unwrap();
        assert_eq!(st.code(), Some(0));
    }
    let ma: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("a/manifest.json")).unwrap()).unwrap();
    let mb: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("b/manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(ma["seed"], 11);
    let outputs = ma["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for f in outputs {
        let f = f.as_str().unwrap();
        assert!(d.join("a").join(f).exists(), "{f} listed but missing");
        assert_eq!(
            fs::read_to_string(d.join("a").join(f)).unwrap(),
            fs::read_to_string(d.join("b").join(f)).unwrap(),
            "{f} differs"
        );
    }
    assert!(!d.join("a/manifest.json.tmp").exists());
}

#[test]
fn flow_task_passes_on_minkowski() {
    let d = scratch("flow");
    let cfg = write_config(
        &d,
        &format!(r#"{{"task": "flow", "flow": {{"samples": 10, "trajectories": 2}}, {MINK3}}}"#),
    );
    let out = bin()
        .args(["flow", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(d.join("out"))
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("PASS nontrapping"));
    assert!(d.join("out/trajectories.gp").exists());
    assert!(d.join("out/trajectory_1.csv").exists());
}

#[test]
fn verify_n3_matches_lattice() {
    let d = scratch("verify");
    let cfg = write_config(
        &d,
        &format!(r#"{{"task": "verify", "size": 48, "expect_exponent": [1.5, 0.05], {MINK3}}}"#),
    );
    let out = bin()
        .args(["verify", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(d.join("out"))
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["pass"], true);
    let p = m["summary"]["exponent"].as_f64().unwrap();
    assert!((p - 1.5).abs() < 0.05, "{p}");
    for f in ["tail.gp", "resonances.gp", "radiation.csv", "match.json"] {
        assert!(d.join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn failed_check_exits_one() {
    let d = scratch("fail");
    let cfg = write_config(
        &d,
        &format!(r#"{{"task": "tails", "expect_exponent": [3.0, 0.01], {MINK3}}}"#),
    );
    let out = bin()
        .args(["tails", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(d.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["pass"], false);
}

#[test]
fn numeric_failure_keeps_partial_outputs() {
    let d = scratch("numeric");
    // the window ends past the solver grid
    let cfg = write_config(&d, &format!(r#"{{"task": "tails", "window": [1e2, 1e9], {MINK3}}}"#));
    let out = bin()
        .args(["tails", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(d.join("out"))
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(0));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["pass"], false);
    assert_eq!(m["failed_stage"], "fit");
    assert!(d.join("out/radiation.csv").exists());
}

#[test]
fn report_sorts_by_eps() {
    let d = scratch("report");
    let mut paths = Vec::new();
    for (i, eps) in [0.02, 0.0, 0.01].iter().enumerate() {
        let m = serde_json::json!({
            "artifact_version": "0.1.0",
            "config_hash": "x",
            "task": "verify",
            "seed": 0,
            "timings": [],
            "outputs": [],
            "checks": [],
            "pass": true,
            "failed_stage": null,
            "error": null,
            "summary": {"n": 4, "eps": eps, "exponent": 2.0 + eps / 2.0, "leading_resonance": [0.0, -1.0 - eps / 2.0]}
        });
        let p = d.join(format!("m{i}.json"));
        fs::write(&p, m.to_string()).unwrap();
        paths.push(p);
    }
    let out = bin().arg("report").args(&paths).arg("--out").arg(d.join("rep")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(d.join("rep/report.csv")).unwrap();
    let eps: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(eps, vec![0.0, 0.01, 0.02]);
    assert!(d.join("rep/report.gp").exists());
}
