use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rspo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rspo")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn instance(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("instances").join(name).to_string_lossy().into_owned()
}

fn bandit_config(dir: &Path, iterations: usize) -> PathBuf {
    let path = dir.join("bandit.json");
    let cfg = serde_json::json!({
        "schema_version": 1,
        "env": {"name": "bandit", "arm_rewards": [1.0, 0.9, 0.0]},
        "ppo": {"batch_size": 64, "minibatch_size": 64, "initial_learning_rate": 0.001},
        "rspo": {"iterations": iterations, "intrinsic": "behavior", "lambda_b": 0.2, "threshold_episodes": 32},
        "schedule": {"env_steps": 3200},
        "seeds": [1],
        "eval": {"n_eval": 32, "ce_episodes": 16, "pd_states": 8},
        "out_dir": dir.join("unused").to_string_lossy()
    });
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn status_of(out: &Output) -> Vec<String> {
    let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    reports.as_array().unwrap().iter().map(|r| r["status"].as_str().unwrap().to_string()).collect()
}

#[test]
fn oracle_bundled_instances() {
    let ok = rspo(&["oracle", &instance("two_optima_h1.json")]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(status_of(&ok), ["PASS", "PASS"]);

    let flagged = rspo(&["oracle", &instance("lambda_violation.json")]);
    assert_eq!(flagged.status.code(), Some(0));
    assert_eq!(status_of(&flagged), ["PASS", "FLAGGED"]);
    let reports: serde_json::Value = serde_json::from_slice(&flagged.stdout).unwrap();
    assert!(reports[1]["lambda_bound"].as_f64().unwrap() > 0.0);
}

#[test]
fn malformed_oracle_spec_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"name": "x", "mdp": 3}"#).unwrap();
    assert_eq!(rspo(&["oracle", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn missing_env_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"schema_version": 1, "seeds": [0]}"#).unwrap();
    let out = dir.path().join("run");
    let res = rspo(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("env"));
    assert!(!out.exists());
}

#[test]
fn run_is_reproducible_and_eval_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bandit_config(dir.path(), 2);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let res = rspo(&["--workers", "1", "run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    }
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    assert_eq!(fs::read(a.join("seed_1/iter_1/policy.bin")).unwrap(), fs::read(b.join("seed_1/iter_1/policy.bin")).unwrap());

    let resolved = fs::read_to_string(a.join("config.resolved.json")).unwrap();
    assert!(resolved.contains("\"entropy_coeff\""));

    let modes = fs::read(a.join("seed_1/modes.csv")).unwrap();
    let div = fs::read(a.join("seed_1/diversity.csv")).unwrap();
    for _ in 0..2 {
        assert_eq!(rspo(&["eval", a.to_str().unwrap()]).status.code(), Some(0));
        assert_eq!(fs::read(a.join("seed_1/modes.csv")).unwrap(), modes);
        assert_eq!(fs::read(a.join("seed_1/diversity.csv")).unwrap(), div);
    }
    let metrics = rspo(&["metrics", a.to_str().unwrap()]);
    assert_eq!(metrics.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&metrics.stdout).lines().count(), 3);
}

#[test]
fn single_iteration_eval_has_no_pairwise_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bandit_config(dir.path(), 1);
    let out = dir.path().join("run");
    assert_eq!(rspo(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(rspo(&["eval", out.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(fs::read_to_string(out.join("seed_1/modes.csv")).unwrap().lines().count(), 2);
    assert_eq!(fs::read_to_string(out.join("seed_1/diversity.csv")).unwrap().lines().count(), 1);
}

#[test]
fn corrupt_checkpoint_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bandit_config(dir.path(), 1);
    let out = dir.path().join("run");
    assert_eq!(rspo(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(0));
    fs::write(out.join("seed_1/iter_0/policy.bin"), [1u8, 2, 3]).unwrap();
    let res = rspo(&["eval", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("iter_0/policy.bin"));
}
