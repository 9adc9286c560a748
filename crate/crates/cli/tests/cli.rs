use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"preset = "desk"

[training]
epochs = 2
horizon = 100
runs = 2

[dqn]
warmup = 50

[control]
refresh_interval = 50

[evaluation]
episodes = 2
horizon = 100
calibration_steps = 100
"#;

fn dira(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_dira"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "dira {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn train_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = dira(&["train", "--config", &cfg, "--out", dir.to_str().unwrap(), "--evaluate"]);
        assert!(stdout(&out).contains("run 1: final epoch mean cost"));
    }
    let (fa, fb) = (csvs(&a), csvs(&b));
    assert_eq!(fa.len(), 3);
    assert_eq!(fa, fb);
    for f in ["config.toml", "plant.txt", "checkpoint_run0.txt", "checkpoint_run1.txt", "summary.txt"] {
        assert!(a.join(f).exists(), "{f}");
    }

    let ev = dira(&[
        "evaluate",
        "--config",
        &cfg,
        "--checkpoint",
        a.join("checkpoint_run0.txt").to_str().unwrap(),
        "--episodes",
        "2",
    ]);
    assert!(stdout(&ev).starts_with("dira: mean per-stage cost"));
}

#[test]
fn seed_changes_training() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    dira(&["train", "--config", &cfg, "--out", a.to_str().unwrap()]);
    dira(&["train", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "9"]);
    assert_ne!(csvs(&a), csvs(&b));
}

#[test]
fn generate_system_then_riccati_check() {
    let tmp = tempfile::tempdir().unwrap();
    let plant = tmp.path().join("plant.txt");
    let out = dira(&["generate-system", "--preset", "desk", "--out", plant.to_str().unwrap()]);
    assert!(stdout(&out).contains("4 subsystems"));

    let perfect = stdout(&dira(&["riccati-check", "--plant", plant.to_str().unwrap(), "--q", "1"]));
    assert!(perfect.contains("rho(Gamma A): 0.000000"), "{perfect}");
    assert!(perfect.contains("converged in"), "{perfect}");

    let lossy = stdout(&dira(&["riccati-check", "--plant", plant.to_str().unwrap(), "--q", "0.9,0.9,0.9,0.9", "--show-k"]));
    assert!(lossy.contains("converged in"), "{lossy}");

    let starved = stdout(&dira(&["riccati-check", "--plant", plant.to_str().unwrap(), "--q", "0"]));
    assert!(starved.contains("no steady state"), "{starved}");
}

#[test]
fn riccati_check_rejects_wrong_length() {
    let tmp = tempfile::tempdir().unwrap();
    let plant = tmp.path().join("plant.txt");
    dira(&["generate-system", "--out", plant.to_str().unwrap()]);
    let out = Command::new(env!("CARGO_BIN_EXE_dira"))
        .args(["riccati-check", "--plant", plant.to_str().unwrap(), "--q", "0.5,0.5"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("2 closure probabilities given for 4 subsystems"));
}

#[test]
fn evaluate_baseline() {
    let out = stdout(&dira(&["evaluate", "--preset", "desk", "--baseline", "perfect-comm-lqr", "--episodes", "3"]));
    assert!(out.starts_with("perfect-comm-lqr: mean per-stage cost"), "{out}");
    assert!(out.contains("(0 diverged)"));
}

#[test]
fn enumerate_oracle_agrees_with_brute_force() {
    let out = stdout(&dira(&["enumerate-oracle", "--preset", "desk", "--state-seed", "3"]));
    assert!(out.starts_with("64 joint actions"), "{out}");
    let gap: f64 = out
        .split("enumeration: ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(gap < 1e-10, "{out}");
}

#[test]
fn channel_trace_writes_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("trace.csv");
    dira(&["channel-trace", "--preset", "desk", "--steps", "25", "--out", path.to_str().unwrap()]);
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.lines().count() > 25);
}

#[test]
fn unknown_config_key_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "preset = \"desk\"\n[training]\nepoch = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dira"))
        .args(["generate-system", "--config", path.to_str().unwrap(), "--out", "/dev/null"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}
