//! End-to-end runs of the `feudal` binary on tiny configurations.

use std::path::Path;
use std::process::Command;

fn feudal(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_feudal"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "feudal {args:?} failed:\n{stdout}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    std::fs::write(
        &path,
        r#"{ "env": { "max_steps": 20 }, "generations": 3, "popsize": 4, "checkpoint_every": 1 }"#,
    )
    .unwrap();
    path.display().to_string()
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap_or_default()
        .to_owned()
}

#[test]
fn train_evaluate_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let run_s = run.display().to_string();
    let out = feudal(&[
        "train", "--config", &cfg, "--limbs", "4", "--seed", "3", "--out", &run_s,
    ]);
    assert!(out.contains("generation 2"), "{out}");
    for f in [
        "records.csv",
        "timing.csv",
        "checkpoint.json",
        "config.json",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    assert!(first_line(&run.join("records.csv")).starts_with("# feudal "));
    assert_eq!(
        std::fs::read_to_string(run.join("records.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );

    let traj = dir.path().join("traj.csv");
    let out = feudal(&[
        "evaluate",
        "--checkpoint",
        &run_s,
        "--episodes",
        "3",
        "--random-baseline",
        "--trajectory",
        &traj.display().to_string(),
    ]);
    assert!(out.contains("random baseline"), "{out}");
    assert_eq!(
        std::fs::read_to_string(run.join("eval.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );
    let traj_text = std::fs::read_to_string(&traj).unwrap();
    assert_eq!(traj_text.lines().nth(1), Some("step,com_x,com_y,env_reward,theta_0,theta_1,theta_2,theta_3,omega_0,omega_1,omega_2,omega_3"));
    assert_eq!(traj_text.lines().count(), 2 + 21);

    feudal(&[
        "evaluate",
        "--checkpoint",
        &run_s,
        "--episodes",
        "2",
        "--limbs",
        "6",
    ]);
    assert!(run.join("eval_n6.csv").exists());

    feudal(&["plot", "--run", &run_s]);
    assert!(run.join("curve.csv").exists() && run.join("curve.svg").exists());
}

#[test]
fn resume_continues_a_stopped_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    feudal(&["train", "--config", &cfg, "--out", &a.display().to_string()]);
    feudal(&[
        "train",
        "--config",
        &cfg,
        "--out",
        &b.display().to_string(),
        "--stop-after",
        "1",
    ]);
    feudal(&[
        "train",
        "--config",
        &cfg,
        "--out",
        &b.display().to_string(),
        "--resume",
    ]);
    assert_eq!(
        std::fs::read(a.join("records.csv")).unwrap(),
        std::fs::read(b.join("records.csv")).unwrap()
    );
}

#[test]
fn transfer_and_search() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let runs = dir.path().join("runs").display().to_string();
    let out = feudal(&[
        "transfer",
        "--runs",
        &runs,
        "--train-limbs",
        "3..4",
        "--test-limbs",
        "3,5",
        "--episodes",
        "2",
        "--train-missing",
        "--config",
        &cfg,
    ]);
    assert!(out.contains("rows"), "{out}");
    let csv = std::fs::read_to_string(dir.path().join("runs/transfer.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("train_limbs,test_3,test_5"));
    assert!(dir.path().join("runs/transfer.html").exists());

    let search = dir.path().join("search").display().to_string();
    let out = feudal(&[
        "search", "--config", &cfg, "--out", &search, "--budget", "2", "--widths", "4,8",
    ]);
    assert!(out.contains("final best"), "{out}");
    assert_eq!(
        std::fs::read_to_string(dir.path().join("search/search.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
}

#[test]
fn bad_input_fails_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_feudal"))
        .args(["train", "--variant", "nope"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_feudal"))
        .args(["evaluate", "--checkpoint", "/nonexistent/checkpoint.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent"));
}
