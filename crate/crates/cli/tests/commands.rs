use std::path::Path;
use std::process::{Command, Output};

fn pgpfr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgpfr"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PGPFR_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const CONFIG: &str = r#"{
    "synth": {"classes": 5, "dim": 4, "per_class_train": 30, "per_class_test": 10, "separation": 6.0, "seed": 2},
    "schedule": {"k": 3, "d": 1, "n_tasks": 3},
    "train": {"epochs_task0": 5, "epochs_incremental": 3, "seed": 1},
    "output_dir": "out"
}"#;

#[test]
fn run_writes_reports_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    let first = pgpfr(&["run", "cfg.json"], dir.path());
    assert_eq!(
        code(&first),
        0,
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let jsonl = std::fs::read_to_string(dir.path().join("out/metrics.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 3);
    let summary = std::fs::read(dir.path().join("out/summary.csv")).unwrap();
    assert!(summary.starts_with(b"task,G,L,IFM,old,new\n"));

    let second = pgpfr(
        &["run", "cfg.json", "--set", "output_dir=again"],
        dir.path(),
    );
    assert_eq!(code(&second), 0);
    assert_eq!(
        std::fs::read(dir.path().join("again/summary.csv")).unwrap(),
        summary
    );
}

#[test]
fn run_honours_env_output_dir_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pgpfr"))
        .args(["run", "cfg.json", "--set", "checkpoints=true"])
        .current_dir(dir.path())
        .env("PGPFR_OUTPUT_DIR", "elsewhere")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("elsewhere/summary.csv").exists());
    assert!(!dir.path().join("out").exists());
    let ckpt = dir.path().join("elsewhere/checkpoint_task2.json");
    let shown = pgpfr(&["inspect", ckpt.to_str().unwrap()], dir.path());
    assert_eq!(code(&shown), 0);
    assert!(String::from_utf8_lossy(&shown.stdout).contains("checkpoint task 2"));
}

#[test]
fn run_config_errors_exit_2_and_runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    assert_eq!(
        code(&pgpfr(
            &["run", "cfg.json", "--set", "train.bogus=1"],
            dir.path()
        )),
        2
    );
    assert_eq!(
        code(&pgpfr(
            &["run", "cfg.json", "--set", "losses.R=0"],
            dir.path()
        )),
        2
    );
    assert_eq!(code(&pgpfr(&["run", "missing.json"], dir.path())), 2);
    std::fs::write(dir.path().join("broken.json"), "{").unwrap();
    assert_eq!(code(&pgpfr(&["run", "broken.json"], dir.path())), 2);
    // 3 + 1 * 3 classes needed, 5 available; n_tasks 4 would need 6
    assert_eq!(
        code(&pgpfr(
            &["run", "cfg.json", "--set", "schedule.n_tasks=4"],
            dir.path()
        )),
        1
    );
}

#[test]
fn synth_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let made = pgpfr(
        &[
            "synth",
            "--classes",
            "4",
            "--dim",
            "3",
            "--seed",
            "5",
            "--out",
            "a.pgfr",
        ],
        dir.path(),
    );
    assert_eq!(code(&made), 0);
    pgpfr(
        &[
            "synth",
            "--classes",
            "4",
            "--dim",
            "3",
            "--seed",
            "5",
            "--out",
            "b.pgfr",
        ],
        dir.path(),
    );
    let a = std::fs::read(dir.path().join("a.pgfr")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.pgfr")).unwrap());

    let shown = pgpfr(&["inspect", "a.pgfr"], dir.path());
    assert_eq!(code(&shown), 0);
    let text = String::from_utf8(shown.stdout).unwrap();
    let rows: Vec<&str> = text
        .lines()
        .skip_while(|l| *l != "class,train,test")
        .skip(1)
        .take_while(|l| !l.starts_with("split"))
        .collect();
    assert_eq!(rows, ["0,200,50", "1,200,50", "2,200,50", "3,200,50"]);
    assert!(text.contains("split train 800"));
    // inspection never touches the file
    assert_eq!(std::fs::read(dir.path().join("a.pgfr")).unwrap(), a);
}

#[test]
fn synth_defaults_and_bad_flags() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&pgpfr(&["synth"], dir.path())), 0);
    assert!(dir.path().join("synth.pgfr").exists());
    assert_eq!(code(&pgpfr(&["synth", "--dim", "0"], dir.path())), 2);
    assert_eq!(
        code(&pgpfr(&["synth", "--separation", "-1"], dir.path())),
        2
    );
    assert_eq!(code(&pgpfr(&["synth", "--classes", "x"], dir.path())), 2);
}

#[test]
fn inspect_rejects_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    pgpfr(
        &["synth", "--classes", "2", "--dim", "2", "--out", "ok.pgfr"],
        dir.path(),
    );
    let mut bytes = std::fs::read(dir.path().join("ok.pgfr")).unwrap();

    std::fs::write(dir.path().join("empty.pgfr"), b"").unwrap();
    let out = pgpfr(&["inspect", "empty.pgfr"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte 0"));

    std::fs::write(dir.path().join("short.pgfr"), &bytes[..bytes.len() - 2]).unwrap();
    let out = pgpfr(&["inspect", "short.pgfr"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("format error at byte"));

    bytes[0] = b'X';
    std::fs::write(dir.path().join("magic.pgfr"), &bytes).unwrap();
    assert_eq!(code(&pgpfr(&["inspect", "magic.pgfr"], dir.path())), 1);

    std::fs::write(dir.path().join("bad.json"), "{\"task_index\": 1").unwrap();
    assert_eq!(code(&pgpfr(&["inspect", "bad.json"], dir.path())), 1);
}
