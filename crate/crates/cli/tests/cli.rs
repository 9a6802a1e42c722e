use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mrrawnet"));
    c.env("MRRW_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn mrrawnet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"
model = "micro"
seed = 3
out = "run"

[corpus]
speakers = 3
utts_per_speaker = 2
seed = 7
max_dur = 3.0

[train]
batch_size = 3
epochs = 2
steps_per_epoch = 2

[eval]
heldout_per_speaker = 2
durations = "full,2,1"
"#;

/// Writes the tiny config into `dir` and trains into `dir/<out>`.
fn train_tiny(dir: &Path, out: &str) -> (Output, PathBuf) {
    let cfg = dir.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out_dir = dir.join(out);
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    (o, out_dir)
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = run(&["train", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/run.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, format!("{TINY}\n[extra]\nx = 1\n")).unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = train_tiny(dir.path(), "a");
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["model.mrrw", "epoch001.mrrw", "epoch002.mrrw", "metrics.jsonl", "run.toml", "report.txt", "report.jsonl"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(stdout(&o).contains("train accuracy"));
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 4);

    let (o2, out2) = train_tiny(dir.path(), "b");
    assert!(o2.status.success());
    for f in ["metrics.jsonl", "model.mrrw", "report.jsonl"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(out2.join(f)).unwrap(), "{f} differs");
    }

    let ckpt = out.join("model.mrrw");
    let trials = out.join("heldout/trials.txt");
    let eval = |dest: &str| {
        run(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--trials",
            trials.to_str().unwrap(),
            "--out",
            dir.path().join(dest).to_str().unwrap(),
        ])
    };
    let (e1, e2) = (eval("e1"), eval("e2"));
    assert!(e1.status.success(), "{}", stderr(&e1));
    let table = stdout(&e1);
    let rows: Vec<&str> = table.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(rows, ["full", "5s", "2s", "1s"]);
    assert_eq!(stdout(&e1), stdout(&e2));
    assert_eq!(
        std::fs::read(dir.path().join("e1/report.jsonl")).unwrap(),
        std::fs::read(dir.path().join("e2/report.jsonl")).unwrap()
    );

    // A trial naming a file that is not there.
    let broken = dir.path().join("broken.txt");
    let first = std::fs::read_to_string(&trials).unwrap().lines().next().unwrap().to_owned();
    std::fs::write(&broken, format!("{first}\n0 nowhere.wav nowhere.wav\n")).unwrap();
    std::fs::copy(out.join("heldout").join(first.split_whitespace().nth(1).unwrap()), dir.path().join(first.split_whitespace().nth(1).unwrap())).unwrap();
    std::fs::copy(out.join("heldout").join(first.split_whitespace().nth(2).unwrap()), dir.path().join(first.split_whitespace().nth(2).unwrap())).unwrap();
    let o = run(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--trials", broken.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nowhere.wav"), "{}", stderr(&o));

    let o = run(&["info", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in ["o1", "o2", "o3", "o4", "o5", "o6", "o7", "o8", "total"] {
        assert!(text.contains(name), "info lacks {name}:\n{text}");
    }

    // Same-length edit of the stored config so one tensor no longer fits.
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let pos = bytes.windows(14).position(|w| w == b"embed_dim = 32").expect("config holds embed_dim");
    bytes[pos + 13] = b'3';
    let bad = dir.path().join("bad.mrrw");
    std::fs::write(&bad, bytes).unwrap();
    let o = run(&["info", "--checkpoint", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("embed/"), "{}", stderr(&o));
}

#[test]
fn verify_fast_passes_and_catches_a_broken_gate() {
    let o = run(&["verify"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| !l.starts_with("FAIL")));

    let o = run(&["verify", "--inject-fault", "gate-softmax"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("FAIL gate-normalization"), "{text}");
    assert!(text.lines().last().unwrap().contains("gate-normalization"));
}

#[test]
fn info_on_presets() {
    let o = run(&["info", "--config", "micro"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("[1, 8, 300]"), "{}", stdout(&o));
    let o = run(&["info", "--config", "no-such-preset"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_duration_list_is_a_usage_error() {
    let o = run(&["eval", "--checkpoint", "x.mrrw", "--trials", "t.txt", "--durations", "full,abc"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
