use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gpta(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpta"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpta(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    for sub in ["train", "eval", "report", "gen-synth"] {
        assert!(text(&o).contains(sub), "{sub}");
    }

    let o = gpta(&["train"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("--config"));

    let o = gpta(&["train", "--config", "x.json", "--frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"data":{"path":"d.jsonl"},"k":50,"w":50}"#,
    )
    .unwrap();
    let o = gpta(&["train", "--config", "run.json"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("w < k"));

    fs::write(
        dir.path().join("typo.json"),
        r#"{"data":{"path":"d.jsonl"},"epohcs":2}"#,
    )
    .unwrap();
    let o = gpta(&["train", "--config", "typo.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("epohcs"));
}

#[test]
fn missing_data_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"data":{"path":"nope.jsonl"}}"#,
    )
    .unwrap();
    let o = gpta(&["train", "--config", "run.json"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
}

#[test]
fn gen_synth_train_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = gpta(
        &[
            "gen-synth",
            "--classes",
            "2",
            "--per-class",
            "60",
            "--noise",
            "0.1",
            "--seed",
            "3",
            "--out",
            "data.jsonl",
        ],
        p,
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert_eq!(
        fs::read_to_string(p.join("data.jsonl"))
            .unwrap()
            .lines()
            .count(),
        120
    );

    fs::write(
        p.join("run.json"),
        r#"{"data":{"path":"data.jsonl"},"epochs":2,"k":8,"w":3,"l":4,"dims":4096,"seed":1}"#,
    )
    .unwrap();
    let o = gpta(&["train", "--config", "run.json", "--out", "run"], p);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(p.join("run/state_epoch1.json").exists());

    let o = gpta(
        &[
            "eval",
            "--checkpoint",
            "run/best_student.json",
            "--data",
            "data.jsonl",
            "--metric",
            "accuracy",
        ],
        p,
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let line = String::from_utf8_lossy(&o.stdout);
    let score: f64 = line
        .trim()
        .strip_prefix("accuracy ")
        .unwrap()
        .parse()
        .unwrap();
    assert!(score > 0.8, "{score}");

    // A state checkpoint works too.
    let o = gpta(
        &[
            "eval",
            "--checkpoint",
            "run/state_epoch0.json",
            "--data",
            "data.jsonl",
            "--metric",
            "neg_loss",
            "--prefix",
            "Read carefully",
        ],
        p,
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));

    let o = gpta(&["report", "--run", "run", "--out", "charts"], p);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert_eq!(
        fs::read_to_string(p.join("charts/metrics.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    let svg = fs::read(p.join("charts/curves.svg")).unwrap();
    let o = gpta(&["report", "--run", "run", "--out", "charts2"], p);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(p.join("charts2/curves.svg")).unwrap(), svg);

    let o = gpta(
        &[
            "train",
            "--config",
            "run.json",
            "--out",
            "run",
            "--resume",
            "run/state_epoch0.json",
        ],
        p,
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
}

#[test]
fn report_without_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpta(&["report", "--run", "missing", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}
