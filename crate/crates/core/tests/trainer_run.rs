mod support;

use std::fs;

use gpta::dialogue_gradient::parse_jsonl;
use gpta::history::Origin;
use gpta::trainer::{load_config, run, RunState, TaLineage, Trainer};
use gpta::Error;

use support::small_config;

#[test]
fn run_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(2);
    let out = run(&cfg, Some(dir.path()), None).unwrap();

    for f in [
        "config.json",
        "state_epoch0.json",
        "state_epoch1.json",
        "gradients_epoch0.jsonl",
        "gradients_epoch1.jsonl",
        "report.json",
        "metrics.csv",
        "best_student.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    assert!(!dir.path().join("state_epoch2.json").exists());

    // The echoed config loads back to the same configuration.
    assert_eq!(load_config(dir.path().join("config.json")).unwrap(), cfg);

    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("epoch,train_loss,val_best,val_empty,improvement_rate\n"));

    let last = RunState::load(dir.path().join("state_epoch1.json")).unwrap();
    assert_eq!(last, out.final_state);
    assert_eq!(out.report.epochs, last.records);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let full_dir = tempfile::tempdir().unwrap();
    let full = run(&small_config(3), Some(full_dir.path()), None).unwrap();

    for done in [1u32, 2] {
        let part_dir = tempfile::tempdir().unwrap();
        run(&small_config(done), Some(part_dir.path()), None).unwrap();
        let checkpoint =
            RunState::load(part_dir.path().join(format!("state_epoch{}.json", done - 1))).unwrap();
        let resumed = run(&small_config(3), Some(part_dir.path()), Some(checkpoint)).unwrap();

        assert_eq!(resumed.final_state.to_json(), full.final_state.to_json());
        for f in ["state_epoch2.json", "gradients_epoch2.jsonl", "metrics.csv", "report.json"] {
            assert_eq!(
                fs::read(part_dir.path().join(f)).unwrap(),
                fs::read(full_dir.path().join(f)).unwrap(),
                "{f} after resuming at {done}"
            );
        }
        assert_eq!(resumed.best_student, full.best_student);
    }
}

#[test]
fn state_round_trips_byte_for_byte() {
    let out = run(&small_config(2), None, None).unwrap();
    let bytes = out.final_state.to_json();
    let back = RunState::from_json(&bytes).unwrap();
    assert_eq!(back, out.final_state);
    assert_eq!(back.to_json(), bytes);
}

#[test]
fn single_epoch_run() {
    let out = run(&small_config(1), None, None).unwrap();
    assert_eq!(out.report.epochs.len(), 1);
    assert_eq!(out.final_state.ta.generation, 1);
    assert_eq!(out.report.best.epoch, 0);
}

#[test]
fn resume_past_the_end_is_rejected() {
    let out = run(&small_config(2), None, None).unwrap();
    let err = run(&small_config(1), None, Some(out.final_state)).unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");
}

#[test]
fn epoch_alternates_student_and_ta() {
    let cfg = small_config(2);
    let trainer = Trainer::new(cfg.clone()).unwrap();
    let s0 = trainer.initial_state().unwrap();
    assert!(s0.history.is_empty());

    let (s1, art) = trainer.run_epoch(s0.clone()).unwrap();
    assert_eq!(s1.epoch, 1);
    assert!(s1.student.is_frozen());
    assert_ne!(s1.student, s0.student);
    assert_eq!(s1.history.len(), cfg.k);
    assert!(s1.history.contains(""));
    assert_eq!(s1.ta.generation, s0.ta.generation + 1);

    // Every generated entry was scored against the frozen epoch-0 student
    // and the fine-tune file was cut from that history.
    assert!(s1
        .history
        .entries()
        .iter()
        .all(|e| matches!(e.origin, Origin::Seed | Origin::Generated { epoch: 0, .. })));
    let file = parse_jsonl(art.gradients.as_ref().unwrap()).unwrap();
    let tail: Vec<&str> = s1.history.entries()[cfg.w..]
        .iter()
        .map(|e| e.prefix.as_str())
        .filter(|p| !p.is_empty())
        .collect();
    let targets: Vec<&str> = file.iter().map(|e| e.assistant()).collect();
    assert_eq!(targets, tail);

    // Epoch 1 trains with the best prefix of the epoch-0 history.
    let (s2, _) = trainer.run_epoch(s1.clone()).unwrap();
    assert_eq!(
        s2.records[1].train_prefix,
        s1.history.best().unwrap().prefix
    );
    assert_eq!(s2.ta.generation, 2);
    for r in &s2.records {
        assert!(r.val_best >= r.val_empty);
        assert!(r.finetune.applied);
    }
}

#[test]
fn from_base_lineage_restarts_weights() {
    let mut cfg = small_config(2);
    cfg.ta_lineage = TaLineage::FromBase;
    let trainer = Trainer::new(cfg.clone()).unwrap();
    let base = trainer.initial_state().unwrap();
    let (s1, _) = trainer.run_epoch(base.clone()).unwrap();
    let (s2, art) = trainer.run_epoch(s1.clone()).unwrap();

    // Pool weights after epoch 1 reflect only epoch 1's targets.
    let file = parse_jsonl(art.gradients.as_ref().unwrap()).unwrap();
    let sim = s2.ta.sim_state().unwrap();
    let base_sim = base.ta.sim_state().unwrap();
    for e in &sim.pool {
        let hits = file.iter().filter(|x| x.assistant() == e.prefix).count() as f64;
        let start = base_sim.weight(&e.prefix).unwrap_or(0.0);
        assert_eq!(e.weight, start + hits, "{}", e.prefix);
    }
    // Sampling does not replay earlier draws.
    assert!(sim.calls > s1.ta.sim_state().unwrap().calls);
    assert_eq!(s2.ta.generation, 1);
}

#[test]
fn best_student_comes_from_best_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&small_config(3), Some(dir.path()), None).unwrap();
    let best = out.final_state.best.clone().unwrap();
    let at_best =
        RunState::load(dir.path().join(format!("state_epoch{}.json", best.epoch))).unwrap();
    assert_eq!(out.best_student, at_best.student);
    assert_eq!(
        gpta::student::StudentParams::load(dir.path().join("best_student.json"))
            .unwrap()
            .weights(),
        at_best.student.weights()
    );
    let max = out
        .report
        .epochs
        .iter()
        .map(|r| r.val_best)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best.score, max);
}

#[test]
fn config_file_with_relative_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = gpta::dataset::synth_generate(2, 40, 50, 0.0, 1).unwrap();
    data.write_jsonl(dir.path().join("data.jsonl")).unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"data":{"path":"data.jsonl"},"epochs":1,"k":8,"w":3,"l":4,"dims":1024}"#,
    )
    .unwrap();
    let cfg = load_config(dir.path().join("run.json")).unwrap();
    assert_eq!(
        cfg.data.path.as_deref(),
        Some(dir.path().join("data.jsonl").as_path())
    );
    let out = run(&cfg, None, None).unwrap();
    assert_eq!(out.report.epochs.len(), 1);
}
