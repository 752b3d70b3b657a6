//! The alternating epoch loop.
//!
//! One epoch runs four steps in order:
//!
//! 1. train the student for one pass on prefix-augmented inputs, then
//!    freeze it;
//! 2. grow the prefix history to `k` entries, scoring candidates on the
//!    validation split with the frozen student;
//! 3. cut the history into dialogue gradients (window, enrich, cap,
//!    serialize);
//! 4. fine-tune the TA on them.
//!
//! The student trains with the TA's first proposal in epoch 0 and with the
//! best prefix of the previous history afterwards. History carries over
//! between epochs, but is rescored against the new student and trimmed to
//! its best `history_carry` entries before collection resumes.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    load_jsonl, make_exemplars, split, synth_generate, Dataset, DatasetDescription,
};
use crate::dialogue_gradient::{build_windows, cap, enrich, serialize_jsonl};
use crate::error::{Error, Result};
use crate::history::{
    collect, seed_history, CollectParams, Origin, PrefixHistory, RoundStats, ScoredPrefix, Scorer,
};
use crate::report::RunReport;
use crate::student::{fnv1a64, StudentParams};
use crate::ta::{
    connect, render_generation_request, MetaPrompt, RemoteConfig, TaBackend, TaHandle,
};

pub use config::{
    load_config, DataConfig, PoolItem, RemoteOptions, RunConfig, SynthSpec, TaConfig, TaLineage,
    DEFAULT_EPOCHS, DEFAULT_SIM_POOL,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPrefix {
    pub prefix: String,
    pub score: f64,
    pub epoch: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub examples: usize,
    pub applied: bool,
    /// TA generation after this epoch's fine-tune step.
    pub generation: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    /// Prefix the student trained with this epoch.
    pub train_prefix: String,
    pub train_loss: f64,
    /// Validation score of the history's best prefix.
    pub val_best: f64,
    /// Validation score with no prefix.
    pub val_empty: f64,
    pub best_prefix: String,
    pub improvement_rate: f64,
    pub rounds: Vec<RoundStats>,
    pub finetune: FinetuneRecord,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    /// Completed epochs.
    pub epoch: u32,
    pub student: StudentParams,
    pub ta: TaHandle,
    pub history: PrefixHistory,
    pub best: Option<BestPrefix>,
    pub records: Vec<EpochRecord>,
}

impl RunState {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("run state serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        RunState::from_json(&bytes)
    }
}

/// Fraction of generated candidates that beat the history maximum at the
/// start of their round.
pub fn improvement_rate(rounds: &[RoundStats]) -> Result<f64> {
    let generated: usize = rounds.iter().map(|r| r.generated).sum();
    if rounds.is_empty() || generated == 0 {
        return Err(Error::validation(
            "improvement rate needs at least one generated candidate",
        ));
    }
    let exceeded: usize = rounds.iter().map(|r| r.exceeded).sum();
    Ok(exceeded as f64 / generated as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Option<Dataset>,
}

fn with_class_count(d: Dataset, class_count: usize) -> Result<Dataset> {
    let names = d.class_names().map(<[String]>::to_vec);
    Dataset::new(d.examples().to_vec(), class_count, names)
}

pub fn load_splits(data: &DataConfig, seed: u64) -> Result<Splits> {
    if let Some(path) = &data.path {
        let (train, validation, test) = split(&load_jsonl(path)?, data.split, seed)?;
        return Ok(Splits {
            train,
            validation,
            test: Some(test),
        });
    }
    if let Some(s) = &data.synthetic {
        let corpus = synth_generate(s.classes, s.per_class, s.vocab, s.noise, s.seed)?;
        let (train, validation, test) = split(&corpus, data.split, seed)?;
        return Ok(Splits {
            train,
            validation,
            test: Some(test),
        });
    }
    let (Some(train), Some(validation)) = (&data.train, &data.validation) else {
        return Err(Error::validation("data config names no source"));
    };
    let train = load_jsonl(train)?;
    let validation = load_jsonl(validation)?;
    let test = data.test.as_ref().map(load_jsonl).transpose()?;
    let classes = [Some(&train), Some(&validation), test.as_ref()]
        .into_iter()
        .flatten()
        .map(Dataset::class_count)
        .max()
        .unwrap_or(1);
    Ok(Splits {
        train: with_class_count(train, classes)?,
        validation: with_class_count(validation, classes)?,
        test: test.map(|t| with_class_count(t, classes)).transpose()?,
    })
}

fn default_description(cfg: &DataConfig, train: &Dataset) -> DatasetDescription {
    let name = match (&cfg.path, &cfg.train, &cfg.synthetic) {
        (Some(p), _, _) | (None, Some(p), _) => p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
        (None, None, Some(_)) => "synthetic keywords".into(),
        _ => "dataset".into(),
    };
    let classes = train.class_count();
    let label_semantics = match train.class_names() {
        Some(names) => names.to_vec(),
        None => (0..classes).map(|c| format!("class {c}")).collect(),
    };
    DatasetDescription {
        name,
        task_summary: format!("Assign each input text one of {classes} class labels."),
        label_semantics,
    }
}

/// Per-purpose seed derived from the run seed and epoch, so resumed runs
/// draw the same numbers as uninterrupted ones.
fn derive_seed(seed: u64, epoch: u32, purpose: &str) -> u64 {
    fnv1a64(format!("{purpose}/{seed}/{epoch}").as_bytes(), 0)
}

pub struct Trainer {
    cfg: RunConfig,
    splits: Splits,
    meta: MetaPrompt,
    base_ta: TaHandle,
    remote: Option<RemoteConfig>,
}

/// Output of one epoch besides the new state.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochArtifacts {
    /// Fine-tune file as sent to the TA, if one could be built.
    pub gradients: Option<Vec<u8>>,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let splits = load_splits(&cfg.data, cfg.seed)?;
        Trainer::with_splits(cfg, splits)
    }

    pub fn with_splits(cfg: RunConfig, splits: Splits) -> Result<Self> {
        cfg.validate()?;
        let description = cfg
            .description
            .clone()
            .unwrap_or_else(|| default_description(&cfg.data, &splits.train));
        let exemplars = make_exemplars(
            &splits.train,
            cfg.exemplars,
            derive_seed(cfg.seed, 0, "exemplars"),
        )?;
        let meta = MetaPrompt::new(cfg.instruction.clone(), description, exemplars)?;
        let base_ta = cfg.ta.base_handle()?;
        let remote = cfg.ta.remote_config();
        Ok(Trainer {
            cfg,
            splits,
            meta,
            base_ta,
            remote,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn meta_prompt(&self) -> &MetaPrompt {
        &self.meta
    }

    pub fn initial_state(&self) -> Result<RunState> {
        Ok(RunState {
            epoch: 0,
            student: StudentParams::zeros(self.splits.train.class_count(), self.cfg.dims)?,
            ta: self.base_ta.clone(),
            history: PrefixHistory::new(),
            best: None,
            records: Vec::new(),
        })
    }

    /// Base model handle for a from-base fine-tune. The simulated backend
    /// keeps its call counter so sampling does not replay old draws.
    fn lineage_start(&self, current: &TaHandle) -> TaHandle {
        match (&self.base_ta.backend, &current.backend) {
            (TaBackend::Simulated(base), TaBackend::Simulated(now)) => {
                let mut state = base.clone();
                state.calls = now.calls;
                TaHandle::simulated(state)
            }
            _ => self.base_ta.clone(),
        }
    }

    pub fn run_epoch(&self, mut state: RunState) -> Result<(RunState, EpochArtifacts)> {
        let cfg = &self.cfg;
        let epoch = state.epoch;
        let mut ta = connect(state.ta.clone(), self.remote.as_ref())?;

        // (1) Student step.
        let train_prefix = if epoch == 0 {
            let request = render_generation_request(&self.meta, &[], 1);
            ta.generate(&request, 1, cfg.temperature)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::Protocol("TA returned no initial prefix".into()))?
        } else {
            state
                .history
                .best()
                .map(|b| b.prefix.clone())
                .unwrap_or_default()
        };
        state.student.unfreeze();
        let train_loss = state.student.train_pass(
            &self.splits.train,
            &train_prefix,
            cfg.lr,
            cfg.hash_seed,
            derive_seed(cfg.seed, epoch, "shuffle"),
        )?;
        state.student.freeze();
        let student = &state.student;

        // (2) History collection against the frozen student.
        let scorer = Scorer {
            student,
            eval_set: &self.splits.validation,
            kind: cfg.metric,
            hash_seed: cfg.hash_seed,
        };
        let start = if epoch == 0 {
            seed_history(&scorer, std::slice::from_ref(&train_prefix))?
        } else {
            let mut h = std::mem::take(&mut state.history);
            h.rescore(|p| scorer.score(p))?;
            if !h.contains("") {
                h.insert_sorted(ScoredPrefix {
                    prefix: String::new(),
                    score: scorer.score("")?,
                    origin: Origin::Seed,
                });
            }
            h.retain_best(cfg.carry(), "");
            h
        };
        let (history, rounds) = collect(
            ta.as_mut(),
            &self.meta,
            &scorer,
            start,
            CollectParams {
                k: cfg.k,
                l: cfg.l,
                temperature: cfg.temperature,
                epoch,
            },
        )?;
        let rate = improvement_rate(&rounds)?;
        let best = history
            .best()
            .cloned()
            .expect("collected history is non-empty");
        let val_empty = history.get("").map(|e| e.score).expect("baseline is kept");

        // (3) Dialogue gradients.
        let examples = cap(
            enrich(&build_windows(&history, cfg.w)?, &self.meta),
            cfg.finetune_cap,
        );
        let gradients = serialize_jsonl(&examples).ok();

        // (4) TA fine-tune. Failure keeps the previous model.
        let before = ta.handle().clone();
        let mut warning = None;
        match &gradients {
            Some(file) => {
                if cfg.ta_lineage == TaLineage::FromBase {
                    ta.set_handle(self.lineage_start(&before));
                }
                if let Err(e) = ta.finetune(file) {
                    warn!("epoch {epoch}: TA fine-tune failed, keeping previous TA: {e}");
                    ta.set_handle(before.clone());
                    warning = Some(e.to_string());
                }
            }
            None => warning = Some("no usable dialogue gradients this epoch".into()),
        }
        let applied = warning.is_none();

        info!(
            "epoch {epoch}: loss {train_loss:.4}, best {:.4} ({:?}), empty {val_empty:.4}, rate {rate:.4}",
            best.score, best.prefix
        );

        if state.best.as_ref().is_none_or(|b| best.score > b.score) {
            state.best = Some(BestPrefix {
                prefix: best.prefix.clone(),
                score: best.score,
                epoch,
            });
        }
        state.records.push(EpochRecord {
            epoch,
            train_prefix,
            train_loss,
            val_best: best.score,
            val_empty,
            best_prefix: best.prefix,
            improvement_rate: rate,
            rounds,
            finetune: FinetuneRecord {
                examples: examples.len(),
                applied,
                generation: ta.handle().generation,
                warning,
            },
        });
        state.history = history;
        state.ta = ta.handle().clone();
        state.epoch = epoch + 1;
        Ok((state, EpochArtifacts { gradients }))
    }
}

/// Result of a full run. `best_student` is the checkpoint from the epoch
/// with the highest validation score.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub final_state: RunState,
    pub best_student: StudentParams,
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

/// Runs the remaining epochs of `cfg`, starting from `resume` if given.
///
/// With an output directory the layout is `config.json`,
/// `state_epoch{N}.json`, `gradients_epoch{N}.jsonl`, `report.json`,
/// `metrics.csv` and `best_student.json`. A failing epoch leaves the
/// previous checkpoint in place.
pub fn run(
    cfg: &RunConfig,
    out_dir: Option<&Path>,
    resume: Option<RunState>,
) -> Result<RunOutcome> {
    let trainer = Trainer::new(cfg.clone())?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(dir.join("config.json"), cfg.to_json().as_bytes())?;
    }

    let mut state = match resume {
        Some(s) => {
            if s.epoch > cfg.epochs {
                return Err(Error::validation(format!(
                    "checkpoint is at epoch {} but the run has only {}",
                    s.epoch, cfg.epochs
                )));
            }
            s
        }
        None => trainer.initial_state()?,
    };
    let mut best_student = best_checkpoint(&state, out_dir)?;

    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let (next, artifacts) = trainer.run_epoch(state)?;
        if let Some(dir) = out_dir {
            if let Some(g) = &artifacts.gradients {
                write(dir.join(format!("gradients_epoch{epoch}.jsonl")), g)?;
            }
            write(
                dir.join(format!("state_epoch{epoch}.json")),
                &next.to_json(),
            )?;
        }
        if next.best.as_ref().is_some_and(|b| b.epoch == epoch) {
            best_student = Some(next.student.clone());
        }
        state = next;
    }

    let report = RunReport::from_state(&state, cfg.metric)?;
    if let Some(dir) = out_dir {
        report.save(dir.join("report.json"))?;
        write(dir.join("metrics.csv"), report.metrics_csv()?.as_bytes())?;
    }
    let best_student = best_student.unwrap_or_else(|| state.student.clone());
    if let Some(dir) = out_dir {
        best_student.save(dir.join("best_student.json"))?;
    }
    Ok(RunOutcome {
        report,
        final_state: state,
        best_student,
    })
}

/// Student of the best epoch recorded in `state`, if it can be recovered.
fn best_checkpoint(state: &RunState, out_dir: Option<&Path>) -> Result<Option<StudentParams>> {
    let Some(best) = &state.best else {
        return Ok(None);
    };
    if best.epoch + 1 == state.epoch {
        return Ok(Some(state.student.clone()));
    }
    match out_dir {
        Some(dir) => {
            let path = dir.join(format!("state_epoch{}.json", best.epoch));
            if path.exists() {
                Ok(Some(RunState::load(path)?.student))
            } else {
                Ok(None)
            }
        }
        None => Ok(None),
    }
}
