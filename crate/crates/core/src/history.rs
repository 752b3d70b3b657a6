//! Prefix history: scored prefixes kept in ascending score order, and the
//! loop that grows it by querying the teaching assistant against a frozen
//! student.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_with_classes, MetricKind, Predictions};
use crate::student::{featurize, StudentParams};
use crate::ta::{render_generation_request, MetaPrompt, TeachingAssistant};

pub const DEFAULT_HISTORY_SIZE: usize = 50;
pub const DEFAULT_CANDIDATES_PER_ROUND: usize = 8;
/// Consecutive unproductive rounds after which collection gives up.
pub const STALL_ROUNDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Generated { epoch: u32, round: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrefix {
    pub prefix: String,
    pub score: f64,
    pub origin: Origin,
}

/// Per-round bookkeeping of a collection run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: u32,
    pub generated: usize,
    /// Candidates scoring strictly above the history maximum at round start.
    pub exceeded: usize,
}

/// Ascending-by-score list of uniquely named prefixes.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PrefixHistory {
    entries: Vec<ScoredPrefix>,
}

impl<'de> Deserialize<'de> for PrefixHistory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries = Vec::<ScoredPrefix>::deserialize(d)?;
        PrefixHistory::from_sorted(entries).map_err(serde::de::Error::custom)
    }
}

impl PrefixHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts entries already in ascending order with unique prefixes.
    pub fn from_sorted(entries: Vec<ScoredPrefix>) -> Result<Self> {
        if entries.iter().any(|e| !e.score.is_finite()) {
            return Err(Error::validation("history scores must be finite"));
        }
        if entries.windows(2).any(|w| w[0].score > w[1].score) {
            return Err(Error::validation(
                "history entries are not in ascending score order",
            ));
        }
        let mut names: Vec<&str> = entries.iter().map(|e| e.prefix.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("history contains duplicate prefixes"));
        }
        Ok(PrefixHistory { entries })
    }

    pub fn entries(&self) -> &[ScoredPrefix] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, prefix: &str) -> bool {
        self.entries.iter().any(|e| e.prefix == prefix)
    }

    pub fn get(&self, prefix: &str) -> Option<&ScoredPrefix> {
        self.entries.iter().find(|e| e.prefix == prefix)
    }

    pub fn best(&self) -> Option<&ScoredPrefix> {
        self.entries.last()
    }

    pub fn max_score(&self) -> Option<f64> {
        self.best().map(|e| e.score)
    }

    /// Inserts after any equal scores. Returns false (and leaves the
    /// history unchanged) if the prefix is already present.
    pub fn insert_sorted(&mut self, sp: ScoredPrefix) -> bool {
        assert!(sp.score.is_finite(), "history scores must be finite");
        if self.contains(&sp.prefix) {
            return false;
        }
        let at = self.entries.partition_point(|e| e.score <= sp.score);
        self.entries.insert(at, sp);
        true
    }

    /// Rescores every entry and restores ascending order; ties keep their
    /// previous relative order.
    pub fn rescore(&mut self, mut score: impl FnMut(&str) -> Result<f64>) -> Result<()> {
        for e in &mut self.entries {
            e.score = score(&e.prefix)?;
        }
        self.entries.sort_by(|a, b| a.score.total_cmp(&b.score));
        Ok(())
    }

    /// Keeps the `n` best entries, plus `always` if present.
    pub fn retain_best(&mut self, n: usize, always: &str) {
        if self.entries.len() <= n {
            return;
        }
        let cut = self.entries.len() - n;
        let mut i = 0;
        self.entries.retain(|e| {
            let keep = i >= cut || e.prefix == always;
            i += 1;
            keep
        });
    }
}

/// Metric of `student` on `eval_set` with `prefix` prepended to every
/// input. The student must be frozen.
pub fn score_prefix(
    student: &StudentParams,
    prefix: &str,
    eval_set: &Dataset,
    kind: MetricKind,
    hash_seed: u64,
) -> Result<f64> {
    if !student.is_frozen() {
        return Err(Error::State("scoring requires a frozen student".into()));
    }
    if eval_set.is_empty() {
        return Err(Error::validation("evaluation set is empty"));
    }
    let labels = eval_set.labels();
    let classes = student.class_count();
    let score = if kind.needs_probabilities() {
        let probs: Vec<Vec<f64>> = eval_set
            .examples()
            .iter()
            .map(|ex| student.forward(&featurize(prefix, &ex.text, student.dims(), hash_seed)))
            .collect();
        evaluate_with_classes(kind, Predictions::Probabilities(&probs), &labels, classes)?
    } else {
        let preds: Vec<usize> = eval_set
            .examples()
            .iter()
            .map(|ex| student.predict(prefix, &ex.text, hash_seed))
            .collect();
        evaluate_with_classes(kind, Predictions::Labels(&preds), &labels, classes)?
    };
    // A saturated softmax can drive the mean loss to infinity.
    Ok(if score.is_finite() { score } else { f64::MIN })
}

/// Everything needed to score a prefix against a frozen student.
#[derive(Clone, Copy)]
pub struct Scorer<'a> {
    pub student: &'a StudentParams,
    pub eval_set: &'a Dataset,
    pub kind: MetricKind,
    pub hash_seed: u64,
}

impl Scorer<'_> {
    pub fn score(&self, prefix: &str) -> Result<f64> {
        score_prefix(
            self.student,
            prefix,
            self.eval_set,
            self.kind,
            self.hash_seed,
        )
    }
}

/// History holding the empty prefix (the no-prefix baseline) plus each
/// candidate.
pub fn seed_history(scorer: &Scorer<'_>, candidates: &[String]) -> Result<PrefixHistory> {
    let mut h = PrefixHistory::new();
    h.insert_sorted(ScoredPrefix {
        prefix: String::new(),
        score: scorer.score("")?,
        origin: Origin::Seed,
    });
    for c in candidates {
        if h.contains(c) {
            continue;
        }
        h.insert_sorted(ScoredPrefix {
            prefix: c.clone(),
            score: scorer.score(c)?,
            origin: Origin::Seed,
        });
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectParams {
    /// Target history size.
    pub k: usize,
    /// Candidates requested per round.
    pub l: usize,
    pub temperature: f64,
    /// Recorded in the origin of new entries.
    pub epoch: u32,
}

/// Grows `history` to exactly `params.k` entries by repeatedly asking the
/// TA for candidates conditioned on the current history.
///
/// Candidates already present are skipped without rescoring. Fresh ones
/// are scored in parallel and inserted in the order the TA returned them;
/// once the target size is reached the remainder of that round is dropped.
pub fn collect(
    ta: &mut dyn TeachingAssistant,
    mp: &MetaPrompt,
    scorer: &Scorer<'_>,
    mut history: PrefixHistory,
    params: CollectParams,
) -> Result<(PrefixHistory, Vec<RoundStats>)> {
    if history.is_empty() {
        return Err(Error::validation(
            "collection needs a non-empty starting history",
        ));
    }
    if params.k <= history.len() {
        return Err(Error::validation(format!(
            "target size k={} must exceed the starting history size {}",
            params.k,
            history.len()
        )));
    }
    if params.l == 0 {
        return Err(Error::validation("candidates per round must be at least 1"));
    }
    if !scorer.student.is_frozen() {
        return Err(Error::State("collection requires a frozen student".into()));
    }

    let mut rounds = Vec::new();
    let mut idle = 0;
    let mut round: u32 = 0;
    while history.len() < params.k {
        let request = render_generation_request(mp, history.entries(), params.l);
        let candidates = ta.generate(&request, params.l, params.temperature)?;
        let pre_max = history.max_score().unwrap_or(f64::NEG_INFINITY);

        let mut fresh: Vec<&String> = Vec::new();
        for c in &candidates {
            if !history.contains(c) && !fresh.contains(&c) {
                fresh.push(c);
            }
        }
        let scores = fresh
            .par_iter()
            .map(|c| scorer.score(c))
            .collect::<Result<Vec<f64>>>()?;

        let exceeded = scores.iter().filter(|s| **s > pre_max).count();
        let mut added = 0;
        for (prefix, score) in fresh.into_iter().zip(scores) {
            if history.len() >= params.k {
                break;
            }
            if history.insert_sorted(ScoredPrefix {
                prefix: prefix.clone(),
                score,
                origin: Origin::Generated {
                    epoch: params.epoch,
                    round,
                },
            }) {
                added += 1;
            }
        }
        debug!(
            "round {round}: {} candidates, {added} added, {exceeded} above {pre_max:.4}",
            candidates.len()
        );
        rounds.push(RoundStats {
            round,
            generated: candidates.len(),
            exceeded,
        });

        if added == 0 {
            idle += 1;
            if idle >= STALL_ROUNDS {
                return Err(Error::Stall { rounds: idle });
            }
        } else {
            idle = 0;
        }
        round += 1;
    }
    Ok((history, rounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetDescription, ExemplarSet, TextExample};
    use crate::ta::{SimState, SimulatedTa, TaHandle};

    fn sp(prefix: &str, score: f64) -> ScoredPrefix {
        ScoredPrefix {
            prefix: prefix.into(),
            score,
            origin: Origin::Seed,
        }
    }

    fn scores(h: &PrefixHistory) -> Vec<f64> {
        h.entries().iter().map(|e| e.score).collect()
    }

    fn class0_set() -> Dataset {
        let ex = (0..4)
            .map(|i| TextExample {
                text: format!("t{i}"),
                label: 0,
            })
            .collect();
        Dataset::new(ex, 2, None).unwrap()
    }

    fn frozen_zero() -> StudentParams {
        let mut p = StudentParams::zeros(2, 64).unwrap();
        p.freeze();
        p
    }

    fn meta() -> MetaPrompt {
        MetaPrompt::new(
            "x",
            DatasetDescription::new("d", "task", vec![]).unwrap(),
            ExemplarSet::default(),
        )
        .unwrap()
    }

    #[test]
    fn insert_examples() {
        let mut h = PrefixHistory::from_sorted(vec![sp("a", 0.3), sp("c", 0.7)]).unwrap();
        assert!(h.insert_sorted(sp("b", 0.5)));
        assert_eq!(scores(&h), [0.3, 0.5, 0.7]);
        let before = h.clone();
        assert!(!h.insert_sorted(sp("b", 0.9)));
        assert_eq!(h, before);
    }

    #[test]
    fn ties_are_stable() {
        let mut h = PrefixHistory::new();
        h.insert_sorted(sp("first", 0.5));
        h.insert_sorted(sp("second", 0.5));
        h.insert_sorted(sp("low", 0.1));
        let names: Vec<&str> = h.entries().iter().map(|e| e.prefix.as_str()).collect();
        assert_eq!(names, ["low", "first", "second"]);
    }

    #[test]
    fn from_sorted_validates() {
        assert!(PrefixHistory::from_sorted(vec![sp("a", 0.5), sp("b", 0.1)]).is_err());
        assert!(PrefixHistory::from_sorted(vec![sp("a", 0.1), sp("a", 0.5)]).is_err());
        let json = r#"[{"prefix":"b","score":0.9,"origin":"seed"},{"prefix":"a","score":0.1,"origin":"seed"}]"#;
        assert!(serde_json::from_str::<PrefixHistory>(json).is_err());
    }

    #[test]
    fn checkpoint_format() {
        let mut h = PrefixHistory::new();
        h.insert_sorted(sp("", 0.25));
        h.insert_sorted(ScoredPrefix {
            prefix: "go".into(),
            score: 0.5,
            origin: Origin::Generated { epoch: 1, round: 2 },
        });
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(
            json,
            r#"[{"prefix":"","score":0.25,"origin":"seed"},{"prefix":"go","score":0.5,"origin":{"generated":{"epoch":1,"round":2}}}]"#
        );
        assert_eq!(serde_json::from_str::<PrefixHistory>(&json).unwrap(), h);
    }

    #[test]
    fn retain_best_keeps_baseline() {
        let mut h =
            PrefixHistory::from_sorted(vec![sp("", 0.1), sp("a", 0.2), sp("b", 0.3), sp("c", 0.4)])
                .unwrap();
        h.retain_best(2, "");
        let names: Vec<&str> = h.entries().iter().map(|e| e.prefix.as_str()).collect();
        assert_eq!(names, ["", "b", "c"]);
    }

    #[test]
    fn scoring_examples() {
        let student = frozen_zero();
        let set = class0_set();
        let s = score_prefix(&student, "", &set, MetricKind::Accuracy, 0).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(
            s,
            score_prefix(&student, "", &set, MetricKind::Accuracy, 0).unwrap()
        );
        let loss = score_prefix(&student, "p", &set, MetricKind::NegMeanLoss, 0).unwrap();
        assert!((loss + 2f64.ln()).abs() < 1e-12);

        let unfrozen = StudentParams::zeros(2, 64).unwrap();
        assert!(matches!(
            score_prefix(&unfrozen, "", &set, MetricKind::Accuracy, 0),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn seed_history_examples() {
        let student = frozen_zero();
        let set = class0_set();
        let scorer = Scorer {
            student: &student,
            eval_set: &set,
            kind: MetricKind::Accuracy,
            hash_seed: 0,
        };
        let h = seed_history(&scorer, &[]).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h.entries()[0].prefix, "");
        assert_eq!(seed_history(&scorer, &["".into()]).unwrap().len(), 1);
        assert_eq!(
            seed_history(&scorer, &["a".into(), "b".into()])
                .unwrap()
                .len(),
            3
        );
    }

    #[test]
    fn one_round_when_all_candidates_fresh() {
        let student = frozen_zero();
        let set = class0_set();
        let scorer = Scorer {
            student: &student,
            eval_set: &set,
            kind: MetricKind::Accuracy,
            hash_seed: 0,
        };
        let pool: Vec<String> = (0..4).map(|i| format!("p{i}")).collect();
        let mut ta =
            SimulatedTa::new(TaHandle::simulated(SimState::uniform(pool, 1).unwrap())).unwrap();
        let h0 = seed_history(&scorer, &[]).unwrap();
        let params = CollectParams {
            k: 1 + 4,
            l: 4,
            temperature: 1.0,
            epoch: 0,
        };
        let (h, rounds) = collect(&mut ta, &meta(), &scorer, h0, params).unwrap();
        assert_eq!(h.len(), 5);
        assert_eq!(rounds.len(), 1);
        assert_eq!(rounds[0].generated, 4);
        // All tie with the baseline, so nothing strictly exceeds it.
        assert_eq!(rounds[0].exceeded, 0);
    }

    #[test]
    fn exhausted_pool_stalls() {
        let student = frozen_zero();
        let set = class0_set();
        let scorer = Scorer {
            student: &student,
            eval_set: &set,
            kind: MetricKind::Accuracy,
            hash_seed: 0,
        };
        let mut ta = SimulatedTa::new(TaHandle::simulated(
            SimState::uniform(["a", "b"], 1).unwrap(),
        ))
        .unwrap();
        let h0 = seed_history(&scorer, &["a".into(), "b".into()]).unwrap();
        let params = CollectParams {
            k: 10,
            l: 2,
            temperature: 1.0,
            epoch: 0,
        };
        match collect(&mut ta, &meta(), &scorer, h0, params) {
            Err(Error::Stall { rounds }) => assert_eq!(rounds, STALL_ROUNDS),
            other => panic!("expected stall, got {other:?}"),
        }
    }

    #[test]
    fn collect_preconditions() {
        let student = frozen_zero();
        let set = class0_set();
        let scorer = Scorer {
            student: &student,
            eval_set: &set,
            kind: MetricKind::Accuracy,
            hash_seed: 0,
        };
        let mut ta =
            SimulatedTa::new(TaHandle::simulated(SimState::uniform(["a"], 1).unwrap())).unwrap();
        let h0 = seed_history(&scorer, &[]).unwrap();
        let p = CollectParams {
            k: 1,
            l: 1,
            temperature: 1.0,
            epoch: 0,
        };
        assert!(collect(&mut ta, &meta(), &scorer, h0.clone(), p).is_err());
        let p = CollectParams {
            k: 3,
            l: 0,
            temperature: 1.0,
            epoch: 0,
        };
        assert!(collect(&mut ta, &meta(), &scorer, h0.clone(), p).is_err());
        let p = CollectParams {
            k: 3,
            l: 1,
            temperature: 1.0,
            epoch: 0,
        };
        assert!(collect(&mut ta, &meta(), &scorer, PrefixHistory::new(), p).is_err());
    }
}
