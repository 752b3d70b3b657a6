//! Labeled text data: JSONL ingestion, deterministic splits, exemplar
//! sampling and a synthetic keyword corpus for offline runs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Upper bound on exemplar set size.
pub const MAX_EXEMPLARS: usize = 8;

/// Planted keywords per class in synthetic corpora.
pub const SYNTH_KEYWORDS_PER_CLASS: usize = 4;
const SYNTH_DOC_LEN: usize = 8;
const SYNTH_KEYWORD_RATE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextExample {
    pub text: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<TextExample>,
    class_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        examples: Vec<TextExample>,
        class_count: usize,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::validation("class_count must be positive"));
        }
        if let Some(names) = &class_names {
            if names.len() != class_count {
                return Err(Error::validation(format!(
                    "{} class names given for {} classes",
                    names.len(),
                    class_count
                )));
            }
        }
        for (i, ex) in examples.iter().enumerate() {
            if ex.text.trim().is_empty() {
                return Err(Error::validation(format!("example {i} has empty text")));
            }
            if ex.label >= class_count {
                return Err(Error::validation(format!(
                    "example {i} label {} out of range for {class_count} classes",
                    ex.label
                )));
            }
        }
        Ok(Dataset {
            examples,
            class_count,
            class_names,
        })
    }

    pub fn examples(&self) -> &[TextExample] {
        &self.examples
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    fn with_examples(&self, examples: Vec<TextExample>) -> Dataset {
        Dataset {
            examples,
            class_count: self.class_count,
            class_names: self.class_names.clone(),
        }
    }

    /// Serializes to the JSONL ingestion format (header line only when
    /// class names are present).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(names) = &self.class_names {
            let header = serde_json::json!({ "classes": names });
            let _ = writeln!(out, "{header}");
        }
        for ex in &self.examples {
            let line = serde_json::json!({ "text": ex.text, "label": ex.label });
            let _ = writeln!(out, "{line}");
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Free-text description of the task handed to the teaching assistant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescription {
    pub name: String,
    pub task_summary: String,
    #[serde(default)]
    pub label_semantics: Vec<String>,
}

impl DatasetDescription {
    pub fn new(
        name: impl Into<String>,
        task_summary: impl Into<String>,
        label_semantics: Vec<String>,
    ) -> Result<Self> {
        let task_summary = task_summary.into();
        if task_summary.trim().is_empty() {
            return Err(Error::validation("task_summary must be non-empty"));
        }
        Ok(DatasetDescription {
            name: name.into(),
            task_summary,
            label_semantics,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub examples: Vec<TextExample>,
}

impl ExemplarSet {
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

/// Parses JSONL dataset text. Line numbers in errors are 1-based.
pub fn parse_jsonl(text: &str) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut class_names: Option<Vec<String>> = None;
    let mut seen_content = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;

        if !seen_content && obj.contains_key("classes") {
            seen_content = true;
            let names = obj["classes"]
                .as_array()
                .and_then(|a| {
                    a.iter()
                        .map(|v| v.as_str().map(str::to_owned))
                        .collect::<Option<Vec<_>>>()
                })
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: "\"classes\" must be an array of strings".into(),
                })?;
            if names.is_empty() {
                return Err(Error::validation(format!(
                    "line {line_no}: \"classes\" header is empty"
                )));
            }
            class_names = Some(names);
            continue;
        }
        seen_content = true;

        let text = obj
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: "missing string field \"text\"".into(),
            })?;
        let label = obj
            .get("label")
            .and_then(Value::as_i64)
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: "missing integer field \"label\"".into(),
            })?;
        if label < 0 {
            return Err(Error::validation(format!(
                "line {line_no}: label {label} is negative"
            )));
        }
        if text.trim().is_empty() {
            return Err(Error::validation(format!("line {line_no}: empty text")));
        }
        if let Some(names) = &class_names {
            if label as usize >= names.len() {
                return Err(Error::validation(format!(
                    "line {line_no}: label {label} out of range for {} classes",
                    names.len()
                )));
            }
        }
        examples.push(TextExample {
            text: text.to_owned(),
            label: label as usize,
        });
    }

    if examples.is_empty() {
        return Err(Error::validation("no examples"));
    }
    let class_count = match &class_names {
        Some(names) => names.len(),
        None => 1 + examples.iter().map(|e| e.label).max().unwrap_or(0),
    };
    Dataset::new(examples, class_count, class_names)
}

/// Shuffles under `seed` and slices into (train, validation, test).
pub fn split(d: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
        return Err(Error::validation("split fractions must each lie in (0, 1)"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "split fractions sum to {total}, expected 1"
        )));
    }
    let n = d.len();
    if n < 3 {
        return Err(Error::validation(format!(
            "need at least 3 examples to split, got {n}"
        )));
    }

    let n_train = (n as f64 * fractions[0]).round() as usize;
    let n_val = (n as f64 * fractions[1]).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::validation(format!(
            "fractions {fractions:?} leave an empty split for n={n}"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| {
        d.with_examples(
            order[range]
                .iter()
                .map(|&i| d.examples[i].clone())
                .collect(),
        )
    };
    Ok((
        take(0..n_train),
        take(n_train..n_train + n_val),
        take(n_train + n_val..n),
    ))
}

pub fn make_exemplars(train: &Dataset, count: usize, seed: u64) -> Result<ExemplarSet> {
    if count > MAX_EXEMPLARS {
        return Err(Error::validation(format!(
            "exemplar count {count} exceeds cap of {MAX_EXEMPLARS}"
        )));
    }
    if count > train.len() {
        return Err(Error::validation(format!(
            "exemplar count {count} exceeds training size {}",
            train.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, train.len(), count).into_vec();
    picked.sort_unstable();
    Ok(ExemplarSet {
        examples: picked
            .into_iter()
            .map(|i| train.examples[i].clone())
            .collect(),
    })
}

/// Token used as the `j`-th planted keyword of `class` in synthetic corpora.
pub fn synth_keyword(class: usize, j: usize) -> String {
    format!("c{class}k{j}")
}

fn synth_noise_token(j: usize) -> String {
    format!("w{j}")
}

/// Generates a keyword-planted corpus: every document opens with one of its
/// class's keywords, and each remaining token is a class keyword with
/// probability one half, otherwise a shared noise word. With probability
/// `noise` the label is then redrawn uniformly over all classes.
pub fn synth_generate(
    class_count: usize,
    per_class: usize,
    vocab_size: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if class_count < 2 {
        return Err(Error::validation(
            "synthetic corpora need at least 2 classes",
        ));
    }
    if per_class == 0 {
        return Err(Error::validation("per_class must be at least 1"));
    }
    if vocab_size == 0 {
        return Err(Error::validation("vocab_size must be at least 1"));
    }
    if !(0.0..1.0).contains(&noise) {
        return Err(Error::validation("noise must lie in [0, 1)"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(class_count * per_class);
    for _ in 0..per_class {
        for class in 0..class_count {
            let mut tokens = Vec::with_capacity(SYNTH_DOC_LEN);
            tokens.push(synth_keyword(
                class,
                rng.random_range(0..SYNTH_KEYWORDS_PER_CLASS),
            ));
            for _ in 1..SYNTH_DOC_LEN {
                if rng.random_bool(SYNTH_KEYWORD_RATE) {
                    tokens.push(synth_keyword(
                        class,
                        rng.random_range(0..SYNTH_KEYWORDS_PER_CLASS),
                    ));
                } else {
                    tokens.push(synth_noise_token(rng.random_range(0..vocab_size)));
                }
            }
            let label = if noise > 0.0 && rng.random_bool(noise) {
                rng.random_range(0..class_count)
            } else {
                class
            };
            examples.push(TextExample {
                text: tokens.join(" "),
                label,
            });
        }
    }
    Dataset::new(examples, class_count, None)
}
