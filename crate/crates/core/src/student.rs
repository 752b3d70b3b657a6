//! The student: a multiclass softmax classifier over hashed features of the
//! prefix-concatenated input.
//!
//! Features are FNV-1a hashed unigram counts of `prefix ++ text` plus one
//! interaction feature per (prefix token, input token) pair, so a prefix
//! changes which weights an input touches rather than only adding a
//! constant offset.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_DIMS: usize = 1 << 18;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const INTERACTION_SEPARATOR: u8 = 0x01;

/// FNV-1a 64-bit. A non-zero `seed` is folded into the offset basis, so
/// seed 0 is the reference hash.
pub fn fnv1a64(bytes: &[u8], seed: u64) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS ^ seed, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    pub fn from_map(map: BTreeMap<usize, f64>) -> Self {
        FeatureVector {
            entries: map.into_iter().filter(|(_, v)| *v != 0.0).collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |(i, _)| *i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|(i, _)| *i)
    }
}

pub fn featurize(prefix: &str, text: &str, dims: usize, hash_seed: u64) -> FeatureVector {
    debug_assert!(dims >= 2 && dims.is_power_of_two());
    let mask = (dims - 1) as u64;
    let prefix_tokens = tokenize(prefix);
    let input_tokens = tokenize(text);

    let mut counts = BTreeMap::new();
    for tok in prefix_tokens.iter().chain(&input_tokens) {
        let idx = (fnv1a64(tok.as_bytes(), hash_seed) & mask) as usize;
        *counts.entry(idx).or_insert(0.0) += 1.0;
    }
    let mut buf = Vec::new();
    for p in &prefix_tokens {
        for x in &input_tokens {
            buf.clear();
            buf.extend_from_slice(p.as_bytes());
            buf.push(INTERACTION_SEPARATOR);
            buf.extend_from_slice(x.as_bytes());
            let idx = (fnv1a64(&buf, hash_seed) & mask) as usize;
            *counts.entry(idx).or_insert(0.0) += 1.0;
        }
    }
    FeatureVector::from_map(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentParams {
    dims: usize,
    class_count: usize,
    /// Row-major `class_count x dims`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    frozen: bool,
}

/// Gradient of the loss w.r.t. weights and bias. Weight columns are stored
/// sparsely: only feature indices touched by the example appear.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    class_count: usize,
    dims: usize,
    bias: Vec<f64>,
    columns: Vec<(usize, Vec<f64>)>,
}

impl Gradient {
    /// Builds a gradient from a dense row-major weight block, keeping only
    /// non-zero columns.
    pub fn from_dense(
        class_count: usize,
        dims: usize,
        weights: &[f64],
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != class_count * dims || bias.len() != class_count {
            return Err(Error::validation("gradient shape mismatch"));
        }
        let columns = (0..dims)
            .filter_map(|j| {
                let col: Vec<f64> = (0..class_count).map(|c| weights[c * dims + j]).collect();
                col.iter().any(|v| *v != 0.0).then_some((j, col))
            })
            .collect();
        Ok(Gradient {
            class_count,
            dims,
            bias,
            columns,
        })
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.columns
            .binary_search_by_key(&feature, |(j, _)| *j)
            .map(|pos| self.columns[pos].1[class])
            .unwrap_or(0.0)
    }

    /// Row-major dense weight gradient.
    pub fn dense_weights(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.class_count * self.dims];
        for (j, col) in &self.columns {
            for (c, v) in col.iter().enumerate() {
                out[c * self.dims + j] = *v;
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.bias.iter().all(|v| *v == 0.0)
            && self
                .columns
                .iter()
                .all(|(_, col)| col.iter().all(|v| *v == 0.0))
    }
}

impl StudentParams {
    /// All-zero parameters (uniform predictions).
    pub fn zeros(class_count: usize, dims: usize) -> Result<Self> {
        if class_count == 0 || dims == 0 {
            return Err(Error::validation("class_count and dims must be positive"));
        }
        Ok(StudentParams {
            dims,
            class_count,
            weights: vec![0.0; class_count * dims],
            bias: vec![0.0; class_count],
            frozen: false,
        })
    }

    pub fn from_parts(
        class_count: usize,
        dims: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if class_count == 0 || dims == 0 {
            return Err(Error::validation("class_count and dims must be positive"));
        }
        if weights.len() != class_count * dims {
            return Err(Error::validation(format!(
                "weights has {} entries, expected {}",
                weights.len(),
                class_count * dims
            )));
        }
        if bias.len() != class_count {
            return Err(Error::validation(format!(
                "bias has {} entries, expected {class_count}",
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::validation("parameters must be finite"));
        }
        Ok(StudentParams {
            dims,
            class_count,
            weights,
            bias,
            frozen: false,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[class * self.dims + feature]
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    fn ensure_mutable(&self) -> Result<()> {
        if self.frozen {
            Err(Error::State("student parameters are frozen".into()))
        } else {
            Ok(())
        }
    }

    pub fn logits(&self, f: &FeatureVector) -> Vec<f64> {
        debug_assert!(f.max_index().is_none_or(|i| i < self.dims));
        (0..self.class_count)
            .map(|c| {
                let row = &self.weights[c * self.dims..(c + 1) * self.dims];
                self.bias[c] + f.entries().iter().map(|(j, v)| row[*j] * v).sum::<f64>()
            })
            .collect()
    }

    /// Class probabilities `softmax(W f + b)`.
    pub fn forward(&self, f: &FeatureVector) -> Vec<f64> {
        softmax(&self.logits(f))
    }

    pub fn grad(&self, f: &FeatureVector, label: usize) -> Gradient {
        let mut delta = self.forward(f);
        delta[label] -= 1.0;
        let columns = f
            .entries()
            .iter()
            .map(|(j, v)| (*j, delta.iter().map(|d| d * v).collect()))
            .collect();
        Gradient {
            class_count: self.class_count,
            dims: self.dims,
            bias: delta,
            columns,
        }
    }

    /// `theta <- theta - lr * g`.
    pub fn sgd_step(&mut self, g: &Gradient, lr: f64) -> Result<()> {
        self.ensure_mutable()?;
        if g.class_count != self.class_count || g.dims != self.dims {
            return Err(Error::validation(
                "gradient shape does not match parameters",
            ));
        }
        if lr == 0.0 {
            return Ok(());
        }
        for (b, gb) in self.bias.iter_mut().zip(&g.bias) {
            *b -= lr * gb;
        }
        for (j, col) in &g.columns {
            for (c, gv) in col.iter().enumerate() {
                self.weights[c * self.dims + j] -= lr * gv;
            }
        }
        Ok(())
    }

    /// One shuffled pass of per-example SGD. Returns the mean loss measured
    /// before each example's update.
    pub fn train_pass(
        &mut self,
        train: &Dataset,
        prefix: &str,
        lr: f64,
        hash_seed: u64,
        shuffle_seed: u64,
    ) -> Result<f64> {
        self.ensure_mutable()?;
        if train.is_empty() {
            return Err(Error::validation("training split is empty"));
        }
        if train.class_count() > self.class_count {
            return Err(Error::validation(
                "dataset has more classes than the student",
            ));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));

        let mut total = 0.0;
        for i in order {
            let ex = &train.examples()[i];
            let f = featurize(prefix, &ex.text, self.dims, hash_seed);
            let probs = self.forward(&f);
            total += loss(&probs, ex.label);
            let mut delta = probs;
            delta[ex.label] -= 1.0;
            for (c, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                self.bias[c] -= lr * d;
                let row = &mut self.weights[c * self.dims..(c + 1) * self.dims];
                for (j, v) in f.entries() {
                    row[*j] -= lr * d * v;
                }
            }
        }
        Ok(total / train.len() as f64)
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, prefix: &str, text: &str, hash_seed: u64) -> usize {
        argmax(&self.logits(&featurize(prefix, text, self.dims, hash_seed)))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            dims: self.dims,
            class_count: self.class_count,
            bias: self.bias.clone(),
            weights: self.weights.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = serde_json::to_vec(&self.to_checkpoint())?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
        StudentParams::try_from(ckpt)
    }
}

/// On-disk student checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub dims: usize,
    pub class_count: usize,
    pub bias: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TryFrom<Checkpoint> for StudentParams {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        StudentParams::from_parts(c.class_count, c.dims, c.weights, c.bias)
    }
}

/// Serialized form used inside run state: the checkpoint plus freeze flag.
#[derive(Serialize, Deserialize)]
struct StudentRepr {
    dims: usize,
    class_count: usize,
    bias: Vec<f64>,
    weights: Vec<f64>,
    frozen: bool,
}

impl Serialize for StudentParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StudentRepr {
            dims: self.dims,
            class_count: self.class_count,
            bias: self.bias.clone(),
            weights: self.weights.clone(),
            frozen: self.frozen,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StudentParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = StudentRepr::deserialize(d)?;
        let mut p = StudentParams::from_parts(r.class_count, r.dims, r.weights, r.bias)
            .map_err(serde::de::Error::custom)?;
        p.frozen = r.frozen;
        Ok(p)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy `-ln p[label]`.
pub fn loss(probs: &[f64], label: usize) -> f64 {
    -probs[label].ln()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
