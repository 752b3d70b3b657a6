use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetDescription, MAX_EXEMPLARS};
use crate::dialogue_gradient::{
    DEFAULT_FINETUNE_CAP, DEFAULT_WINDOW, FINETUNE_DEGRADATION_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::history::{DEFAULT_CANDIDATES_PER_ROUND, DEFAULT_HISTORY_SIZE};
use crate::metrics::MetricKind;
use crate::student::{DEFAULT_DIMS, DEFAULT_LEARNING_RATE};
use crate::ta::{
    PoolEntry, RemoteConfig, SimState, TaHandle, DEFAULT_INSTRUCTION, DEFAULT_TEMPERATURE,
};

pub const DEFAULT_EPOCHS: u32 = 5;

/// Prefix pool for the simulated TA when the config names none.
pub const DEFAULT_SIM_POOL: &[&str] = &[
    "Classify the following text",
    "Read carefully and decide",
    "Focus on the key words",
    "Consider the overall tone",
    "Identify the main topic",
    "Pay attention to strong signals",
    "Ignore irrelevant details",
    "Think about the label meaning",
    "What category fits best",
    "Look for decisive terms",
    "Judge the text as a whole",
    "Note repeated important words",
    "Decide based on evidence",
    "Summarize then classify",
    "Find the most telling phrase",
    "Weigh every clue",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    #[serde(default = "default_vocab")]
    pub vocab: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_vocab() -> usize {
    200
}

/// Where examples come from. Exactly one source must be given: a single
/// file that gets split, pre-split train/validation(/test) files, or a
/// synthetic corpus that gets split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthSpec>,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

impl DataConfig {
    pub fn synthetic(spec: SynthSpec) -> Self {
        DataConfig {
            path: None,
            train: None,
            validation: None,
            test: None,
            synthetic: Some(spec),
            split: default_split(),
        }
    }

    fn validate(&self) -> Result<()> {
        let sources = [
            self.path.is_some(),
            self.train.is_some() || self.validation.is_some(),
            self.synthetic.is_some(),
        ];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(Error::validation(
                "data: give exactly one of \"path\", \"train\"+\"validation\" or \"synthetic\"",
            ));
        }
        if self.train.is_some() != self.validation.is_some() {
            return Err(Error::validation(
                "data: \"train\" and \"validation\" go together",
            ));
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.path,
            &mut self.train,
            &mut self.validation,
            &mut self.test,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaConfig {
    Simulated {
        #[serde(default = "default_pool")]
        pool: Vec<PoolItem>,
        #[serde(default)]
        rng_seed: u64,
        #[serde(default = "default_temperature_scale")]
        temperature_scale: f64,
    },
    Remote(RemoteOptions),
}

/// A pool prefix, either bare (weight 0) or with an explicit weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoolItem {
    Plain(String),
    Weighted(PoolEntry),
}

impl PoolItem {
    fn entry(&self) -> PoolEntry {
        match self {
            PoolItem::Plain(p) => PoolEntry {
                prefix: p.clone(),
                weight: 0.0,
            },
            PoolItem::Weighted(e) => e.clone(),
        }
    }
}

fn pool_entries(pool: &[PoolItem]) -> Vec<PoolEntry> {
    pool.iter().map(PoolItem::entry).collect()
}

/// Remote TA options as they appear in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteOptions {
    pub base_url: String,
    pub model_id: String,
    #[serde(default = "RemoteOptions::default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "RemoteOptions::default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "RemoteOptions::default_poll_ms")]
    pub poll_interval_ms: u64,
    #[serde(default = "RemoteOptions::default_finetune_timeout_s")]
    pub finetune_timeout_s: u64,
    #[serde(default = "RemoteOptions::default_request_timeout_s")]
    pub request_timeout_s: u64,
}

impl RemoteOptions {
    fn defaults() -> RemoteConfig {
        RemoteConfig::new("")
    }
    fn default_attempts() -> u32 {
        Self::defaults().max_attempts
    }
    fn default_backoff_ms() -> u64 {
        Self::defaults().backoff_ms
    }
    fn default_poll_ms() -> u64 {
        Self::defaults().poll_interval_ms
    }
    fn default_finetune_timeout_s() -> u64 {
        Self::defaults().finetune_timeout_s
    }
    fn default_request_timeout_s() -> u64 {
        Self::defaults().request_timeout_s
    }

    pub fn to_remote_config(&self) -> RemoteConfig {
        RemoteConfig {
            base_url: self.base_url.clone(),
            api_key: None,
            max_attempts: self.max_attempts,
            backoff_ms: self.backoff_ms,
            poll_interval_ms: self.poll_interval_ms,
            finetune_timeout_s: self.finetune_timeout_s,
            request_timeout_s: self.request_timeout_s,
        }
        .with_env_key()
    }
}

fn default_pool() -> Vec<PoolItem> {
    DEFAULT_SIM_POOL
        .iter()
        .map(|p| PoolItem::Plain((*p).to_owned()))
        .collect()
}

fn default_temperature_scale() -> f64 {
    1.0
}

impl Default for TaConfig {
    fn default() -> Self {
        TaConfig::Simulated {
            pool: default_pool(),
            rng_seed: 0,
            temperature_scale: default_temperature_scale(),
        }
    }
}

impl TaConfig {
    pub fn base_handle(&self) -> Result<TaHandle> {
        match self {
            TaConfig::Simulated {
                pool,
                rng_seed,
                temperature_scale,
            } => Ok(TaHandle::simulated(SimState::new(
                pool_entries(pool),
                *rng_seed,
                *temperature_scale,
            )?)),
            TaConfig::Remote(remote) => Ok(TaHandle::remote(remote.model_id.clone())),
        }
    }

    pub fn remote_config(&self) -> Option<RemoteConfig> {
        match self {
            TaConfig::Remote(remote) => Some(remote.to_remote_config()),
            TaConfig::Simulated { .. } => None,
        }
    }
}

/// Whether each epoch fine-tunes the previous epoch's TA or the base model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaLineage {
    #[default]
    Continual,
    FromBase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<DatasetDescription>,
    #[serde(default = "default_instruction")]
    pub instruction: String,
    /// Training examples shown to the TA in every request.
    #[serde(default)]
    pub exemplars: usize,
    #[serde(default)]
    pub metric: MetricKind,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    /// History size collected each epoch.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Dialogue-gradient window size.
    #[serde(default = "default_w")]
    pub w: usize,
    /// Candidates requested per collection round.
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_cap")]
    pub finetune_cap: usize,
    /// Entries carried into the next epoch's history (best ones, plus the
    /// empty prefix). Defaults to `k / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_carry: Option<usize>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_dims")]
    pub dims: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hash_seed: u64,
    #[serde(default)]
    pub ta: TaConfig,
    #[serde(default)]
    pub ta_lineage: TaLineage,
}

fn default_instruction() -> String {
    DEFAULT_INSTRUCTION.to_owned()
}
fn default_epochs() -> u32 {
    DEFAULT_EPOCHS
}
fn default_k() -> usize {
    DEFAULT_HISTORY_SIZE
}
fn default_w() -> usize {
    DEFAULT_WINDOW
}
fn default_l() -> usize {
    DEFAULT_CANDIDATES_PER_ROUND
}
fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_cap() -> usize {
    DEFAULT_FINETUNE_CAP
}
fn default_lr() -> f64 {
    DEFAULT_LEARNING_RATE
}
fn default_dims() -> usize {
    DEFAULT_DIMS
}

impl RunConfig {
    /// All defaults around the given data source.
    pub fn new(data: DataConfig) -> Self {
        RunConfig {
            data,
            description: None,
            instruction: default_instruction(),
            exemplars: 0,
            metric: MetricKind::default(),
            epochs: DEFAULT_EPOCHS,
            k: DEFAULT_HISTORY_SIZE,
            w: DEFAULT_WINDOW,
            l: DEFAULT_CANDIDATES_PER_ROUND,
            temperature: DEFAULT_TEMPERATURE,
            finetune_cap: DEFAULT_FINETUNE_CAP,
            history_carry: None,
            lr: DEFAULT_LEARNING_RATE,
            dims: DEFAULT_DIMS,
            seed: 0,
            hash_seed: 0,
            ta: TaConfig::default(),
            ta_lineage: TaLineage::default(),
        }
    }

    pub fn carry(&self) -> usize {
        self.history_carry.unwrap_or(self.k / 2)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.epochs < 1 {
            return Err(Error::validation("epochs >= 1 required"));
        }
        if self.w < 1 {
            return Err(Error::validation("w >= 1 required"));
        }
        if self.w >= self.k {
            return Err(Error::validation("w < k required"));
        }
        // Epoch 0 seeds the empty prefix and s0 before collecting.
        if self.k < 3 {
            return Err(Error::validation("k >= 3 required"));
        }
        if self.l < 1 {
            return Err(Error::validation("l >= 1 required"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::validation("temperature must be a finite value >= 0"));
        }
        if self.finetune_cap < 1 {
            return Err(Error::validation("finetune_cap >= 1 required"));
        }
        let carry = self.carry();
        if carry < 1 || carry >= self.k {
            return Err(Error::validation("history_carry must lie in 1..k"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("lr must be a finite value >= 0"));
        }
        if self.dims < 2 || !self.dims.is_power_of_two() {
            return Err(Error::validation("dims must be a power of two >= 2"));
        }
        if self.exemplars > MAX_EXEMPLARS {
            return Err(Error::validation(format!(
                "exemplars must be <= {MAX_EXEMPLARS}"
            )));
        }
        if self.instruction.trim().is_empty() {
            return Err(Error::validation("instruction must be non-empty"));
        }
        if let Some(d) = &self.description {
            if d.task_summary.trim().is_empty() {
                return Err(Error::validation(
                    "description.task_summary must be non-empty",
                ));
            }
        }
        if let TaConfig::Simulated {
            pool,
            rng_seed,
            temperature_scale,
        } = &self.ta
        {
            SimState::new(pool_entries(pool), *rng_seed, *temperature_scale)?;
        }
        Ok(())
    }

    /// Non-fatal concerns about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.finetune_cap > FINETUNE_DEGRADATION_THRESHOLD {
            out.push(format!(
                "finetune_cap {} is above {FINETUNE_DEGRADATION_THRESHOLD}: \
                 TA fine-tuning degrades beyond 150 data points",
                self.finetune_cap
            ));
        }
        out
    }

    /// Parses a config object. Relative data paths are taken relative to
    /// `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::validation(format!("config at {path}: {}", e.inner()))
        })?;
        cfg.data.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Reads, resolves and validates a config file, logging any warnings.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cfg = RunConfig::from_json(&text, base)?;
    for w in cfg.warnings() {
        warn!("{w}");
    }
    Ok(cfg)
}
