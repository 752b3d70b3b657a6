use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue_gradient::parse_jsonl;
use crate::error::{Error, Result};

use super::{ChatMessage, Role, TaBackend, TaHandle, TeachingAssistant};

/// Weight bump applied per assistant-target occurrence in a fine-tune file.
pub const FINETUNE_BUMP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub prefix: String,
    pub weight: f64,
}

/// State of the simulated TA: a weighted prefix pool sampled as a softmax
/// over `weight / (temperature_scale * temperature)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub pool: Vec<PoolEntry>,
    pub rng_seed: u64,
    pub temperature_scale: f64,
    /// Number of generate calls served; selects the RNG stream.
    #[serde(default)]
    pub calls: u64,
}

impl SimState {
    pub fn new(pool: Vec<PoolEntry>, rng_seed: u64, temperature_scale: f64) -> Result<Self> {
        let s = SimState {
            pool,
            rng_seed,
            temperature_scale,
            calls: 0,
        };
        s.validate()?;
        Ok(s)
    }

    /// Pool of equally weighted prefixes.
    pub fn uniform<S: Into<String>>(
        prefixes: impl IntoIterator<Item = S>,
        rng_seed: u64,
    ) -> Result<Self> {
        let pool = prefixes
            .into_iter()
            .map(|p| PoolEntry {
                prefix: p.into(),
                weight: 0.0,
            })
            .collect();
        SimState::new(pool, rng_seed, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool.is_empty() {
            return Err(Error::validation("simulated TA pool must be non-empty"));
        }
        if self.pool.iter().any(|e| !e.weight.is_finite()) {
            return Err(Error::validation(
                "simulated TA pool weights must be finite",
            ));
        }
        if self.pool.iter().any(|e| e.prefix.trim().is_empty()) {
            return Err(Error::validation(
                "simulated TA pool prefixes must be non-empty",
            ));
        }
        if !(self.temperature_scale > 0.0 && self.temperature_scale.is_finite()) {
            return Err(Error::validation("temperature_scale must be positive"));
        }
        Ok(())
    }

    pub fn weight(&self, prefix: &str) -> Option<f64> {
        self.pool
            .iter()
            .find(|e| e.prefix == prefix)
            .map(|e| e.weight)
    }

    /// Single-draw sampling probabilities over the pool, in pool order.
    pub fn probabilities(&self, temperature: f64) -> Vec<f64> {
        let idx: Vec<usize> = (0..self.pool.len()).collect();
        self.softmax_over(&idx, temperature)
    }

    /// Probability that a single draw lands in `prefixes`.
    pub fn mass<S: AsRef<str>>(&self, prefixes: &[S], temperature: f64) -> f64 {
        self.probabilities(temperature)
            .iter()
            .zip(&self.pool)
            .filter(|(_, e)| prefixes.iter().any(|p| p.as_ref() == e.prefix))
            .map(|(p, _)| p)
            .sum()
    }

    fn softmax_over(&self, candidates: &[usize], temperature: f64) -> Vec<f64> {
        let tau = self.temperature_scale * temperature;
        let max = candidates
            .iter()
            .map(|&i| self.pool[i].weight)
            .fold(f64::NEG_INFINITY, f64::max);
        if tau <= 0.0 {
            // Greedy: all mass on the first maximal entry.
            let first = candidates.iter().position(|&i| self.pool[i].weight == max);
            return (0..candidates.len())
                .map(|k| if Some(k) == first { 1.0 } else { 0.0 })
                .collect();
        }
        let exps: Vec<f64> = candidates
            .iter()
            .map(|&i| ((self.pool[i].weight - max) / tau).exp())
            .collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    /// Draws up to `count` distinct prefixes without replacement.
    pub fn sample(&mut self, count: usize, temperature: f64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(self.calls);
        self.calls += 1;

        let mut remaining: Vec<usize> = (0..self.pool.len()).collect();
        let mut out = Vec::with_capacity(count.min(remaining.len()));
        while out.len() < count && !remaining.is_empty() {
            let probs = self.softmax_over(&remaining, temperature);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = remaining.len() - 1;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            out.push(self.pool[remaining.remove(pick)].prefix.clone());
        }
        out
    }

    /// Adds [`FINETUNE_BUMP`] per occurrence of each target, appending
    /// unseen targets with that weight.
    pub fn reinforce<S: AsRef<str>>(&mut self, targets: &[S]) {
        for t in targets {
            let t = t.as_ref();
            match self.pool.iter_mut().find(|e| e.prefix == t) {
                Some(e) => e.weight += FINETUNE_BUMP,
                None => self.pool.push(PoolEntry {
                    prefix: t.to_owned(),
                    weight: FINETUNE_BUMP,
                }),
            }
        }
    }
}

/// Offline, deterministic TA backend.
#[derive(Debug, Clone)]
pub struct SimulatedTa {
    handle: TaHandle,
}

impl SimulatedTa {
    pub fn new(handle: TaHandle) -> Result<Self> {
        match &handle.backend {
            TaBackend::Simulated(s) => s.validate()?,
            TaBackend::Remote { .. } => {
                return Err(Error::validation("SimulatedTa needs a simulated handle"))
            }
        }
        Ok(SimulatedTa { handle })
    }

    pub fn state(&self) -> &SimState {
        self.handle.sim_state().expect("simulated handle")
    }

    fn state_mut(&mut self) -> &mut SimState {
        match &mut self.handle.backend {
            TaBackend::Simulated(s) => s,
            TaBackend::Remote { .. } => unreachable!("simulated handle"),
        }
    }
}

impl TeachingAssistant for SimulatedTa {
    fn handle(&self) -> &TaHandle {
        &self.handle
    }

    fn set_handle(&mut self, handle: TaHandle) {
        assert!(
            handle.sim_state().is_some(),
            "SimulatedTa needs a simulated handle"
        );
        self.handle = handle;
    }

    fn generate(
        &mut self,
        _request: &[ChatMessage],
        count: usize,
        temperature: f64,
    ) -> Result<Vec<String>> {
        if temperature.is_nan() || temperature < 0.0 {
            return Err(Error::validation("temperature must be non-negative"));
        }
        Ok(self.state_mut().sample(count, temperature))
    }

    fn finetune(&mut self, training_file: &[u8]) -> Result<()> {
        let examples = parse_jsonl(training_file)?;
        if examples.is_empty() {
            return Err(Error::validation("fine-tune file has no examples"));
        }
        let targets: Vec<&str> = examples
            .iter()
            .flat_map(|ex| ex.messages.iter())
            .filter(|m| m.role == Role::Assistant)
            .map(|m| m.content.as_str())
            .collect();
        self.state_mut().reinforce(&targets);
        self.handle.generation += 1;
        Ok(())
    }
}
