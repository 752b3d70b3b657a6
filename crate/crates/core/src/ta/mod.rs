//! The teaching assistant (TA): the language model that proposes prefixes
//! and is fine-tuned on dialogue gradients.
//!
//! Two backends implement [`TeachingAssistant`]:
//!
//! * [`RemoteTa`] talks to an OpenAI-compatible HTTP service.
//! * [`SimulatedTa`] samples from a weighted prefix pool and "fine-tunes" by
//!   bumping the weights of assistant targets. It is deterministic, so whole
//!   training runs can be replayed offline.
//!
//! Both backends carry their identity in a serializable [`TaHandle`], which
//! is what run checkpoints store.

mod prompt;
mod remote;
mod sim;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use prompt::{
    parse_prefixes, render_generation_request, render_history_turn, render_system, MetaPrompt,
    DEFAULT_INSTRUCTION, MAX_PREFIX_WORDS, MAX_RENDERED_HISTORY,
};
pub use remote::{RemoteConfig, RemoteTa, API_KEY_ENV};
pub use sim::{PoolEntry, SimState, SimulatedTa};

/// Default sampling temperature for prefix generation.
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaBackend {
    Remote { model_id: String },
    Simulated(SimState),
}

/// Identity of a TA model: which backend, which model, and how many
/// fine-tunes its lineage has gone through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaHandle {
    pub backend: TaBackend,
    pub generation: u32,
}

impl TaHandle {
    pub fn remote(model_id: impl Into<String>) -> Self {
        TaHandle {
            backend: TaBackend::Remote {
                model_id: model_id.into(),
            },
            generation: 0,
        }
    }

    pub fn simulated(state: SimState) -> Self {
        TaHandle {
            backend: TaBackend::Simulated(state),
            generation: 0,
        }
    }

    pub fn sim_state(&self) -> Option<&SimState> {
        match &self.backend {
            TaBackend::Simulated(s) => Some(s),
            TaBackend::Remote { .. } => None,
        }
    }

    pub fn model_id(&self) -> Option<&str> {
        match &self.backend {
            TaBackend::Remote { model_id } => Some(model_id),
            TaBackend::Simulated(_) => None,
        }
    }
}

pub trait TeachingAssistant {
    fn handle(&self) -> &TaHandle;

    /// Replaces the current model identity, e.g. to restart a lineage from
    /// the base model.
    fn set_handle(&mut self, handle: TaHandle);

    /// Proposes up to `count` distinct prefixes for the rendered request.
    fn generate(
        &mut self,
        request: &[ChatMessage],
        count: usize,
        temperature: f64,
    ) -> Result<Vec<String>>;

    /// Fine-tunes on a dialogue-gradient JSONL file. On success the handle
    /// points at the new model and its generation is one higher; on failure
    /// the handle is left untouched.
    fn finetune(&mut self, training_file: &[u8]) -> Result<()>;
}

/// Builds the backend matching `handle`. Remote handles need `remote`.
pub fn connect(
    handle: TaHandle,
    remote: Option<&RemoteConfig>,
) -> Result<Box<dyn TeachingAssistant + Send>> {
    match &handle.backend {
        TaBackend::Simulated(_) => Ok(Box::new(SimulatedTa::new(handle)?)),
        TaBackend::Remote { .. } => {
            let cfg = remote.ok_or_else(|| {
                crate::error::Error::validation("remote TA handle requires a remote configuration")
            })?;
            Ok(Box::new(RemoteTa::new(cfg.clone(), handle)?))
        }
    }
}
