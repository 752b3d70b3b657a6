//! Dialogue gradients: fine-tuning examples cut from the sorted prefix
//! history with a sliding window.
//!
//! Window `i` covers history entries `i .. i+w` and becomes the user turn;
//! entry `i+w`, which scores at least as well as everything in the window,
//! becomes the assistant turn. Training a chat model on these pairs teaches
//! it to continue an ascending score trace with a better prefix.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{PrefixHistory, ScoredPrefix};
use crate::ta::{render_history_turn, render_system, ChatMessage, MetaPrompt, Role};

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_FINETUNE_CAP: usize = 50;
/// Fine-tune sets larger than this are known to hurt the TA.
pub const FINETUNE_DEGRADATION_THRESHOLD: usize = 150;

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueGradient {
    pub window_index: usize,
    pub window: Vec<ScoredPrefix>,
    pub target: String,
    pub target_score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneExample {
    pub messages: Vec<ChatMessage>,
}

impl FinetuneExample {
    pub fn new(
        system: impl Into<String>,
        user: impl Into<String>,
        assistant: impl Into<String>,
    ) -> Result<Self> {
        let ex = FinetuneExample {
            messages: vec![
                ChatMessage::new(Role::System, system),
                ChatMessage::new(Role::User, user),
                ChatMessage::new(Role::Assistant, assistant),
            ],
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        let roles: Vec<Role> = self.messages.iter().map(|m| m.role).collect();
        if roles != [Role::System, Role::User, Role::Assistant] {
            return Err(Error::validation(format!(
                "fine-tune example must be system/user/assistant, got {roles:?}"
            )));
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return Err(Error::validation("fine-tune messages must have content"));
        }
        Ok(())
    }

    pub fn assistant(&self) -> &str {
        &self.messages[2].content
    }
}

pub fn build_windows(h: &PrefixHistory, w: usize) -> Result<Vec<DialogueGradient>> {
    if w == 0 {
        return Err(Error::validation("window size must be at least 1"));
    }
    let entries = h.entries();
    if entries.len() <= w {
        return Err(Error::validation(format!(
            "history of {} entries is too short for window size {w}",
            entries.len()
        )));
    }
    Ok((0..entries.len() - w)
        .map(|i| DialogueGradient {
            window_index: i,
            window: entries[i..i + w].to_vec(),
            target: entries[i + w].prefix.clone(),
            target_score: entries[i + w].score,
        })
        .collect())
}

/// Turns windows into chat examples. The system and user turns use the
/// same renderers as prefix generation. Windows whose target is the empty
/// (baseline) prefix are dropped, since an assistant turn cannot be empty.
pub fn enrich(gs: &[DialogueGradient], mp: &MetaPrompt) -> Vec<FinetuneExample> {
    let system = render_system(mp);
    gs.iter()
        .filter(|g| {
            let keep = !g.target.trim().is_empty();
            if !keep {
                debug!("skipping window {} with empty target", g.window_index);
            }
            keep
        })
        .map(|g| FinetuneExample {
            messages: vec![
                ChatMessage::new(Role::System, system.clone()),
                ChatMessage::new(Role::User, render_history_turn(&g.window, 1)),
                ChatMessage::new(Role::Assistant, g.target.clone()),
            ],
        })
        .collect()
}

/// Keeps the last `max_n` examples, i.e. those with the best targets.
pub fn cap(mut examples: Vec<FinetuneExample>, max_n: usize) -> Vec<FinetuneExample> {
    assert!(max_n >= 1, "cap must be at least 1");
    if max_n > FINETUNE_DEGRADATION_THRESHOLD {
        warn!(
            "fine-tune cap {max_n} exceeds {FINETUNE_DEGRADATION_THRESHOLD}; \
             TA quality tends to degrade beyond 150 data points"
        );
    }
    if examples.len() > max_n {
        examples.drain(..examples.len() - max_n);
    }
    examples
}

/// Canonical JSONL: one compact object per line, each followed by `\n`.
pub fn serialize_jsonl(examples: &[FinetuneExample]) -> Result<Vec<u8>> {
    if examples.is_empty() {
        return Err(Error::validation("no fine-tune examples to serialize"));
    }
    let mut out = Vec::new();
    for ex in examples {
        ex.validate()?;
        serde_json::to_writer(&mut out, ex)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Parses and validates a fine-tune file. Blank lines are ignored.
pub fn parse_jsonl(bytes: &[u8]) -> Result<Vec<FinetuneExample>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::validation(format!("fine-tune file is not UTF-8: {e}")))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: FinetuneExample = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        ex.validate()?;
        out.push(ex);
    }
    if out.is_empty() {
        return Err(Error::validation("fine-tune file has no examples"));
    }
    Ok(out)
}
