use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetDescription, ExemplarSet};
use crate::error::{Error, Result};
use crate::history::ScoredPrefix;

use super::{ChatMessage, Role};

pub const MAX_PREFIX_WORDS: usize = 10;

/// Only the last (best) entries of a history are shown to the TA.
pub const MAX_RENDERED_HISTORY: usize = 60;

/// Shipped default for the meta-prompt instruction. Replaceable through
/// the run configuration.
pub const DEFAULT_INSTRUCTION: &str = "You help train a small text classifier. \
Every input the classifier sees is preceded by a short prefix prompt, and a good \
prefix makes the classifier more accurate. Your job is to propose prefix prompts \
that raise the classifier's score on held-out data.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPrompt {
    pub instruction: String,
    pub description: DatasetDescription,
    #[serde(default)]
    pub exemplars: ExemplarSet,
}

impl MetaPrompt {
    pub fn new(
        instruction: impl Into<String>,
        description: DatasetDescription,
        exemplars: ExemplarSet,
    ) -> Result<Self> {
        let instruction = instruction.into();
        if instruction.trim().is_empty() {
            return Err(Error::validation(
                "meta-prompt instruction must be non-empty",
            ));
        }
        Ok(MetaPrompt {
            instruction,
            description,
            exemplars,
        })
    }
}

/// System turn: instruction, dataset description and exemplars.
pub fn render_system(mp: &MetaPrompt) -> String {
    let d = &mp.description;
    let mut out = String::new();
    let _ = writeln!(out, "{}", mp.instruction.trim_end());
    let _ = writeln!(out);
    let _ = writeln!(out, "Dataset: {}", d.name);
    let _ = writeln!(out, "Task: {}", d.task_summary.trim());
    if !d.label_semantics.is_empty() {
        let _ = writeln!(out, "Labels:");
        for (i, line) in d.label_semantics.iter().enumerate() {
            let _ = writeln!(out, "{i}: {}", line.trim());
        }
    }
    if !mp.exemplars.is_empty() {
        let _ = writeln!(out, "Examples:");
        for ex in &mp.exemplars.examples {
            let _ = writeln!(out, "{}→{}", one_line(&ex.text), ex.label);
        }
    }
    out.truncate(out.trim_end().len());
    out
}

/// User turn: the scored entries (assumed ascending) followed by the ask
/// for `count` new prefixes.
pub fn render_history_turn(entries: &[ScoredPrefix], count: usize) -> String {
    let mut out = String::new();
    if entries.is_empty() {
        out.push_str("No prefix prompts have been scored yet.\n");
    } else {
        out.push_str("Prefix prompts scored so far, from lowest to highest score:\n");
        for e in entries {
            let _ = writeln!(
                out,
                "PREFIX: {} | SCORE: {:.4}",
                one_line(&e.prefix),
                e.score
            );
        }
    }
    let noun = if count == 1 { "prompt" } else { "prompts" };
    let _ = write!(
        out,
        "\nPropose exactly {count} new prefix {noun} that would score higher than every one above. \
Write one per line, each at most {MAX_PREFIX_WORDS} words, with no numbering or commentary."
    );
    out
}

/// Builds the two-message generation request. Histories longer than
/// [`MAX_RENDERED_HISTORY`] keep only their best tail.
pub fn render_generation_request(
    mp: &MetaPrompt,
    history: &[ScoredPrefix],
    count: usize,
) -> Vec<ChatMessage> {
    let shown = &history[history.len().saturating_sub(MAX_RENDERED_HISTORY)..];
    vec![
        ChatMessage::new(Role::System, render_system(mp)),
        ChatMessage::new(Role::User, render_history_turn(shown, count.max(1))),
    ]
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const QUOTES: &[char] = &['"', '\'', '`', '“', '”', '‘', '’'];

fn strip_list_marker(line: &str) -> &str {
    let s = line.trim_start();
    if let Some(rest) = s.strip_prefix(['-', '*', '•', '+']) {
        return rest;
    }
    let rest = s.strip_prefix('(').unwrap_or(s);
    let digits = rest.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let after = &rest[digits..];
        if let Some(tail) = after.strip_prefix(['.', ')', ':']) {
            return tail;
        }
    }
    s
}

fn clean_line(raw: &str) -> Option<String> {
    let mut s = strip_list_marker(raw).trim();
    // A model echoing the history format: keep just the prefix text.
    if let Some(rest) = s.strip_prefix("PREFIX:") {
        s = rest.split(" | SCORE:").next().unwrap_or(rest).trim();
    }
    let s = s.trim_matches(|c: char| c.is_whitespace() || QUOTES.contains(&c));
    let words: Vec<&str> = s.split_whitespace().take(MAX_PREFIX_WORDS).collect();
    (!words.is_empty()).then(|| words.join(" "))
}

/// Extracts up to `count` unique prefixes from a completion, one per line.
pub fn parse_prefixes(completion: &str, count: usize) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for line in completion.lines() {
        if out.len() >= count {
            break;
        }
        if let Some(p) = clean_line(line) {
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Protocol(
            "completion contained no usable prefix".into(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TextExample;
    use crate::history::Origin;

    fn mp(exemplars: ExemplarSet) -> MetaPrompt {
        MetaPrompt::new(
            "Find good prefixes.",
            DatasetDescription::new(
                "toy",
                "Binary sentiment.",
                vec!["negative".into(), "positive".into()],
            )
            .unwrap(),
            exemplars,
        )
        .unwrap()
    }

    fn sp(prefix: &str, score: f64) -> ScoredPrefix {
        ScoredPrefix {
            prefix: prefix.into(),
            score,
            origin: Origin::Seed,
        }
    }

    #[test]
    fn empty_history_request() {
        let msgs = render_generation_request(&mp(ExemplarSet::default()), &[], 1);
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[0].role, Role::System);
        assert!(!msgs[1].content.contains("PREFIX:"));
        assert!(msgs[1].content.contains("exactly 1 new prefix prompt "));
    }

    #[test]
    fn history_lines_ascending_with_four_decimals() {
        let msgs = render_generation_request(
            &mp(ExemplarSet::default()),
            &[sp("low", 0.3), sp("high", 0.7)],
            8,
        );
        let user = &msgs[1].content;
        let a = user.find("PREFIX: low | SCORE: 0.3000").unwrap();
        let b = user.find("PREFIX: high | SCORE: 0.7000").unwrap();
        assert!(a < b);
        assert!(user.contains("exactly 8 new prefix prompts"));
    }

    #[test]
    fn rendering_is_deterministic_and_truncated() {
        let h: Vec<ScoredPrefix> = (0..75)
            .map(|i| sp(&format!("p{i}"), i as f64 / 100.0))
            .collect();
        let a = render_generation_request(&mp(ExemplarSet::default()), &h, 3);
        let b = render_generation_request(&mp(ExemplarSet::default()), &h, 3);
        assert_eq!(a, b);
        assert_eq!(
            a[1].content.matches("PREFIX:").count(),
            MAX_RENDERED_HISTORY
        );
        assert!(!a[1].content.contains("PREFIX: p14 "));
        assert!(a[1].content.contains("PREFIX: p15 "));
    }

    #[test]
    fn system_message_lists_exemplars() {
        let ex = ExemplarSet {
            examples: vec![TextExample {
                text: "great  film".into(),
                label: 1,
            }],
        };
        let sys = render_system(&mp(ex));
        assert!(sys.starts_with("Find good prefixes."));
        assert!(sys.contains("Task: Binary sentiment."));
        assert!(sys.contains("1: positive"));
        assert!(sys.contains("great film→1"));
        assert!(!render_system(&mp(ExemplarSet::default())).contains("Examples:"));
    }

    #[test]
    fn parses_numbered_list() {
        let got = parse_prefixes("1. Think step by step\n2. Focus on sentiment", 2).unwrap();
        assert_eq!(got, ["Think step by step", "Focus on sentiment"]);
    }

    #[test]
    fn parse_dedups_strips_and_truncates() {
        let text = "- \"Focus\"\n* Focus\n\n(3) one two three four five six seven eight nine ten eleven\nPREFIX: echo | SCORE: 0.5000";
        let got = parse_prefixes(text, 10).unwrap();
        assert_eq!(got[0], "Focus");
        assert_eq!(got[1], "one two three four five six seven eight nine ten");
        assert_eq!(got[2], "echo");
        assert_eq!(got.len(), 3);
        assert_eq!(parse_prefixes(text, 1).unwrap(), ["Focus"]);
    }

    #[test]
    fn whitespace_only_completion_is_protocol_error() {
        assert!(matches!(
            parse_prefixes("  \n\t\n", 3),
            Err(Error::Protocol(_))
        ));
    }
}
