//! Cut a history into dialogue gradients and "fine-tune" the simulated TA
//! on them.

use gpta::dataset::{DatasetDescription, ExemplarSet};
use gpta::dialogue_gradient::{build_windows, cap, enrich, serialize_jsonl};
use gpta::history::{Origin, PrefixHistory, ScoredPrefix};
use gpta::ta::{MetaPrompt, SimState, SimulatedTa, TaHandle, TeachingAssistant};

fn main() -> gpta::Result<()> {
    let prefixes = [
        ("", 0.61),
        ("Ignore the details", 0.58),
        ("Read it twice", 0.63),
        ("Think about tone", 0.66),
        ("Find the topic", 0.70),
        ("Focus on key words", 0.74),
        ("Weigh every clue", 0.77),
        ("Decide from evidence", 0.81),
    ];
    let mut history = PrefixHistory::new();
    for (p, s) in prefixes {
        history.insert_sorted(ScoredPrefix {
            prefix: p.into(),
            score: s,
            origin: Origin::Seed,
        });
    }

    let meta = MetaPrompt::new(
        "You write short prefixes that help a text classifier.",
        DatasetDescription::new(
            "reviews",
            "Label each review.",
            vec!["negative".into(), "positive".into()],
        )?,
        ExemplarSet::default(),
    )?;
    let windows = build_windows(&history, 3)?;
    let examples = cap(enrich(&windows, &meta), 50);
    let file = serialize_jsonl(&examples)?;
    println!(
        "{} windows -> {} examples, {} bytes",
        windows.len(),
        examples.len(),
        file.len()
    );
    println!(
        "{}",
        String::from_utf8_lossy(&file)
            .lines()
            .last()
            .unwrap_or_default()
    );

    let pool = history
        .entries()
        .iter()
        .filter(|e| !e.prefix.is_empty())
        .map(|e| e.prefix.clone());
    let mut ta = SimulatedTa::new(TaHandle::simulated(SimState::uniform(pool, 0)?))?;
    let targets: Vec<String> = examples.iter().map(|e| e.assistant().to_owned()).collect();
    let before = ta.state().mass(&targets, 1.0);
    ta.finetune(&file)?;
    let after = ta.state().mass(&targets, 1.0);
    println!("probability of proposing a target prefix: {before:.3} -> {after:.3}");
    println!("TA generation is now {}", ta.handle().generation);
    Ok(())
}
