//! Generate a keyword-planted corpus, split it and write it as JSONL.
//!
//!     cargo run --example synth_dataset -- /tmp/synth.jsonl

use gpta::dataset::{split, synth_generate};

fn main() -> gpta::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "synth.jsonl".into());

    let corpus = synth_generate(3, 200, 200, 0.1, 42)?;
    corpus.write_jsonl(&out)?;
    println!("wrote {} examples to {out}", corpus.len());

    for ex in corpus.examples().iter().take(3) {
        println!("  [{}] {}", ex.label, ex.text);
    }

    let (train, val, test) = split(&corpus, [0.8, 0.1, 0.1], 42)?;
    println!(
        "split: train {} / validation {} / test {}",
        train.len(),
        val.len(),
        test.len()
    );

    let mut counts = vec![0usize; corpus.class_count()];
    for label in train.labels() {
        counts[label] += 1;
    }
    println!("train labels per class: {counts:?}");
    Ok(())
}
