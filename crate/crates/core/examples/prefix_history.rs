//! Grow a score-sorted prefix history with the simulated TA.

use gpta::dataset::{split, synth_generate, DatasetDescription, ExemplarSet};
use gpta::history::{collect, seed_history, CollectParams, Scorer};
use gpta::metrics::MetricKind;
use gpta::student::StudentParams;
use gpta::ta::{MetaPrompt, SimState, SimulatedTa, TaHandle, DEFAULT_INSTRUCTION};
use gpta::trainer::DEFAULT_SIM_POOL;

fn main() -> gpta::Result<()> {
    let corpus = synth_generate(2, 300, 200, 0.2, 9)?;
    let (train, val, _) = split(&corpus, [0.8, 0.1, 0.1], 9)?;
    let mut student = StudentParams::zeros(2, 1 << 14)?;
    student.train_pass(&train, "Classify the following text", 0.1, 0, 0)?;
    student.freeze();

    let scorer = Scorer {
        student: &student,
        eval_set: &val,
        kind: MetricKind::NegMeanLoss,
        hash_seed: 0,
    };
    let meta = MetaPrompt::new(
        DEFAULT_INSTRUCTION,
        DatasetDescription::new("synthetic", "Assign each text one of two labels.", vec![])?,
        ExemplarSet::default(),
    )?;
    let mut ta = SimulatedTa::new(TaHandle::simulated(SimState::uniform(
        DEFAULT_SIM_POOL.iter().copied(),
        3,
    )?))?;

    let start = seed_history(&scorer, &["Classify the following text".to_string()])?;
    let params = CollectParams {
        k: 12,
        l: 4,
        temperature: 1.0,
        epoch: 0,
    };
    let (history, rounds) = collect(&mut ta, &meta, &scorer, start, params)?;

    for r in &rounds {
        println!(
            "round {}: {} proposed, {} beat the best so far",
            r.round, r.generated, r.exceeded
        );
    }
    println!("\nhistory, lowest to highest:");
    for e in history.entries() {
        println!("  {:+.4}  {:?}", e.score, e.prefix);
    }
    Ok(())
}
