//! Full offline run with the simulated TA, then the CSV/SVG report.
//!
//!     cargo run --release --example simulated_run -- /tmp/gpta-demo

use std::path::PathBuf;

use gpta::report::emit_report;
use gpta::trainer::{run, DataConfig, RunConfig, SynthSpec};

fn main() -> gpta::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "gpta-demo".into()),
    );

    let mut cfg = RunConfig::new(DataConfig::synthetic(SynthSpec {
        classes: 2,
        per_class: 500,
        vocab: 200,
        noise: 0.1,
        seed: 7,
    }));
    cfg.epochs = 3;
    cfg.k = 16;
    cfg.dims = 1 << 15;
    cfg.seed = 7;

    let outcome = run(&cfg, Some(&out), None)?;
    for r in &outcome.report.epochs {
        println!(
            "epoch {}: trained with {:?}, best {:.3} ({:?}), no prefix {:.3}, improvement rate {:.3}",
            r.epoch, r.train_prefix, r.val_best, r.best_prefix, r.val_empty, r.improvement_rate
        );
    }
    let report = emit_report(&out, &out)?;
    println!(
        "best prefix {:?} from epoch {}; TA generation {}; charts in {}",
        report.best.prefix,
        report.best.epoch,
        report.final_ta_generation,
        out.display()
    );
    Ok(())
}
