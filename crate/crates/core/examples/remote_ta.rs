//! Ask an OpenAI-compatible endpoint for prefix proposals.
//!
//!     GPTA_BASE_URL=https://api.openai.com GPTA_MODEL=gpt-4o-mini \
//!     GPTA_API_KEY=... cargo run --example remote_ta
//!
//! Set GPTA_FINETUNE_FILE to a dialogue-gradient JSONL file to also start a
//! fine-tuning job and wait for it.

use gpta::dataset::{DatasetDescription, ExemplarSet};
use gpta::history::{Origin, ScoredPrefix};
use gpta::ta::{
    render_generation_request, MetaPrompt, RemoteConfig, RemoteTa, TaHandle, TeachingAssistant,
    DEFAULT_INSTRUCTION,
};

fn main() -> gpta::Result<()> {
    env_logger::init();
    let (Ok(base_url), Ok(model)) = (std::env::var("GPTA_BASE_URL"), std::env::var("GPTA_MODEL"))
    else {
        eprintln!("set GPTA_BASE_URL and GPTA_MODEL (and GPTA_API_KEY) to run this example");
        return Ok(());
    };
    let mut config = RemoteConfig::new(base_url);
    config.poll_interval_ms = 30_000;
    let mut ta = RemoteTa::new(config, TaHandle::remote(model))?;

    let meta = MetaPrompt::new(
        DEFAULT_INSTRUCTION,
        DatasetDescription::new(
            "movie reviews",
            "Decide whether a review is positive or negative.",
            vec!["negative".into(), "positive".into()],
        )?,
        ExemplarSet::default(),
    )?;
    let history = [("", 0.81), ("Read the review carefully", 0.83)].map(|(p, s)| ScoredPrefix {
        prefix: p.into(),
        score: s,
        origin: Origin::Seed,
    });
    let request = render_generation_request(&meta, &history, 4);
    for prefix in ta.generate(&request, 4, 1.0)? {
        println!("{prefix}");
    }

    if let Ok(path) = std::env::var("GPTA_FINETUNE_FILE") {
        let file = std::fs::read(&path).map_err(|e| gpta::Error::Io {
            path: path.into(),
            source: e,
        })?;
        ta.finetune(&file)?;
        println!("fine-tuned model: {:?}", ta.handle().model_id());
    }
    Ok(())
}
