//! Train the hashed-feature student for a few passes and see how prefixes
//! shift its predictions.

use gpta::dataset::{split, synth_generate, synth_keyword};
use gpta::history::score_prefix;
use gpta::metrics::MetricKind;
use gpta::student::StudentParams;

fn main() -> gpta::Result<()> {
    let corpus = synth_generate(2, 400, 200, 0.1, 1)?;
    let (train, val, _) = split(&corpus, [0.8, 0.1, 0.1], 1)?;

    let mut student = StudentParams::zeros(2, 1 << 16)?;
    for pass in 0..3 {
        let loss = student.train_pass(&train, "", 0.1, 0, pass)?;
        println!("pass {pass}: mean training loss {loss:.4}");
    }
    student.freeze();

    // The second prefix repeats class 1 keywords, so it drags every input
    // toward class 1.
    let skewed = format!(
        "{} {} {}",
        synth_keyword(1, 0),
        synth_keyword(1, 1),
        synth_keyword(1, 2)
    );
    for prefix in ["", "Read carefully and decide", skewed.as_str()] {
        let acc = score_prefix(&student, prefix, &val, MetricKind::Accuracy, 0)?;
        let f1 = score_prefix(&student, prefix, &val, MetricKind::MacroF1, 0)?;
        let nll = score_prefix(&student, prefix, &val, MetricKind::NegMeanLoss, 0)?;
        println!("{prefix:>28?}  accuracy {acc:.3}  macro-F1 {f1:.3}  neg loss {nll:.3}");
    }

    let text = &val.examples()[0].text;
    println!("\"{text}\" -> class {}", student.predict("", text, 0));
    Ok(())
}
