//! Per-language threshold search and the zero-shot fallback.
//!
//!     cargo run --example thresholds

use framecl::losses::LabelSet;
use framecl::thresholds::{apply_threshold, ThresholdTable};

fn main() -> framecl::Result<()> {
    let ls = |v: &[usize]| LabelSet::new(v.iter().copied());
    let en = (vec![vec![0.9, 0.1], vec![0.4, 0.8]], vec![ls(&[0]), ls(&[1])]);
    let fr = (vec![vec![0.7, 0.35], vec![0.2, 0.6], vec![0.55, 0.5]], vec![ls(&[0]), ls(&[1]), ls(&[0, 1])]);
    let de = (vec![vec![0.15, 0.3], vec![0.25, 0.05]], vec![ls(&[1]), ls(&[0])]);

    let table = ThresholdTable::tune(
        [("en", en.0.clone(), en.1), ("fr", fr.0, fr.1), ("de", de.0, de.1)],
        0.01,
    )?;
    for (lang, t) in &table.per_language {
        println!("{lang}: {t:.2}");
    }
    println!("zero-shot: {:.2}", table.zero_shot);

    let (theta, zero_shot) = table.threshold_for("ka");
    println!("ka routed to {theta:.2} (zero-shot: {zero_shot})");
    println!("en predictions: {:?}", apply_threshold(&en.0, table.threshold_for("en").0));
    Ok(())
}
