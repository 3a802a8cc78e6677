//! Generate the synthetic corpus and score the Bayes-optimal predictor.
//!
//!     cargo run --example synth_corpus -- [seed]

use std::collections::BTreeMap;

use framecl::data::{synth_generate, SynthConfig};
use framecl::losses::LabelSet;
use framecl::metrics::micro_f1;

fn main() -> framecl::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let cfg = SynthConfig { seed, ..Default::default() };
    let corpus = synth_generate(&cfg)?;

    let mut counts: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for (k, split) in [&corpus.train, &corpus.dev, &corpus.test].into_iter().enumerate() {
        for e in split {
            counts.entry(e.language.as_str()).or_default()[k] += 1;
        }
    }
    println!("lang  train  dev  test");
    for (lang, [tr, dv, ts]) in &counts {
        println!("{lang:<4} {tr:>6} {dv:>4} {ts:>5}");
    }

    let e = &corpus.train[0];
    println!("\n{} {:?}\n  title: {}\n  labels: {}", e.id, e.language, e.title, e.labels);

    let preds: Vec<LabelSet> = corpus.test.iter().map(|e| corpus.manifest.bayes_optimal(e)).collect();
    let gold: Vec<LabelSet> = corpus.test.iter().map(|e| e.labels.clone()).collect();
    println!("\nBayes-optimal test micro-F1: {:.4}", micro_f1(&preds, &gold)?);
    Ok(())
}
