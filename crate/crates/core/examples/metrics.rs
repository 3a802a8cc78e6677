//! Micro, macro and per-label scores for a handful of predictions.
//!
//!     cargo run --example metrics

use framecl::losses::LabelSet;
use framecl::metrics::{aggregate, macro_f1, micro_f1, Scored};

fn main() -> framecl::Result<()> {
    let ls = |v: &[usize]| LabelSet::new(v.iter().copied());
    let gold = vec![ls(&[0, 1]), ls(&[2]), ls(&[1]), ls(&[0])];
    let pred = vec![ls(&[0, 1, 3]), LabelSet::empty(), ls(&[1]), ls(&[0, 2])];
    println!("micro-F1 {:.4}", micro_f1(&pred, &gold)?);
    println!("macro-F1 {:.4}", macro_f1(&pred, &gold, 4)?);

    let names: Vec<String> = ["Economic", "Legality", "Health", "Security"].map(String::from).to_vec();
    let scored: Vec<Scored> = pred
        .into_iter()
        .zip(gold)
        .enumerate()
        .map(|(i, (predicted, gold))| Scored {
            language: if i < 2 { "en" } else { "it" }.into(),
            threshold: 0.3,
            zero_shot: false,
            predicted,
            gold,
        })
        .collect();
    let report = aggregate(&scored, &names, 0);
    print!("{}", report.language_table());
    for l in &report.per_label {
        println!("{:<10} p {:.2} r {:.2} f1 {:.2} support {}", l.name, l.precision, l.recall, l.f1, l.support);
    }
    Ok(())
}
