//! The three contrastive losses on a toy batch, and how the label-distance
//! weight changes the multi-label loss.
//!
//!     cargo run --example contrastive_losses

use framecl::dcore::{DArray, Graph};
use framecl::losses::{multilabel_supcon, nt_xent, supcon, ContrastiveConfig, LabelSet, WeightFn};

fn value(z: &DArray, f: impl Fn(&mut Graph, framecl::dcore::Var) -> framecl::Result<framecl::dcore::Var>) -> f64 {
    let mut g = Graph::new();
    let v = g.constant(z.clone());
    let out = f(&mut g, v).expect("valid batch");
    g.scalar(out)
}

fn main() {
    // rows (0,1) and (2,3) are view pairs
    let z = DArray::from_rows(&[
        vec![1.0, 0.1, 0.0],
        vec![0.9, 0.2, 0.1],
        vec![0.0, 1.0, 0.3],
        vec![0.1, 0.8, 0.5],
    ])
    .unwrap();
    // negatives-only denominators: a well-separated batch goes below zero
    let cfg = ContrastiveConfig::default();

    println!("nt_xent           {:.4}", value(&z, |g, v| Ok(nt_xent(g, v, &cfg)?.loss)));

    let classes = [0, 0, 1, 1].map(|c| LabelSet::new([c]));
    println!("supcon            {:.4}", value(&z, |g, v| Ok(supcon(g, v, &classes, &cfg)?.loss)));

    let frames = [vec![1], vec![1], vec![2, 3], vec![2, 3]].map(LabelSet::new);
    for wf in [WeightFn::Identity, WeightFn::Constant] {
        let c = ContrastiveConfig { weight_fn: wf.clone(), ..cfg.clone() };
        println!(
            "multilabel {:<8} {:.4}",
            format!("{wf:?}"),
            value(&z, |g, v| Ok(multilabel_supcon(g, v, &frames, &c)?.loss))
        );
    }

    // identical embeddings leave only the counting structure
    let same = DArray::from_rows(&vec![vec![0.3, 0.4, 0.5]; 4]).unwrap();
    let l = value(&same, |g, v| Ok(multilabel_supcon(g, v, &frames, &cfg)?.loss));
    println!("identical rows: {l:.6} (ln 6 = {:.6})", 6f64.ln());
}
