//! Compare the full objective with its ablations on the synthetic corpus:
//! no contrastive term, constant negative weights, and single input.
//!
//!     cargo run --release --example ablations -- [epochs]

use framecl::data::{synth_generate, Dataset, SynthConfig};
use framecl::losses::{ContrastiveConfig, WeightFn};
use framecl::metrics::evaluate;
use framecl::model::ModelConfig;
use framecl::train::{train, TrainConfig};

fn main() -> framecl::Result<()> {
    let epochs = std::env::args().nth(1).map_or(10, |s| s.parse().expect("epochs"));
    let corpus = synth_generate(&SynthConfig::default())?;
    let d_in = 4096;
    let splits = [&corpus.train, &corpus.dev, &corpus.test].map(|s| Dataset::hashed(s.clone(), d_in));
    let [tr, dev, test] = splits;
    let (tr, dev, test) = (tr?, dev?, test?);
    let names = framecl::data::LabelVocabulary::default().names().to_vec();

    let base_model = ModelConfig { d_in, ..Default::default() };
    let base_train = TrainConfig { epochs, ..TrainConfig::synthetic() };
    let variants = [
        ("full", base_model.clone(), ContrastiveConfig::default(), base_train.clone()),
        ("no contrastive", base_model.clone(), ContrastiveConfig::default(), TrainConfig { alpha: 1.0, ..base_train.clone() }),
        (
            "W = 1",
            base_model.clone(),
            ContrastiveConfig { weight_fn: WeightFn::Constant, ..Default::default() },
            base_train.clone(),
        ),
        ("single input", ModelConfig { single_input: true, ..base_model }, ContrastiveConfig::default(), base_train),
    ];
    println!("{:<16} {:>8} {:>8}", "variant", "dev", "test");
    for (name, m, c, t) in variants {
        let out = train(&tr, &dev, &m, &c, &t)?;
        let d = evaluate(&dev, &out.params, &m, &out.thresholds, &names)?;
        let r = evaluate(&test, &out.params, &m, &out.thresholds, &names)?;
        println!("{name:<16} {:>8.4} {:>8.4}", d.micro_f1, r.micro_f1);
    }
    Ok(())
}
