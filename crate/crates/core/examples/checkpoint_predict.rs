//! Train briefly, save a checkpoint, load it back and predict.
//!
//!     cargo run --release --example checkpoint_predict

use framecl::checkpoint::{Checkpoint, FeatureSpec};
use framecl::data::{synth_generate, Dataset, LabelVocabulary, SynthConfig};
use framecl::losses::ContrastiveConfig;
use framecl::metrics::predict_all;
use framecl::model::ModelConfig;
use framecl::thresholds::apply_threshold;
use framecl::train::{train, TrainConfig};

fn main() -> framecl::Result<()> {
    let mut synth = SynthConfig::default();
    synth.languages.truncate(2);
    let corpus = synth_generate(&synth)?;
    let model = ModelConfig { d_in: 1024, ..Default::default() };
    let tr = Dataset::hashed(corpus.train, model.d_in)?;
    let dev = Dataset::hashed(corpus.dev, model.d_in)?;
    let cfg = TrainConfig { epochs: 3, ..TrainConfig::synthetic() };
    let out = train(&tr, &dev, &model, &ContrastiveConfig::default(), &cfg)?;

    let vocab = LabelVocabulary::default();
    let path = std::env::temp_dir().join("framecl-example-checkpoint.json");
    Checkpoint::new(
        &out.params,
        model,
        ContrastiveConfig::default(),
        cfg,
        &vocab,
        FeatureSpec { source: tr.source, dim: tr.dim },
        Some(out.thresholds),
        Some(out.report.selected_epoch),
    )
    .save(&path)?;

    let ck = Checkpoint::load(&path)?;
    let params = ck.params()?;
    let table = ck.thresholds.clone().expect("thresholds saved");
    let test = Dataset::hashed(corpus.test, ck.model.d_in)?;
    for (ex, probs) in test.examples.iter().zip(predict_all(&test, &params, &ck.model)).take(5) {
        let (theta, _) = table.threshold_for(&ex.language);
        let pred = apply_threshold(&[probs?], theta).remove(0);
        println!("{}  predicted {:?}  gold {:?}", ex.id, vocab.names_of(&pred), vocab.names_of(&ex.labels));
    }
    println!("checkpoint written to {}", path.display());
    Ok(())
}
