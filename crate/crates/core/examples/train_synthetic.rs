//! Train on a generated corpus and report dev and test micro-F1.
//!
//!     cargo run --release --example train_synthetic -- [epochs]

use framecl::data::{synth_generate, Dataset, SynthConfig};
use framecl::losses::ContrastiveConfig;
use framecl::model::ModelConfig;
use framecl::thresholds::apply_threshold;
use framecl::train::{probabilities_by_language, train, TrainConfig};

fn main() -> framecl::Result<()> {
    let epochs = std::env::args().nth(1).map_or(8, |s| s.parse().expect("epochs"));
    let corpus = synth_generate(&SynthConfig::default())?;
    let model_cfg = ModelConfig {
        d_in: 4096,
        ..Default::default()
    };
    let train_set = Dataset::hashed(corpus.train, model_cfg.d_in)?;
    let dev = Dataset::hashed(corpus.dev, model_cfg.d_in)?;
    let test = Dataset::hashed(corpus.test, model_cfg.d_in)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::synthetic()
    };

    let t0 = std::time::Instant::now();
    let out = train(&train_set, &dev, &model_cfg, &ContrastiveConfig::default(), &cfg)?;
    for e in &out.report.epochs {
        println!(
            "epoch {:>2}  loss {:.4}  cl {:.4}  ce {:.4}  dev {:.4}",
            e.epoch, e.mean_loss, e.mean_l_cl, e.mean_l_ce, e.dev_mean_f1
        );
    }
    println!("selected epoch {} in {:.1?}", out.report.selected_epoch, t0.elapsed());

    for (lang, probs, gold) in probabilities_by_language(&test, &out.params, &model_cfg)? {
        let (theta, _) = out.thresholds.threshold_for(&lang);
        let preds = apply_threshold(&probs, theta);
        let f1 = framecl::metrics::micro_f1(&preds, &gold)?;
        println!("test {lang}  theta {theta:.2}  micro-F1 {f1:.4}");
    }
    Ok(())
}
