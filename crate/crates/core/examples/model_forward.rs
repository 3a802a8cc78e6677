//! Forward a batch through the dual-input encoder in train and eval mode.
//!
//!     cargo run --example model_forward

use framecl::data::{synth_generate, Dataset, SynthConfig};
use framecl::dcore::Graph;
use framecl::model::{forward_batch, BatchInput, ModelConfig, ModelParams, Mode, ParamVars};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> framecl::Result<()> {
    let corpus = synth_generate(&SynthConfig::default())?;
    let cfg = ModelConfig { d_in: 1024, ..Default::default() };
    let data = Dataset::hashed(corpus.dev, cfg.d_in)?;
    let params = ModelParams::init(&cfg)?;
    println!("{} parameters", params.num_values());

    let batch = BatchInput::gather(&data, &[0, 1, 2, 3], &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for mode in [Mode::Eval, Mode::Train] {
        let mut g = Graph::new();
        let vars = ParamVars::register(&mut g, &params);
        let out = forward_batch(&mut g, &vars, &batch, &cfg, mode, &mut rng)?;
        println!(
            "{mode:?}: X1 {:?}, y1 {:?}, y2 {:?}, rows from examples {:?}",
            g.value(out.x1).shape(),
            g.value(out.y1).shape(),
            g.value(out.y2).shape(),
            out.view_of
        );
    }
    Ok(())
}
