//! Command-line front end: `synth`, `train`, `tune-thresholds`, `eval`,
//! `predict` and `verify`.
//!
//! Settings resolve as flag, then config file (TOML or JSON, sections
//! `model`, `contrastive`, `train`, `synth`), then built-in default. The
//! resolved settings are written to `config.json` in every output
//! directory.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, FeatureSpec};
use crate::data::{
    load_embeddings, load_jsonl, synth_generate, write_jsonl, Dataset, Example, LabelVocabulary,
    LoadOptions, SynthConfig,
};
use crate::error::{Error, Result};
use crate::losses::{ContrastiveConfig, WeightFn};
use crate::metrics::{evaluate, predict_all, EvalReport};
use crate::model::ModelConfig;
use crate::thresholds::{apply_threshold, ThresholdTable};
use crate::train::{probabilities_by_language, train, TrainConfig};
use crate::verify;

pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Feature width of the synthetic profile.
pub const SYNTHETIC_FEATURE_DIM: usize = 4096;
pub const SYNTHETIC_EPOCHS: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "framecl", version, about = "Multi-label contrastive framing classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multilingual corpus with planted labels.
    Synth(SynthArgs),
    /// Train a model and tune per-language thresholds on dev.
    Train(TrainArgs),
    /// Retune thresholds of a checkpoint on a dev file.
    TuneThresholds(TuneArgs),
    /// Score a labelled file.
    Eval(EvalArgs),
    /// Write label sets and probabilities for every example of a file.
    Predict(PredictArgs),
    /// Run the built-in property suite.
    Verify,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Output directory (default `runs/<unix-time>-seed<N>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML or JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Keep only the first N languages.
    #[arg(long)]
    pub languages: Option<usize>,
    /// Probability that a token is noise.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Toy encoder on synthetic data: 4096 hashed features, lr 1e-2.
    Synthetic,
    /// The settings used with a large pretrained encoder: lr 1e-6.
    PlmParity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WeightArg {
    Identity,
    Constant,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory with `train.jsonl`, `dev.jsonl` and optionally `labels.txt`.
    #[arg(long)]
    pub data: PathBuf,
    /// Precomputed title/body embeddings instead of hashed features.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Cross-entropy weight; 1 disables the contrastive term.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub weight_fn: Option<WeightArg>,
    /// Encode the whole article once instead of title and body.
    #[arg(long)]
    pub single_input: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub d_in: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub grid_step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Threshold table (default: the one stored in the checkpoint).
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

/// Config file contents; every section is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub profile: Option<Profile>,
    pub model: Option<ModelConfig>,
    pub contrastive: Option<ContrastiveConfig>,
    pub train: Option<TrainConfig>,
    pub synth: Option<SynthConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: path.into(),
                source,
            })
        } else {
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
        }
    }

    fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

/// Fully resolved settings of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub command: String,
    pub profile: Profile,
    pub data: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub model: ModelConfig,
    pub contrastive: ContrastiveConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthRunConfig {
    pub command: String,
    pub synth: SynthConfig,
}

/// Profile defaults, before file and flag overrides.
pub fn profile_defaults(profile: Profile) -> (ModelConfig, TrainConfig) {
    match profile {
        Profile::Synthetic => (
            ModelConfig {
                d_in: SYNTHETIC_FEATURE_DIM,
                ..Default::default()
            },
            TrainConfig {
                epochs: SYNTHETIC_EPOCHS,
                ..TrainConfig::synthetic()
            },
        ),
        Profile::PlmParity => (ModelConfig::default(), TrainConfig::plm_parity()),
    }
}

pub fn resolve_train(args: &TrainArgs) -> Result<TrainRunConfig> {
    let file = FileConfig::load_opt(args.common.config.as_deref())?;
    let profile = args.profile.or(file.profile).unwrap_or(Profile::Synthetic);
    let (default_model, default_train) = profile_defaults(profile);
    let mut model = file.model.unwrap_or(default_model);
    let mut contrastive = file.contrastive.unwrap_or_default();
    let mut train = file.train.unwrap_or(default_train);
    if let Some(seed) = args.common.seed {
        train.seed = seed;
        model.init_seed = seed;
    }
    if let Some(a) = args.alpha {
        train.alpha = a;
    }
    if let Some(w) = args.weight_fn {
        contrastive.weight_fn = match w {
            WeightArg::Identity => WeightFn::Identity,
            WeightArg::Constant => WeightFn::Constant,
        };
    }
    if args.single_input {
        model.single_input = true;
    }
    if let Some(e) = args.epochs {
        train.epochs = e;
    }
    if let Some(lr) = args.lr {
        train.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        train.batch_size = b;
    }
    if let Some(t) = args.temperature {
        contrastive.temperature = t;
    }
    if let Some(d) = args.d_in {
        model.d_in = d;
    }
    model.validate()?;
    contrastive.validate(model.num_labels)?;
    train.validate()?;
    Ok(TrainRunConfig {
        command: "train".into(),
        profile,
        data: args.data.clone(),
        embeddings: args.embeddings.clone(),
        model,
        contrastive,
        train,
    })
}

pub fn resolve_synth(args: &SynthArgs) -> Result<SynthRunConfig> {
    let file = FileConfig::load_opt(args.common.config.as_deref())?;
    let mut synth = file.synth.unwrap_or_default();
    if let Some(seed) = args.common.seed {
        synth.seed = seed;
    }
    if let Some(n) = args.languages {
        if n == 0 || n > synth.languages.len() {
            return Err(Error::config(format!(
                "--languages must be in 1..={}",
                synth.languages.len()
            )));
        }
        synth.languages.truncate(n);
    }
    if let Some(noise) = args.noise {
        synth.noise = noise;
    }
    synth.validate()?;
    Ok(SynthRunConfig {
        command: "synth".into(),
        synth,
    })
}

fn out_dir(requested: Option<&Path>, seed: u64) -> Result<PathBuf> {
    let dir = match requested {
        Some(p) => p.to_path_buf(),
        None => {
            let ts = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            PathBuf::from("runs").join(format!("{ts}-seed{seed}"))
        }
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_vocabulary(data_dir: &Path) -> Result<LabelVocabulary> {
    let path = data_dir.join("labels.txt");
    if path.exists() {
        LabelVocabulary::load(&path)
    } else {
        Ok(LabelVocabulary::default())
    }
}

/// Build features for `examples` the way the checkpoint expects. With an
/// embedding file, examples lacking an entry are dropped and counted.
fn build_dataset(
    examples: Vec<Example>,
    embeddings: Option<&Path>,
    d_in: usize,
) -> Result<(Dataset, Vec<String>)> {
    match embeddings {
        None => Ok((Dataset::hashed(examples, d_in)?, Vec::new())),
        Some(path) => {
            let table = load_embeddings(path)?;
            let (kept, missing): (Vec<Example>, Vec<Example>) =
                examples.into_iter().partition(|e| table.contains_key(&e.id));
            let missing: Vec<String> = missing.into_iter().map(|e| e.id).collect();
            for id in &missing {
                log::error!("example {id}: no embedding in {}", path.display());
            }
            Ok((Dataset::from_embedding_table(kept, &table)?, missing))
        }
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<PathBuf> {
    let cfg = resolve_synth(args)?;
    let dir = out_dir(args.common.out.as_deref(), cfg.synth.seed)?;
    let corpus = synth_generate(&cfg.synth)?;
    let vocab = LabelVocabulary::placeholder(cfg.synth.num_labels);
    write_jsonl(&dir.join("train.jsonl"), &corpus.train, &vocab)?;
    write_jsonl(&dir.join("dev.jsonl"), &corpus.dev, &vocab)?;
    write_jsonl(&dir.join("test.jsonl"), &corpus.test, &vocab)?;
    vocab.save(&dir.join("labels.txt"))?;
    write_json(&dir.join("manifest.json"), &corpus.manifest)?;
    write_json(&dir.join("config.json"), &cfg)?;
    log::info!(
        "wrote {} train / {} dev / {} test examples to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        dir.display()
    );
    Ok(dir)
}

pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let cfg = resolve_train(args)?;
    let vocab = read_vocabulary(&cfg.data)?;
    if vocab.len() != cfg.model.num_labels {
        return Err(Error::config(format!(
            "{} labels in the vocabulary but the model has {}",
            vocab.len(),
            cfg.model.num_labels
        )));
    }
    let train_ex = load_jsonl(&cfg.data.join("train.jsonl"), &vocab, LoadOptions::default())?;
    let dev_ex = load_jsonl(&cfg.data.join("dev.jsonl"), &vocab, LoadOptions::default())?;
    let mut model_cfg = cfg.model.clone();
    let (train_set, dev_set) = match &cfg.embeddings {
        None => (
            Dataset::hashed(train_ex, model_cfg.d_in)?,
            Dataset::hashed(dev_ex, model_cfg.d_in)?,
        ),
        Some(path) => {
            let (t, d) = (Dataset::with_embeddings(train_ex, path)?, Dataset::with_embeddings(dev_ex, path)?);
            model_cfg.d_in = t.dim;
            (t, d)
        }
    };
    let dir = out_dir(args.common.out.as_deref(), cfg.train.seed)?;
    let resolved = TrainRunConfig {
        model: model_cfg.clone(),
        ..cfg.clone()
    };
    write_json(&dir.join("config.json"), &resolved)?;

    let outcome = train(&train_set, &dev_set, &model_cfg, &cfg.contrastive, &cfg.train)?;
    outcome.report.write_jsonl(&dir.join("metrics.jsonl"))?;
    outcome.thresholds.save(&dir.join("thresholds.json"))?;
    let ck = Checkpoint::new(
        &outcome.params,
        model_cfg,
        cfg.contrastive.clone(),
        cfg.train.clone(),
        &vocab,
        FeatureSpec {
            source: train_set.source,
            dim: train_set.dim,
        },
        Some(outcome.thresholds.clone()),
        Some(outcome.report.selected_epoch),
    );
    ck.save(&dir.join("checkpoint.json"))?;
    log::info!(
        "selected epoch {} (dev mean micro-F1 {:.4}); outputs in {}",
        outcome.report.selected_epoch,
        outcome.report.best_dev_mean_f1,
        dir.display()
    );
    Ok(dir)
}

fn load_split(path: &Path, vocab: &LabelVocabulary, allow_empty: bool) -> Result<Vec<Example>> {
    load_jsonl(
        path,
        vocab,
        LoadOptions {
            allow_empty_labels: allow_empty,
        },
    )
}

fn check_embeddings_flag(ck: &Checkpoint, embeddings: Option<&Path>) -> Result<()> {
    use crate::data::FeatureSource;
    match (ck.features.source, embeddings) {
        (FeatureSource::External, None) => Err(Error::usage(
            "checkpoint was trained on external embeddings; pass --embeddings",
        )),
        (FeatureSource::Hashed, Some(_)) => Err(Error::usage(
            "checkpoint uses hashed features; --embeddings does not apply",
        )),
        _ => Ok(()),
    }
}

pub fn cmd_tune_thresholds(args: &TuneArgs) -> Result<PathBuf> {
    let mut ck = Checkpoint::load(&args.checkpoint)?;
    check_embeddings_flag(&ck, args.embeddings.as_deref())?;
    let vocab = ck.vocabulary()?;
    let params = ck.params()?;
    let dev = load_split(&args.dev, &vocab, false)?;
    let (dev, _) = build_dataset(dev, args.embeddings.as_deref(), ck.model.d_in)?;
    let step = args.grid_step.unwrap_or(ck.train.grid_step);
    let by_lang = probabilities_by_language(&dev, &params, &ck.model)?;
    let table = ThresholdTable::tune(
        by_lang.iter().map(|(l, p, g)| (l.as_str(), p.clone(), g.clone())),
        step,
    )?;
    let dir = out_dir(args.out.as_deref(), ck.seed)?;
    write_json(
        &dir.join("config.json"),
        &serde_json::json!({
            "command": "tune-thresholds",
            "checkpoint": args.checkpoint,
            "dev": args.dev,
            "embeddings": args.embeddings,
            "grid_step": step,
        }),
    )?;
    table.save(&dir.join("thresholds.json"))?;
    ck.thresholds = Some(table.clone());
    ck.save(&dir.join("checkpoint.json"))?;
    for (lang, t) in &table.per_language {
        log::info!("{lang}: {t:.2}");
    }
    log::info!("zero-shot: {:.2}", table.zero_shot);
    Ok(dir)
}

fn threshold_table(ck: &Checkpoint, path: Option<&Path>) -> Result<ThresholdTable> {
    match path {
        Some(p) => ThresholdTable::load(p),
        None => ck
            .thresholds
            .clone()
            .ok_or_else(|| Error::usage("checkpoint has no thresholds; pass --thresholds")),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(PathBuf, EvalReport)> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    check_embeddings_flag(&ck, args.embeddings.as_deref())?;
    let vocab = ck.vocabulary()?;
    let params = ck.params()?;
    let table = threshold_table(&ck, args.thresholds.as_deref())?;
    let examples = load_split(&args.data, &vocab, true)?;
    let (data, missing) = build_dataset(examples, args.embeddings.as_deref(), ck.model.d_in)?;
    let mut report = evaluate(&data, &params, &ck.model, &table, vocab.names())?;
    report.failures += missing.len();
    let dir = out_dir(args.out.as_deref(), ck.seed)?;
    write_json(
        &dir.join("config.json"),
        &serde_json::json!({
            "command": "eval",
            "checkpoint": args.checkpoint,
            "data": args.data,
            "thresholds": args.thresholds,
            "embeddings": args.embeddings,
        }),
    )?;
    write_json(&dir.join("report.json"), &report)?;
    let table_path = dir.join("report.tsv");
    std::fs::write(&table_path, report.language_table()).map_err(|e| Error::io(&table_path, e))?;
    Ok((dir, report))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub language: String,
    pub labels: Vec<String>,
    pub probabilities: BTreeMap<String, f64>,
    pub threshold: f64,
    pub zero_shot: bool,
}

pub fn cmd_predict(args: &PredictArgs) -> Result<PathBuf> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    check_embeddings_flag(&ck, args.embeddings.as_deref())?;
    let vocab = ck.vocabulary()?;
    let params = ck.params()?;
    let table = threshold_table(&ck, args.thresholds.as_deref())?;
    let examples = load_split(&args.data, &vocab, true)?;
    let (data, _) = build_dataset(examples, args.embeddings.as_deref(), ck.model.d_in)?;
    let dir = out_dir(args.out.as_deref(), ck.seed)?;
    let mut out = Vec::new();
    for (ex, probs) in data.examples.iter().zip(predict_all(&data, &params, &ck.model)) {
        let probs = match probs {
            Ok(p) => p,
            Err(e) => {
                log::error!("example {}: {e}", ex.id);
                continue;
            }
        };
        let (threshold, zero_shot) = table.threshold_for(&ex.language);
        let predicted = apply_threshold(std::slice::from_ref(&probs), threshold).remove(0);
        let record = PredictionRecord {
            id: ex.id.clone(),
            language: ex.language.clone(),
            labels: vocab.names_of(&predicted),
            probabilities: vocab.names().iter().cloned().zip(probs).collect(),
            threshold,
            zero_shot,
        };
        serde_json::to_writer(&mut out, &record).expect("in-memory write");
        out.push(b'\n');
    }
    let path = dir.join("predictions.jsonl");
    std::fs::File::create(&path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parse arguments, run one command and map the outcome to an exit code.
pub fn run(cli: Cli) -> ExitCode {
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(|d| println!("{}", d.display())),
        Command::Train(a) => cmd_train(a).map(|d| println!("{}", d.display())),
        Command::TuneThresholds(a) => cmd_tune_thresholds(a).map(|d| println!("{}", d.display())),
        Command::Eval(a) => cmd_eval(a).map(|(d, r)| {
            print!("{}", r.language_table());
            println!("macro_f1\t{:.6}", r.macro_f1);
            if r.failures > 0 {
                println!("failures\t{}", r.failures);
            }
            println!("{}", d.display());
        }),
        Command::Predict(a) => cmd_predict(a).map(|d| println!("{}", d.display())),
        Command::Verify => {
            let report = verify::run_all();
            print!("{}", report.table());
            if !report.all_passed() {
                eprintln!("failed: {}", report.failed().join(", "));
                return ExitCode::from(EXIT_VERIFY_FAILED);
            }
            return ExitCode::SUCCESS;
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
