//! Corpora, featurization and the synthetic multilingual generator.
//!
//! # File formats
//!
//! * Corpus: JSON lines, one article per line:
//!   `{"id": "...", "language": "en", "title": "...", "body": "...", "labels": ["F01", "F07"]}`
//! * Embeddings: JSON lines `{"id": "...", "title_vec": [..], "body_vec": [..]}`
//! * Vocabulary: one label name per line; line order defines label indices.
//!
//! # Hashed features
//!
//! Text is lowercased and split into words at every non-alphanumeric
//! character. Each word contributes the feature `w:<word>` and each of its
//! character 3-, 4- and 5-grams contributes `c:<gram>`. Feature strings are
//! hashed with 64-bit FNV-1a (offset `0xcbf29ce484222325`, prime
//! `0x100000001b3`) over their UTF-8 bytes; the bucket is the hash modulo
//! `d_in` (a power of two). Bucket counts are L2-normalized.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LabelSet;

pub const DEFAULT_NUM_LABELS: usize = 14;
pub const DEFAULT_FEATURE_DIM: usize = 1 << 14;

/// Ordered label names; position is the label index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    names: Vec<String>,
}

impl Default for LabelVocabulary {
    fn default() -> Self {
        Self::placeholder(DEFAULT_NUM_LABELS)
    }
}

impl LabelVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::config("label vocabulary needs at least 2 labels"));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(Error::config("empty label name in vocabulary"));
            }
            if !seen.insert(n) {
                return Err(Error::config(format!("duplicate label name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    /// `F01`, `F02`, … `Fnn`.
    pub fn placeholder(n: usize) -> Self {
        Self {
            names: (1..=n).map(|i| format!("F{i:02}")).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.names.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names_of(&self, labels: &LabelSet) -> Vec<String> {
        labels.iter().map(|l| self.names[l].clone()).collect()
    }
}

/// One article.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub language: String,
    pub title: String,
    pub body: String,
    pub labels: LabelSet,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    language: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    body: String,
    #[serde(default)]
    labels: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Admit examples with no labels (prediction inputs, robustness tests).
    pub allow_empty_labels: bool,
}

/// Read a JSON-lines corpus. Blank lines are ignored.
pub fn load_jsonl(path: &Path, vocab: &LabelVocabulary, opts: LoadOptions) -> Result<Vec<Example>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if rec.language.is_empty() {
            return Err(parse_err(lineno, "empty language tag".into()));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(parse_err(lineno, format!("duplicate id {:?}", rec.id)));
        }
        let mut labels = LabelSet::empty();
        for name in &rec.labels {
            let idx = vocab
                .index_of(name)
                .ok_or_else(|| parse_err(lineno, format!("unknown label {name:?}")))?;
            labels.insert(idx);
        }
        if labels.is_empty() && !opts.allow_empty_labels {
            return Err(parse_err(lineno, format!("example {:?} has no labels", rec.id)));
        }
        out.push(Example {
            id: rec.id,
            language: rec.language,
            title: rec.title,
            body: rec.body,
            labels,
        });
    }
    if out.is_empty() {
        log::warn!("{}: corpus is empty", path.display());
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, examples: &[Example], vocab: &LabelVocabulary) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let rec = Record {
            id: ex.id.clone(),
            language: ex.language.clone(),
            title: ex.title.clone(),
            body: ex.body.clone(),
            labels: vocab.names_of(&ex.labels),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Sparse feature vector with sorted, unique indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn from_dense(v: &[f64]) -> Self {
        let (indices, values) = v
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, &x)| (i as u32, x))
            .unzip();
        Self { indices, values }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        self.scatter_into(&mut v);
        v
    }

    pub fn scatter_into(&self, row: &mut [f64]) {
        for (&i, &x) in self.indices.iter().zip(&self.values) {
            row[i as usize] = x;
        }
    }

    /// True when every index is below `dim`.
    pub fn fits(&self, dim: usize) -> bool {
        self.indices.last().is_none_or(|&i| (i as usize) < dim)
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Element-wise mean of two vectors.
    pub fn mean(a: &SparseVec, b: &SparseVec) -> SparseVec {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for v in [a, b] {
            for (&i, &x) in v.indices.iter().zip(&v.values) {
                *acc.entry(i).or_default() += 0.5 * x;
            }
        }
        let (indices, values) = acc.into_iter().filter(|(_, x)| *x != 0.0).unzip();
        SparseVec { indices, values }
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Hashed word-unigram and character 3–5-gram counts, L2-normalized.
pub fn featurize(text: &str, d_in: usize) -> SparseVec {
    assert!(d_in.is_power_of_two(), "feature dimension must be a power of two");
    let mask = (d_in - 1) as u64;
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let mut bump = |feature: &str| {
        *counts.entry((fnv1a64(feature.as_bytes()) & mask) as u32).or_default() += 1.0;
    };
    let mut buf = String::new();
    for word in words(text) {
        buf.clear();
        buf.push_str("w:");
        buf.push_str(&word);
        bump(&buf);
        let chars: Vec<char> = word.chars().collect();
        for n in 3..=5 {
            for gram in chars.windows(n) {
                buf.clear();
                buf.push_str("c:");
                buf.extend(gram);
                bump(&buf);
            }
        }
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    let (indices, values) = counts.into_iter().map(|(i, c)| (i, c / norm)).unzip();
    SparseVec { indices, values }
}

/// Where feature vectors came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Hashed,
    /// Precomputed embeddings loaded from a file.
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleFeatures {
    pub title: SparseVec,
    pub body: SparseVec,
    /// The whole article as one input (single-input ablation).
    pub whole: SparseVec,
}

/// Examples with their feature vectors.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub features: Vec<ExampleFeatures>,
    pub dim: usize,
    pub source: FeatureSource,
}

impl Dataset {
    /// Featurize every example with hashed n-grams.
    pub fn hashed(examples: Vec<Example>, d_in: usize) -> Result<Self> {
        if !d_in.is_power_of_two() {
            return Err(Error::config(format!(
                "feature dimension {d_in} is not a power of two"
            )));
        }
        let features = examples
            .iter()
            .map(|ex| ExampleFeatures {
                title: featurize(&ex.title, d_in),
                body: featurize(&ex.body, d_in),
                whole: featurize(&format!("{} {}", ex.title, ex.body), d_in),
            })
            .collect();
        Ok(Self {
            examples,
            features,
            dim: d_in,
            source: FeatureSource::Hashed,
        })
    }

    /// Replace features with precomputed title/body embeddings read from
    /// `path`. Every example id must be covered; the whole-article vector is
    /// the mean of the two embeddings.
    pub fn with_embeddings(examples: Vec<Example>, path: &Path) -> Result<Self> {
        let table = load_embeddings(path)?;
        Self::from_embedding_table(examples, &table).map_err(|e| match e {
            Error::Usage(msg) => Error::usage(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// As [`Dataset::with_embeddings`] with an already loaded table.
    pub fn from_embedding_table(
        examples: Vec<Example>,
        table: &BTreeMap<String, (Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        let dim = table.values().next().map_or(0, |(t, _)| t.len());
        let missing: Vec<&str> = examples
            .iter()
            .filter(|e| !table.contains_key(&e.id))
            .map(|e| e.id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::usage(format!(
                "no embeddings for ids {}",
                missing.join(", ")
            )));
        }
        let features = examples
            .iter()
            .map(|ex| {
                let (t, b) = &table[&ex.id];
                let title = SparseVec::from_dense(t);
                let body = SparseVec::from_dense(b);
                let whole = SparseVec::mean(&title, &body);
                ExampleFeatures { title, body, whole }
            })
            .collect();
        Ok(Self {
            examples,
            features,
            dim,
            source: FeatureSource::External,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Sorted language tags present.
    pub fn languages(&self) -> Vec<String> {
        self.examples
            .iter()
            .map(|e| e.language.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn indices_of_language<'a>(&'a self, lang: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.examples
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.language == lang)
            .map(|(i, _)| i)
    }
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    id: String,
    title_vec: Vec<f64>,
    body_vec: Vec<f64>,
}

/// Read an embedding file into `id -> (title_vec, body_vec)`; all vectors
/// must share one dimension.
pub fn load_embeddings(path: &Path) -> Result<BTreeMap<String, (Vec<f64>, Vec<f64>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = BTreeMap::new();
    let mut dim = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        for v in [&rec.title_vec, &rec.body_vec] {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(parse_err(
                    lineno,
                    format!("embedding dimension {} disagrees with {d}", v.len()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(parse_err(lineno, "non-finite embedding value".into()));
            }
        }
        if dim == Some(0) {
            return Err(parse_err(lineno, "empty embedding vector".into()));
        }
        if out.insert(rec.id.clone(), (rec.title_vec, rec.body_vec)).is_some() {
            return Err(parse_err(lineno, format!("duplicate id {:?}", rec.id)));
        }
    }
    Ok(out)
}

/// Shuffle `0..n` with `epoch_seed` and cut into batches of `batch_size`;
/// a trailing batch of one example is merged into the previous batch.
pub fn batch_iter(n: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 2, "batch size must be at least 2");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    batches
}

/// Per-language split sizes and script for the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub tag: String,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// First code point of the character block the language's words use.
    pub script_start: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub languages: Vec<LanguageSpec>,
    pub num_labels: usize,
    /// Independent per-label inclusion probabilities.
    pub marginals: Vec<f64>,
    pub signature_tokens_per_label: usize,
    pub noise_vocabulary: usize,
    pub title_tokens: usize,
    pub body_tokens: usize,
    /// Probability that a token is drawn from the noise vocabulary.
    pub noise: f64,
    pub seed: u64,
}

/// Six languages with the article counts of the shared-task training data.
pub fn default_languages() -> Vec<LanguageSpec> {
    [
        ("en", 433, 83, 54, 0x61),
        ("fr", 158, 53, 50, 0x101),
        ("de", 132, 45, 50, 0x180),
        ("it", 227, 76, 61, 0x3b1),
        ("pl", 145, 49, 47, 0x561),
        ("ru", 143, 48, 72, 0x430),
    ]
    .into_iter()
    .map(|(tag, train, dev, test, script_start)| LanguageSpec {
        tag: tag.into(),
        train,
        dev,
        test,
        script_start,
    })
    .collect()
}

/// Linearly decreasing marginals from 0.55 to 0.12.
pub fn default_marginals(num_labels: usize) -> Vec<f64> {
    if num_labels == 1 {
        return vec![0.55];
    }
    (0..num_labels)
        .map(|k| 0.55 - 0.43 * k as f64 / (num_labels - 1) as f64)
        .collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            languages: default_languages(),
            num_labels: DEFAULT_NUM_LABELS,
            marginals: default_marginals(DEFAULT_NUM_LABELS),
            signature_tokens_per_label: 4,
            noise_vocabulary: 60,
            title_tokens: 8,
            body_tokens: 40,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.languages.is_empty() {
            return Err(Error::config("synthetic corpus needs at least one language"));
        }
        let mut tags = HashSet::new();
        for l in &self.languages {
            if l.train + l.dev + l.test == 0 {
                return Err(Error::config(format!("language {} has no examples", l.tag)));
            }
            if !tags.insert(&l.tag) {
                return Err(Error::config(format!("duplicate language {}", l.tag)));
            }
            if script_alphabet(l.script_start).len() < 8 {
                return Err(Error::config(format!(
                    "code point block at {:#x} has too few lowercase letters",
                    l.script_start
                )));
            }
        }
        if self.num_labels < 2 {
            return Err(Error::config("need at least 2 labels"));
        }
        if self.marginals.len() != self.num_labels {
            return Err(Error::config(format!(
                "{} marginals for {} labels",
                self.marginals.len(),
                self.num_labels
            )));
        }
        if self.marginals.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::config("marginals must lie in (0, 1)"));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::config(format!("noise {} outside [0, 0.5)", self.noise)));
        }
        if self.signature_tokens_per_label == 0 || self.noise_vocabulary == 0 {
            return Err(Error::config("token inventories must be non-empty"));
        }
        if self.body_tokens < self.num_labels {
            return Err(Error::config(
                "body must have room for one signature token per label",
            ));
        }
        Ok(())
    }
}

/// Lowercase letters of a 96-code-point block.
fn script_alphabet(start: u32) -> Vec<char> {
    (start..start + 96)
        .filter_map(char::from_u32)
        .filter(|c| c.is_alphabetic() && c.to_lowercase().eq(std::iter::once(*c)))
        .take(24)
        .collect()
}

/// Token inventories of one synthetic language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageTokens {
    pub tag: String,
    /// `signatures[k]` are the tokens only emitted by label `k`.
    pub signatures: Vec<Vec<String>>,
    pub noise: Vec<String>,
}

/// Everything needed to regenerate the corpus and recompute the
/// Bayes-optimal labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub tokens: Vec<LanguageTokens>,
}

impl SynthManifest {
    /// Posterior mode of the label set given an example's tokens.
    ///
    /// Every active label emits at least one of its signature tokens and
    /// signature tokens are label-exclusive, so the posterior is a point
    /// mass on the set of labels whose signatures were observed.
    pub fn bayes_optimal(&self, example: &Example) -> LabelSet {
        let Some(lang) = self.tokens.iter().find(|t| t.tag == example.language) else {
            return LabelSet::empty();
        };
        let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
        for (k, sig) in lang.signatures.iter().enumerate() {
            for t in sig {
                owner.insert(t.as_str(), k);
            }
        }
        example
            .title
            .split_whitespace()
            .chain(example.body.split_whitespace())
            .filter_map(|t| owner.get(t).copied())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub manifest: SynthManifest,
}

fn random_word(rng: &mut ChaCha8Rng, alphabet: &[char]) -> String {
    let len = rng.gen_range(4..=7);
    (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
}

fn language_tokens(rng: &mut ChaCha8Rng, spec: &LanguageSpec, cfg: &SynthConfig) -> LanguageTokens {
    let alphabet = script_alphabet(spec.script_start);
    let mut used = HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let w = random_word(rng, &alphabet);
        if used.insert(w.clone()) {
            return w;
        }
    };
    let signatures = (0..cfg.num_labels)
        .map(|_| (0..cfg.signature_tokens_per_label).map(|_| fresh(rng)).collect())
        .collect();
    let noise = (0..cfg.noise_vocabulary).map(|_| fresh(rng)).collect();
    LanguageTokens {
        tag: spec.tag.clone(),
        signatures,
        noise,
    }
}

fn draw_labels(rng: &mut ChaCha8Rng, marginals: &[f64]) -> LabelSet {
    loop {
        let s: LabelSet = marginals
            .iter()
            .enumerate()
            .filter(|(_, &p)| rng.gen::<f64>() < p)
            .map(|(k, _)| k)
            .collect();
        if !s.is_empty() {
            return s;
        }
    }
}

fn draw_token<'a>(
    rng: &mut ChaCha8Rng,
    tokens: &'a LanguageTokens,
    active: &[usize],
    noise: f64,
) -> &'a str {
    if rng.gen::<f64>() < noise {
        &tokens.noise[rng.gen_range(0..tokens.noise.len())]
    } else {
        let sig = &tokens.signatures[active[rng.gen_range(0..active.len())]];
        &sig[rng.gen_range(0..sig.len())]
    }
}

fn draw_example(
    rng: &mut ChaCha8Rng,
    id: String,
    tokens: &LanguageTokens,
    cfg: &SynthConfig,
) -> Example {
    let labels = draw_labels(rng, &cfg.marginals);
    let active: Vec<usize> = labels.iter().collect();
    let title: Vec<&str> = (0..cfg.title_tokens)
        .map(|_| draw_token(rng, tokens, &active, cfg.noise))
        .collect();
    // one guaranteed signature token per active label, the rest from the mixture
    let mut body: Vec<&str> = active
        .iter()
        .map(|&k| {
            let sig = &tokens.signatures[k];
            sig[rng.gen_range(0..sig.len())].as_str()
        })
        .collect();
    while body.len() < cfg.body_tokens {
        body.push(draw_token(rng, tokens, &active, cfg.noise));
    }
    body.shuffle(rng);
    Example {
        id,
        language: tokens.tag.clone(),
        title: title.join(" "),
        body: body.join(" "),
        labels,
    }
}

/// Generate train/dev/test splits. Deterministic in `cfg.seed`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tokens: Vec<LanguageTokens> = cfg
        .languages
        .iter()
        .map(|l| language_tokens(&mut rng, l, cfg))
        .collect();
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (spec, toks) in cfg.languages.iter().zip(&tokens) {
        for (split, n, out) in [
            ("train", spec.train, &mut train),
            ("dev", spec.dev, &mut dev),
            ("test", spec.test, &mut test),
        ] {
            for i in 0..n {
                let id = format!("{}-{split}-{i:04}", spec.tag);
                out.push(draw_example(&mut rng, id, toks, cfg));
            }
        }
    }
    Ok(SynthCorpus {
        train,
        dev,
        test,
        manifest: SynthManifest {
            config: cfg.clone(),
            tokens,
        },
    })
}
