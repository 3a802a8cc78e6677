//! Dual-input encoder with a contrastive head and a classification head.
//!
//! ```text
//! title ─┐                 ┌─ contrastive head ─ l2norm ─> y1
//!        f ─ concat ─ X1 ──┤
//! body ──┘     │           └─ classification head ───────> y2 (logits)
//!              └─ dropout ─ X2 (second view, train mode only)
//! ```
//!
//! `f` is one shared `tanh` layer. In train mode both views pass through
//! both heads and rows are interleaved so that rows `2k` and `2k+1` are the
//! two views of example `k`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ExampleFeatures, DEFAULT_FEATURE_DIM, DEFAULT_NUM_LABELS};
use crate::dcore::{sigmoid, DArray, Graph, Var};
use crate::error::{Error, Result};
use crate::losses::LabelSet;

/// Norm floor of the contrastive head; an all-zero projection stays zero.
pub const PROJECTION_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_h: usize,
    pub d_p: usize,
    pub num_labels: usize,
    /// Probability of zeroing a unit when building the dropout view.
    pub view_dropout: f64,
    /// Encode the whole article once and use it for both halves of `X1`.
    pub single_input: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: DEFAULT_FEATURE_DIM,
            d_h: 64,
            d_p: 32,
            num_labels: DEFAULT_NUM_LABELS,
            view_dropout: 0.1,
            single_input: false,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_h == 0 || self.num_labels == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.d_p < 2 {
            return Err(Error::config("projection width must be at least 2"));
        }
        if !(self.view_dropout > 0.0 && self.view_dropout < 1.0) {
            return Err(Error::config(format!(
                "view dropout {} outside (0, 1)",
                self.view_dropout
            )));
        }
        Ok(())
    }

    pub fn keep_probability(&self) -> f64 {
        1.0 - self.view_dropout
    }
}

/// Trainable weights. Biases are `1×n` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder_weight: DArray,
    pub encoder_bias: DArray,
    pub contrastive_weight: DArray,
    pub contrastive_bias: DArray,
    pub classifier_weight: DArray,
    pub classifier_bias: DArray,
}

impl ModelParams {
    pub const NAMES: [&'static str; 6] = [
        "encoder_weight",
        "encoder_bias",
        "contrastive_weight",
        "contrastive_bias",
        "classifier_weight",
        "classifier_bias",
    ];

    fn shapes(cfg: &ModelConfig) -> [(usize, usize); 6] {
        let x = 2 * cfg.d_h;
        [
            (cfg.d_in, cfg.d_h),
            (1, cfg.d_h),
            (x, cfg.d_p),
            (1, cfg.d_p),
            (x, cfg.num_labels),
            (1, cfg.num_labels),
        ]
    }

    /// Weights uniform in `±1/√fan_in` from `cfg.init_seed`; zero biases.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let arrays = Self::shapes(cfg).map(|(r, c)| {
            if r == 1 {
                return DArray::zeros(r, c);
            }
            let bound = 1.0 / (r as f64).sqrt();
            let data = (0..r * c).map(|_| rng.gen_range(-bound..=bound)).collect();
            DArray::raw(r, c, data)
        });
        Ok(Self::from_arrays(arrays))
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::from_arrays(Self::shapes(cfg).map(|(r, c)| DArray::zeros(r, c)))
    }

    pub fn from_arrays(a: [DArray; 6]) -> Self {
        let [encoder_weight, encoder_bias, contrastive_weight, contrastive_bias, classifier_weight, classifier_bias] =
            a;
        Self {
            encoder_weight,
            encoder_bias,
            contrastive_weight,
            contrastive_bias,
            classifier_weight,
            classifier_bias,
        }
    }

    pub fn arrays(&self) -> [&DArray; 6] {
        [
            &self.encoder_weight,
            &self.encoder_bias,
            &self.contrastive_weight,
            &self.contrastive_bias,
            &self.classifier_weight,
            &self.classifier_bias,
        ]
    }

    pub fn arrays_mut(&mut self) -> [&mut DArray; 6] {
        [
            &mut self.encoder_weight,
            &mut self.encoder_bias,
            &mut self.contrastive_weight,
            &mut self.contrastive_bias,
            &mut self.classifier_weight,
            &mut self.classifier_bias,
        ]
    }

    /// Check shapes against `cfg` and that every value is finite.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        for ((name, arr), (r, c)) in Self::NAMES.iter().zip(self.arrays()).zip(Self::shapes(cfg)) {
            if arr.shape() != [r, c] {
                return Err(Error::config(format!(
                    "{name} has shape {:?}, expected [{r}, {c}]",
                    arr.shape()
                )));
            }
            if arr.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("{name} contains non-finite values")));
            }
        }
        Ok(())
    }

    pub fn num_values(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }
}

/// Parameter leaves registered in a graph.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub encoder_weight: Var,
    pub encoder_bias: Var,
    pub contrastive_weight: Var,
    pub contrastive_bias: Var,
    pub classifier_weight: Var,
    pub classifier_bias: Var,
}

impl ParamVars {
    pub fn register(g: &mut Graph, p: &ModelParams) -> Self {
        Self::from_vars(p.arrays().map(|a| g.parameter(a.clone())))
    }

    pub fn from_vars(v: [Var; 6]) -> Self {
        Self {
            encoder_weight: v[0],
            encoder_bias: v[1],
            contrastive_weight: v[2],
            contrastive_bias: v[3],
            classifier_weight: v[4],
            classifier_bias: v[5],
        }
    }

    pub fn vars(&self) -> [Var; 6] {
        [
            self.encoder_weight,
            self.encoder_bias,
            self.contrastive_weight,
            self.contrastive_bias,
            self.classifier_weight,
            self.classifier_bias,
        ]
    }
}

fn check_fits(f: &ExampleFeatures, d_in: usize) -> Result<()> {
    if [&f.title, &f.body, &f.whole].iter().all(|v| v.fits(d_in)) {
        Ok(())
    } else {
        Err(Error::usage(format!("feature index outside input dimension {d_in}")))
    }
}

/// Dense inputs for a batch of `B` examples.
#[derive(Clone, Debug)]
pub struct BatchInput {
    pub title: DArray,
    pub body: DArray,
    pub labels: Vec<LabelSet>,
}

impl BatchInput {
    /// Gather rows of `dataset`. With `single_input` both matrices hold the
    /// whole-article features.
    pub fn gather(dataset: &Dataset, indices: &[usize], cfg: &ModelConfig) -> Result<Self> {
        if dataset.dim != cfg.d_in {
            return Err(Error::usage(format!(
                "dataset features have dimension {}, model expects {}",
                dataset.dim, cfg.d_in
            )));
        }
        let feats: Vec<&ExampleFeatures> = indices.iter().map(|&i| &dataset.features[i]).collect();
        for (&i, f) in indices.iter().zip(&feats) {
            check_fits(f, cfg.d_in).map_err(|e| Error::usage(format!("example {}: {e}", dataset.examples[i].id)))?;
        }
        let dense = |pick: &dyn Fn(&ExampleFeatures) -> &crate::data::SparseVec| {
            let mut data = vec![0.0; indices.len() * cfg.d_in];
            for (r, f) in feats.iter().enumerate() {
                pick(f).scatter_into(&mut data[r * cfg.d_in..(r + 1) * cfg.d_in]);
            }
            DArray::raw(indices.len(), cfg.d_in, data)
        };
        let (title, body) = if cfg.single_input {
            let w = dense(&|f| &f.whole);
            (w.clone(), w)
        } else {
            (dense(&|f| &f.title), dense(&|f| &f.body))
        };
        Ok(Self {
            title,
            body,
            labels: indices
                .iter()
                .map(|&i| dataset.examples[i].labels.clone())
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub x1: Var,
    /// L2-normalized projections, one row per view.
    pub y1: Var,
    /// Classification logits, one row per view.
    pub y2: Var,
    pub labelsets: Vec<LabelSet>,
    /// Source example (batch position) of each output row.
    pub view_of: Vec<usize>,
}

/// `X1 = concat(tanh(title·W + b), tanh(body·W + b))`.
pub fn encode(g: &mut Graph, p: &ParamVars, titles: Var, bodies: Var) -> Result<Var> {
    let mut f = |x: Var| -> Result<Var> {
        let h = g.matmul(x, p.encoder_weight)?;
        let h = g.add(h, p.encoder_bias)?;
        g.tanh(h)
    };
    let t = f(titles)?;
    let b = f(bodies)?;
    g.concat_cols(t, b)
}

/// `X1` for a single title/body pair (or the whole article twice when
/// `cfg.single_input`, in which case pass the whole-article vector as both).
pub fn encode_pair(title: &[f64], body: &[f64], params: &ModelParams, cfg: &ModelConfig) -> Result<Vec<f64>> {
    if title.len() != cfg.d_in || body.len() != cfg.d_in {
        return Err(Error::usage(format!(
            "encode_pair: inputs of length {}/{} for d_in {}",
            title.len(),
            body.len(),
            cfg.d_in
        )));
    }
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, params);
    let t = g.constant(DArray::row(title)?);
    let b = g.constant(DArray::row(body)?);
    let x1 = encode(&mut g, &p, t, b)?;
    Ok(g.value(x1).data().to_vec())
}

/// Bernoulli(`keep`) 0/1 mask.
pub fn dropout_mask(rng: &mut impl Rng, rows: usize, cols: usize, keep: f64) -> DArray {
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 } else { 0.0 })
        .collect();
    DArray::raw(rows, cols, data)
}

/// The positive view pair: `X1` itself and its inverted-dropout copy. With
/// no mask (evaluation) the second view equals the first.
pub fn make_views(g: &mut Graph, x1: Var, mask: Option<&DArray>, cfg: &ModelConfig) -> Result<(Var, Var)> {
    match mask {
        None => Ok((x1, x1)),
        Some(m) => {
            let m = g.constant(m.clone());
            let x2 = g.masked_dropout(x1, m, cfg.keep_probability())?;
            Ok((x1, x2))
        }
    }
}

fn heads(g: &mut Graph, p: &ParamVars, x: Var) -> Result<(Var, Var)> {
    let z = g.matmul(x, p.contrastive_weight)?;
    let z = g.add(z, p.contrastive_bias)?;
    let y1 = g.l2_normalize_rows_clamped(z, PROJECTION_NORM_EPS)?;
    let y2 = g.matmul(x, p.classifier_weight)?;
    let y2 = g.add(y2, p.classifier_bias)?;
    Ok((y1, y2))
}

/// Forward a batch. Train mode draws one dropout mask per example from
/// `rng` and emits `2B` interleaved rows; eval mode emits `B` rows and
/// never touches `rng`.
pub fn forward_batch(
    g: &mut Graph,
    p: &ParamVars,
    batch: &BatchInput,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<ForwardOutput> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::usage("forward_batch: empty batch"));
    }
    let titles = g.constant(batch.title.clone());
    let bodies = g.constant(batch.body.clone());
    let x1 = encode(g, p, titles, bodies)?;
    match mode {
        Mode::Eval => {
            let (y1, y2) = heads(g, p, x1)?;
            Ok(ForwardOutput {
                x1,
                y1,
                y2,
                labelsets: batch.labels.clone(),
                view_of: (0..b).collect(),
            })
        }
        Mode::Train => {
            let mask = dropout_mask(rng, b, 2 * cfg.d_h, cfg.keep_probability());
            let (v1, v2) = make_views(g, x1, Some(&mask), cfg)?;
            let stacked = g.concat_rows(v1, v2)?;
            let order: Vec<usize> = (0..b).flat_map(|k| [k, b + k]).collect();
            let views = g.gather_rows(stacked, order)?;
            let (y1, y2) = heads(g, p, views)?;
            Ok(ForwardOutput {
                x1,
                y1,
                y2,
                labelsets: (0..b).flat_map(|k| [batch.labels[k].clone(), batch.labels[k].clone()]).collect(),
                view_of: (0..b).flat_map(|k| [k, k]).collect(),
            })
        }
    }
}

/// Sigmoid probabilities of the classification head for the rows of
/// `dataset` selected by `indices` (eval mode).
pub fn predict_batch(
    dataset: &Dataset,
    indices: &[usize],
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Vec<Vec<f64>>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(indices.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in indices.chunks(CHUNK) {
        let batch = BatchInput::gather(dataset, chunk, cfg)?;
        let mut g = Graph::new();
        let p = ParamVars::register(&mut g, params);
        let fwd = forward_batch(&mut g, &p, &batch, cfg, Mode::Eval, &mut rng)?;
        let logits = g.value(fwd.y2);
        for r in 0..chunk.len() {
            out.push(logits.row_slice(r).iter().map(|&x| sigmoid(x)).collect());
        }
    }
    Ok(out)
}

/// Probabilities for a single example's features.
pub fn predict_probabilities(
    features: &ExampleFeatures,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    check_fits(features, cfg.d_in)?;
    let (t, b) = if cfg.single_input {
        (&features.whole, &features.whole)
    } else {
        (&features.title, &features.body)
    };
    let x1 = encode_pair(&t.to_dense(cfg.d_in), &b.to_dense(cfg.d_in), params, cfg)?;
    let mut logits = params.classifier_bias.data().to_vec();
    let w = &params.classifier_weight;
    for (i, x) in x1.iter().enumerate() {
        for (l, out) in logits.iter_mut().enumerate() {
            *out += x * w.get(i, l);
        }
    }
    Ok(logits.into_iter().map(sigmoid).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Example, SparseVec};

    fn small() -> ModelConfig {
        ModelConfig {
            d_in: 8,
            d_h: 4,
            d_p: 3,
            num_labels: 5,
            ..Default::default()
        }
    }

    fn dataset(cfg: &ModelConfig, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut v = || SparseVec::from_dense(&(0..cfg.d_in).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let examples: Vec<Example> = (0..n)
            .map(|i| Example {
                id: format!("e{i}"),
                language: "xx".into(),
                title: String::new(),
                body: String::new(),
                labels: LabelSet::new([i % cfg.num_labels]),
            })
            .collect();
        let features = (0..n)
            .map(|_| {
                let (title, body) = (v(), v());
                let whole = SparseVec::mean(&title, &body);
                ExampleFeatures { title, body, whole }
            })
            .collect();
        Dataset {
            examples,
            features,
            dim: cfg.d_in,
            source: crate::data::FeatureSource::External,
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = small();
        let a = ModelParams::init(&cfg).unwrap();
        assert_eq!(a, ModelParams::init(&cfg).unwrap());
        let bound = 1.0 / (cfg.d_in as f64).sqrt();
        assert!(a.encoder_weight.data().iter().all(|w| w.abs() <= bound));
        assert!(a.encoder_bias.data().iter().all(|&b| b == 0.0));
        a.validate(&cfg).unwrap();
    }

    #[test]
    fn encoder_shape_at_default_width() {
        let cfg = ModelConfig::default();
        let p = ModelParams::zeros(&cfg);
        assert_eq!(p.encoder_weight.shape(), &[16384, 64]);
    }

    #[test]
    fn zero_params_encode_to_zero() {
        let cfg = small();
        let p = ModelParams::zeros(&cfg);
        let x = encode_pair(&[0.3; 8], &[0.1; 8], &p, &cfg).unwrap();
        assert_eq!(x, vec![0.0; 8]);
    }

    #[test]
    fn shared_encoder_symmetry() {
        let cfg = small();
        let p = ModelParams::init(&cfg).unwrap();
        let t: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..8).map(|i| 1.0 - i as f64 * 0.2).collect();
        let same = encode_pair(&t, &t, &p, &cfg).unwrap();
        assert_eq!(same[..4], same[4..]);
        let tb = encode_pair(&t, &b, &p, &cfg).unwrap();
        let bt = encode_pair(&b, &t, &p, &cfg).unwrap();
        assert_eq!(tb[..4], bt[4..]);
        assert_eq!(tb[4..], bt[..4]);
        assert!(encode_pair(&t[..3], &b, &p, &cfg).is_err());
    }

    #[test]
    fn views() {
        let cfg = small();
        let mut g = Graph::new();
        let x = g.constant(DArray::row(&[1.0, 2.0, 0.0, -1.0, 0.5, 0.5, 0.5, 0.5]).unwrap());
        let ones = DArray::filled(1, 8, 1.0);
        let (a, b) = make_views(&mut g, x, Some(&ones), &cfg).unwrap();
        assert_eq!(g.value(a), g.value(x));
        for (u, v) in g.value(b).data().iter().zip(g.value(x).data()) {
            assert!((u - v / 0.9).abs() < 1e-15);
        }
        let (_, b) = make_views(&mut g, x, Some(&DArray::zeros(1, 8)), &cfg).unwrap();
        assert!(g.value(b).data().iter().all(|&v| v == 0.0));
        let (a, b) = make_views(&mut g, x, None, &cfg).unwrap();
        assert_eq!(g.value(a), g.value(b));
    }

    #[test]
    fn train_forward_doubles_batch() {
        let cfg = small();
        let ds = dataset(&cfg, 4);
        let p = ModelParams::init(&cfg).unwrap();
        let batch = BatchInput::gather(&ds, &[0, 1, 2, 3], &cfg).unwrap();
        let mut g = Graph::new();
        let vars = ParamVars::register(&mut g, &p);
        let out = forward_batch(&mut g, &vars, &batch, &cfg, Mode::Train, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(g.value(out.y1).shape(), &[8, 3]);
        assert_eq!(g.value(out.y2).shape(), &[8, 5]);
        for r in 0..8 {
            let n: f64 = g.value(out.y1).row_slice(r).iter().map(|v| v * v).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-9);
        }
        for k in 0..4 {
            assert_eq!(out.labelsets[2 * k], out.labelsets[2 * k + 1]);
            assert_eq!(out.view_of[2 * k + 1], k);
        }
    }

    #[test]
    fn eval_forward_is_deterministic_and_ignores_rng() {
        let cfg = small();
        let ds = dataset(&cfg, 3);
        let p = ModelParams::init(&cfg).unwrap();
        let batch = BatchInput::gather(&ds, &[0, 1, 2], &cfg).unwrap();
        let run = |seed| {
            let mut g = Graph::new();
            let vars = ParamVars::register(&mut g, &p);
            let out = forward_batch(&mut g, &vars, &batch, &cfg, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            (g.value(out.y1).clone(), g.value(out.y2).clone())
        };
        assert_eq!(run(1), run(2));
        assert_eq!(run(1).1.shape(), &[3, 5]);
    }

    #[test]
    fn zero_params_predict_half() {
        let cfg = small();
        let ds = dataset(&cfg, 2);
        let p = ModelParams::zeros(&cfg);
        let probs = predict_batch(&ds, &[0, 1], &p, &cfg).unwrap();
        assert!(probs.iter().flatten().all(|&x| x == 0.5));
        assert_eq!(predict_probabilities(&ds.features[0], &p, &cfg).unwrap(), vec![0.5; 5]);
    }

    #[test]
    fn known_logits_map_through_sigmoid() {
        let cfg = small();
        let mut p = ModelParams::zeros(&cfg);
        p.classifier_bias = DArray::row(&[2.0, -2.0, 0.0, 0.0, 0.0]).unwrap();
        let ds = dataset(&cfg, 1);
        let probs = predict_probabilities(&ds.features[0], &p, &cfg).unwrap();
        assert!((probs[0] - 0.880797).abs() < 1e-6);
        assert!((probs[1] - 0.119203).abs() < 1e-6);
    }

    #[test]
    fn empty_batch_rejected() {
        let cfg = small();
        let ds = dataset(&cfg, 1);
        let p = ModelParams::zeros(&cfg);
        let batch = BatchInput::gather(&ds, &[], &cfg).unwrap();
        let mut g = Graph::new();
        let vars = ParamVars::register(&mut g, &p);
        assert!(forward_batch(&mut g, &vars, &batch, &cfg, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
