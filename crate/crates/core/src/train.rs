//! Adam over the mixed objective, with per-epoch threshold tuning and
//! dev-set model selection.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batch_iter, Dataset};
use crate::dcore::{DArray, Graph, Var};
use crate::error::{Error, Result};
use crate::losses::{
    bce_with_logits, check_alpha, combined_loss, multilabel_supcon, ContrastiveConfig, LabelSet,
    LossBreakdown,
};
use crate::metrics::{f1_from_counts, Counts};
use crate::model::{forward_batch, predict_batch, BatchInput, ModelConfig, ModelParams, Mode, ParamVars};
use crate::thresholds::{apply_threshold, ThresholdTable, DEFAULT_GRID_STEP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the cross-entropy term; `1 − alpha` weighs the contrastive term.
    pub alpha: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Epochs without a dev micro-F1 gain before stopping.
    pub early_stop_patience: usize,
    pub grid_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            learning_rate: 1e-6,
            alpha: 0.5,
            epochs: 20,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            early_stop_patience: 10,
            grid_step: DEFAULT_GRID_STEP,
        }
    }
}

impl TrainConfig {
    /// Learning rate used for fine-tuning a large pretrained encoder.
    pub fn plm_parity() -> Self {
        Self::default()
    }

    /// Learning rate suited to the toy encoder on synthetic data.
    pub fn synthetic() -> Self {
        Self {
            learning_rate: 1e-2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch size must be at least 2"));
        }
        check_alpha(self.alpha)?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("Adam epsilon must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        Ok(())
    }
}

/// First and second moments for each parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<DArray>,
    pub v: Vec<DArray>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a DArray>) -> Self {
        let zeros: Vec<DArray> = params
            .into_iter()
            .map(|p| DArray::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [&mut DArray],
    grads: &[&DArray],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::usage("adam_step: parameter/gradient/state count mismatch"));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                shapes: vec![p.shape().to_vec(), g.shape().to_vec(), m.shape().to_vec()],
            });
        }
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let lr = cfg.learning_rate;
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, x) in p.data_mut().iter_mut().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Graph nodes of one batch objective.
#[derive(Clone, Copy, Debug)]
pub struct BatchObjective {
    pub root: Var,
    pub breakdown: LossBreakdown,
    pub anchors_skipped: usize,
}

/// Binary target matrix for label sets.
pub fn target_matrix(labels: &[LabelSet], num_labels: usize) -> DArray {
    let data = labels.iter().flat_map(|l| l.indicator(num_labels)).collect();
    DArray::raw(labels.len(), num_labels, data)
}

/// Train-mode forward, contrastive loss on `y1`, cross-entropy on `y2`
/// (both views), mixed with `alpha`.
pub fn batch_objective(
    g: &mut Graph,
    vars: &ParamVars,
    batch: &BatchInput,
    model_cfg: &ModelConfig,
    cl_cfg: &ContrastiveConfig,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BatchObjective> {
    let out = forward_batch(g, vars, batch, model_cfg, Mode::Train, rng)?;
    let cl = multilabel_supcon(g, out.y1, &out.labelsets, cl_cfg)?;
    let targets = target_matrix(&out.labelsets, model_cfg.num_labels);
    let ce = bce_with_logits(g, out.y2, &targets)?;
    let (root, breakdown) = combined_loss(g, ce, cl.loss, alpha)?;
    Ok(BatchObjective {
        root,
        breakdown,
        anchors_skipped: cl.anchors_skipped,
    })
}

/// Objective value and parameter gradients (in [`ModelParams::NAMES`] order)
/// for one batch.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &BatchInput,
    model_cfg: &ModelConfig,
    cl_cfg: &ContrastiveConfig,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(BatchObjective, Vec<DArray>)> {
    let mut g = Graph::new();
    let vars = ParamVars::register(&mut g, params);
    let obj = batch_objective(&mut g, &vars, batch, model_cfg, cl_cfg, alpha, rng)?;
    let mut grads = g.backward(obj.root)?;
    let ordered = vars
        .vars()
        .iter()
        .map(|v| grads.remove(&v.id()).expect("every parameter has a gradient"))
        .collect();
    Ok((obj, ordered))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_l_cl: f64,
    pub mean_l_ce: f64,
    pub batches: usize,
    pub anchors_skipped: usize,
    pub dev_micro_f1: BTreeMap<String, f64>,
    pub dev_mean_f1: f64,
    pub thresholds: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub best_dev_mean_f1: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    /// One JSON record per epoch followed by a summary record.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for e in &self.epochs {
            let mut v = serde_json::to_value(e).expect("epoch record serializes");
            v["record"] = "epoch".into();
            serde_json::to_writer(&mut out, &v).expect("in-memory write");
            out.push(b'\n');
        }
        let summary = serde_json::json!({
            "record": "summary",
            "epochs_run": self.epochs.len(),
            "selected_epoch": self.selected_epoch,
            "best_dev_mean_f1": self.best_dev_mean_f1,
            "stopped_early": self.stopped_early,
        });
        serde_json::to_writer(&mut out, &summary).expect("in-memory write");
        out.push(b'\n');
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub thresholds: ThresholdTable,
    pub report: TrainReport,
}

/// Probabilities and gold label sets per language.
pub fn probabilities_by_language(
    dataset: &Dataset,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Vec<(String, Vec<Vec<f64>>, Vec<LabelSet>)>> {
    let mut out = Vec::new();
    for lang in dataset.languages() {
        let idx: Vec<usize> = dataset.indices_of_language(&lang).collect();
        let probs = predict_batch(dataset, &idx, params, cfg)?;
        let gold = idx.iter().map(|&i| dataset.examples[i].labels.clone()).collect();
        out.push((lang, probs, gold));
    }
    Ok(out)
}

/// Tune per-language thresholds on `dev` and score each language at its
/// own threshold.
pub fn tune_and_score(
    dev: &Dataset,
    params: &ModelParams,
    cfg: &ModelConfig,
    grid_step: f64,
) -> Result<(ThresholdTable, BTreeMap<String, f64>)> {
    let by_lang = probabilities_by_language(dev, params, cfg)?;
    let table = ThresholdTable::tune(
        by_lang.iter().map(|(l, p, g)| (l.as_str(), p.clone(), g.clone())),
        grid_step,
    )?;
    let mut scores = BTreeMap::new();
    for (lang, probs, gold) in &by_lang {
        let (theta, _) = table.threshold_for(lang);
        let mut c = Counts::default();
        for (p, g) in apply_threshold(probs, theta).iter().zip(gold) {
            c.add(Counts::of(p, g));
        }
        scores.insert(lang.clone(), f1_from_counts(c));
    }
    Ok((table, scores))
}

fn mix(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over (seed, stream)
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Run training from `initial` parameters. Deterministic in the configs'
/// seeds. Each epoch the dev thresholds are retuned; the epoch with the
/// best mean per-language dev micro-F1 is kept.
pub fn train_from(
    initial: ModelParams,
    train: &Dataset,
    dev: &Dataset,
    model_cfg: &ModelConfig,
    cl_cfg: &ContrastiveConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    cl_cfg.validate(model_cfg.num_labels)?;
    cfg.validate()?;
    initial.validate(model_cfg)?;
    if train.len() < 2 {
        return Err(Error::usage("training split needs at least 2 examples"));
    }
    if dev.is_empty() {
        return Err(Error::usage("dev split is empty"));
    }

    let mut params = initial;
    let mut adam = AdamState::new(params.arrays());
    let mut best: Option<(f64, usize, ModelParams, ThresholdTable)> = None;
    let mut epochs = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let batches = batch_iter(train.len(), cfg.batch_size, mix(cfg.seed, epoch as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, (1 << 32) + epoch as u64));
        let (mut sum, mut sum_cl, mut sum_ce, mut skipped) = (0.0, 0.0, 0.0, 0);
        for (b, idx) in batches.iter().enumerate() {
            let batch = BatchInput::gather(train, idx, model_cfg)?;
            let (obj, grads) = batch_gradients(&params, &batch, model_cfg, cl_cfg, cfg.alpha, &mut rng)
                .map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {b}: {msg}")),
                    other => other,
                })?;
            if !obj.breakdown.combined.is_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {epoch}, batch {b}: non-finite loss"
                )));
            }
            let grad_refs: Vec<&DArray> = grads.iter().collect();
            adam_step(&mut params.arrays_mut(), &grad_refs, &mut adam, cfg)?;
            sum += obj.breakdown.combined;
            sum_cl += obj.breakdown.l_cl;
            sum_ce += obj.breakdown.l_ce;
            skipped += obj.anchors_skipped;
        }
        params.validate(model_cfg).map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}: {msg}")),
            other => other,
        })?;
        let n = batches.len() as f64;
        let (table, scores) = tune_and_score(dev, &params, model_cfg, cfg.grid_step)?;
        let mean_f1 = scores.values().sum::<f64>() / scores.len() as f64;
        log::info!(
            "epoch {epoch}: loss {:.5} (cl {:.5}, ce {:.5}) dev mean micro-F1 {mean_f1:.4}",
            sum / n,
            sum_cl / n,
            sum_ce / n
        );
        epochs.push(EpochRecord {
            epoch,
            mean_loss: sum / n,
            mean_l_cl: sum_cl / n,
            mean_l_ce: sum_ce / n,
            batches: batches.len(),
            anchors_skipped: skipped,
            dev_micro_f1: scores,
            dev_mean_f1: mean_f1,
            thresholds: table.per_language.clone(),
        });
        if best.as_ref().is_none_or(|b| mean_f1 > b.0) {
            best = Some((mean_f1, epoch, params.clone(), table));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_f1, selected, params, thresholds) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        thresholds,
        report: TrainReport {
            epochs,
            selected_epoch: selected,
            best_dev_mean_f1: best_f1,
            stopped_early,
        },
    })
}

/// [`train_from`] starting at [`ModelParams::init`].
pub fn train(
    train: &Dataset,
    dev: &Dataset,
    model_cfg: &ModelConfig,
    cl_cfg: &ContrastiveConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let init = ModelParams::init(model_cfg)?;
    train_from(init, train, dev, model_cfg, cl_cfg, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            ..Default::default()
        }
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut p = DArray::row(&[1.0, -2.0, 0.5]).unwrap();
        let g = DArray::row(&[0.3, -7.0, 1e-3]).unwrap();
        let mut s = AdamState::new([&p]);
        let c = cfg(0.01);
        adam_step(&mut [&mut p], &[&g], &mut s, &c).unwrap();
        let want = [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01];
        for (x, w) in p.data().iter().zip(want) {
            assert!((x - w).abs() <= 0.01 * 1e-4, "{x} vs {w}");
        }
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = DArray::row(&[1.0, 2.0]).unwrap();
        let before = p.clone();
        let g = DArray::zeros(1, 2);
        let mut s = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[&g], &mut s, &cfg(0.1)).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn two_steps_match_recurrence() {
        let c = cfg(0.05);
        let mut p = DArray::row(&[0.7]).unwrap();
        let mut s = AdamState::new([&p]);
        let grads = [0.4, -0.1];
        for g in grads {
            adam_step(&mut [&mut p], &[&DArray::row(&[g]).unwrap()], &mut s, &c).unwrap();
        }
        // hand-unrolled recurrence
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.05);
        let (mut x, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            let t = t as i32 + 1;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        assert!((p.item() - x).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = DArray::row(&[1.0, 2.0]).unwrap();
        let g = DArray::row(&[1.0]).unwrap();
        let mut s = AdamState::new([&p]);
        assert!(adam_step(&mut [&mut p], &[&g], &mut s, &cfg(0.1)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 1, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { alpha: -0.1, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::synthetic().validate().is_ok());
        assert_eq!(TrainConfig::plm_parity().learning_rate, 1e-6);
    }

    #[test]
    fn mix_separates_streams() {
        assert_ne!(mix(0, 1), mix(0, 2));
        assert_ne!(mix(1, 1), mix(2, 1));
        assert_eq!(mix(7, 3), mix(7, 3));
    }
}
