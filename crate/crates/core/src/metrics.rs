//! Multi-label evaluation: pooled (micro) and per-label (macro) F1.
//!
//! Conventions: a corpus with TP = FP = FN = 0 scores F1 = 1.0; precision
//! with no predictions is 1.0 only when nothing was missed (and likewise for
//! recall), so `precision(p, g) == recall(g, p)` always holds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LabelSet;
use crate::model::{predict_batch, predict_probabilities, ModelConfig, ModelParams};
use crate::thresholds::{apply_threshold, ThresholdTable};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn of(pred: &LabelSet, gold: &LabelSet) -> Counts {
        let tp = pred.iter().filter(|&l| gold.contains(l)).count() as u64;
        Counts {
            tp,
            fp: pred.len() as u64 - tp,
            fn_: gold.len() as u64 - tp,
        }
    }
}

pub fn f1_from_counts(c: Counts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

fn ratio(tp: u64, other: u64, complement: u64) -> f64 {
    match tp + other {
        0 if complement == 0 => 1.0,
        0 => 0.0,
        d => tp as f64 / d as f64,
    }
}

pub fn precision_from_counts(c: Counts) -> f64 {
    ratio(c.tp, c.fp, c.fn_)
}

pub fn recall_from_counts(c: Counts) -> f64 {
    ratio(c.tp, c.fn_, c.fp)
}

fn check_lengths(preds: &[LabelSet], gold: &[LabelSet]) -> Result<()> {
    if preds.len() != gold.len() {
        return Err(Error::usage(format!(
            "{} predictions but {} gold label sets",
            preds.len(),
            gold.len()
        )));
    }
    Ok(())
}

/// Pooled counts over every instance-label decision.
pub fn pooled_counts(preds: &[LabelSet], gold: &[LabelSet]) -> Result<Counts> {
    check_lengths(preds, gold)?;
    let mut c = Counts::default();
    for (p, g) in preds.iter().zip(gold) {
        c.add(Counts::of(p, g));
    }
    Ok(c)
}

pub fn micro_f1(preds: &[LabelSet], gold: &[LabelSet]) -> Result<f64> {
    Ok(f1_from_counts(pooled_counts(preds, gold)?))
}

pub fn precision(preds: &[LabelSet], gold: &[LabelSet]) -> Result<f64> {
    Ok(precision_from_counts(pooled_counts(preds, gold)?))
}

pub fn recall(preds: &[LabelSet], gold: &[LabelSet]) -> Result<f64> {
    Ok(recall_from_counts(pooled_counts(preds, gold)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: usize,
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub predicted: u64,
}

fn label_counts(preds: &[LabelSet], gold: &[LabelSet], num_labels: usize) -> Vec<Counts> {
    let mut per = vec![Counts::default(); num_labels];
    for (p, g) in preds.iter().zip(gold) {
        for l in 0..num_labels {
            match (p.contains(l), g.contains(l)) {
                (true, true) => per[l].tp += 1,
                (true, false) => per[l].fp += 1,
                (false, true) => per[l].fn_ += 1,
                (false, false) => {}
            }
        }
    }
    per
}

pub fn per_label(
    preds: &[LabelSet],
    gold: &[LabelSet],
    names: &[String],
) -> Result<Vec<LabelScore>> {
    check_lengths(preds, gold)?;
    Ok(label_counts(preds, gold, names.len())
        .into_iter()
        .enumerate()
        .map(|(label, c)| LabelScore {
            label,
            name: names[label].clone(),
            precision: precision_from_counts(c),
            recall: recall_from_counts(c),
            f1: f1_from_counts(c),
            support: c.tp + c.fn_,
            predicted: c.tp + c.fp,
        })
        .collect())
}

/// Unweighted mean of per-label F1 over labels that occur in the gold
/// standard or the predictions; 1.0 if no label occurs at all.
pub fn macro_f1(preds: &[LabelSet], gold: &[LabelSet], num_labels: usize) -> Result<f64> {
    check_lengths(preds, gold)?;
    let scores: Vec<f64> = label_counts(preds, gold, num_labels)
        .into_iter()
        .filter(|c| c.tp + c.fp + c.fn_ > 0)
        .map(f1_from_counts)
        .collect();
    if scores.is_empty() {
        return Ok(1.0);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageReport {
    pub micro_f1: f64,
    pub threshold: f64,
    /// True when the language had no tuned threshold and was scored with
    /// the zero-shot threshold.
    pub zero_shot: bool,
    pub examples: usize,
    pub counts: Counts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_label: Vec<LabelScore>,
    pub per_language: BTreeMap<String, LanguageReport>,
    pub counts: Counts,
    pub examples: usize,
    /// Examples that could not be scored (e.g. missing features).
    pub failures: usize,
}

/// One scored example: its language, the threshold used, prediction and gold.
#[derive(Clone, Debug)]
pub struct Scored {
    pub language: String,
    pub threshold: f64,
    pub zero_shot: bool,
    pub predicted: LabelSet,
    pub gold: LabelSet,
}

/// Aggregate scored examples into a report. Aggregation order is the
/// sorted language order, independent of input order.
pub fn aggregate(scored: &[Scored], label_names: &[String], failures: usize) -> EvalReport {
    let preds: Vec<LabelSet> = scored.iter().map(|s| s.predicted.clone()).collect();
    let gold: Vec<LabelSet> = scored.iter().map(|s| s.gold.clone()).collect();
    let counts = pooled_counts(&preds, &gold).expect("equal lengths");
    let mut per_language: BTreeMap<String, LanguageReport> = BTreeMap::new();
    for s in scored {
        let entry = per_language
            .entry(s.language.clone())
            .or_insert_with(|| LanguageReport {
                micro_f1: 0.0,
                threshold: s.threshold,
                zero_shot: s.zero_shot,
                examples: 0,
                counts: Counts::default(),
            });
        entry.examples += 1;
        entry.counts.add(Counts::of(&s.predicted, &s.gold));
    }
    for r in per_language.values_mut() {
        r.micro_f1 = f1_from_counts(r.counts);
    }
    EvalReport {
        micro_f1: f1_from_counts(counts),
        macro_f1: macro_f1(&preds, &gold, label_names.len()).expect("equal lengths"),
        per_label: per_label(&preds, &gold, label_names).expect("equal lengths"),
        per_language,
        counts,
        examples: scored.len(),
        failures,
    }
}

impl EvalReport {
    /// Tab-separated table, one row per language plus an `ALL` row.
    pub fn language_table(&self) -> String {
        let mut out = String::from("language\texamples\tthreshold\tzero_shot\ttp\tfp\tfn\tmicro_f1\n");
        for (lang, r) in &self.per_language {
            out.push_str(&format!(
                "{lang}\t{}\t{:.2}\t{}\t{}\t{}\t{}\t{:.6}\n",
                r.examples, r.threshold, r.zero_shot, r.counts.tp, r.counts.fp, r.counts.fn_, r.micro_f1
            ));
        }
        out.push_str(&format!(
            "ALL\t{}\t-\t-\t{}\t{}\t{}\t{:.6}\n",
            self.examples, self.counts.tp, self.counts.fp, self.counts.fn_, self.micro_f1
        ));
        out
    }

    /// Mean of the per-language micro-F1 scores.
    pub fn mean_language_f1(&self) -> f64 {
        if self.per_language.is_empty() {
            return 0.0;
        }
        self.per_language.values().map(|r| r.micro_f1).sum::<f64>() / self.per_language.len() as f64
    }
}

/// Probabilities for every example of `dataset`. Examples whose features
/// do not fit the model yield an error in their slot; the rest are scored.
pub fn predict_all(
    dataset: &Dataset,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Vec<Result<Vec<f64>>> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    match predict_batch(dataset, &all, params, cfg) {
        Ok(probs) => probs.into_iter().map(Ok).collect(),
        Err(_) => dataset
            .features
            .iter()
            .map(|f| predict_probabilities(f, params, cfg))
            .collect(),
    }
}

/// Score `dataset` with each language's tuned threshold; languages absent
/// from `table` use its zero-shot threshold. Examples that cannot be
/// predicted are logged and counted in `failures`.
pub fn evaluate(
    dataset: &Dataset,
    params: &ModelParams,
    cfg: &ModelConfig,
    table: &ThresholdTable,
    label_names: &[String],
) -> Result<EvalReport> {
    if label_names.len() != cfg.num_labels {
        return Err(Error::usage(format!(
            "{} label names for a model with {} labels",
            label_names.len(),
            cfg.num_labels
        )));
    }
    let mut scored = Vec::with_capacity(dataset.len());
    let mut failures = 0;
    for (ex, probs) in dataset.examples.iter().zip(predict_all(dataset, params, cfg)) {
        let probs = match probs {
            Ok(p) => p,
            Err(e) => {
                log::error!("example {}: {e}", ex.id);
                failures += 1;
                continue;
            }
        };
        let (threshold, zero_shot) = table.threshold_for(&ex.language);
        let predicted = apply_threshold(std::slice::from_ref(&probs), threshold).remove(0);
        scored.push(Scored {
            language: ex.language.clone(),
            threshold,
            zero_shot,
            predicted,
            gold: ex.labels.clone(),
        });
    }
    Ok(aggregate(&scored, label_names, failures))
}
