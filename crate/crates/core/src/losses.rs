//! Contrastive and classification objectives.
//!
//! Every contrastive loss here reduces to one shared form. For an anchor
//! `i` with positive set `P(i)` and denominator weights `w_ik`,
//!
//! ```text
//! ℓ_i = −1/|P(i)| Σ_{j∈P(i)} log( exp(s_ij/τ) / Σ_k w_ik exp(s_ik/τ) )
//! ```
//!
//! where `s` is cosine similarity. The variants differ only in how `P(i)`
//! and `w_ik` are derived from the batch labels:
//!
//! * [`nt_xent`]: the dropout/augmentation twin is the sole positive; every
//!   other row has weight 1.
//! * [`supcon`]: single-label classes; rows of the same class are positives.
//! * [`multilabel_supcon`]: rows with an identical [`LabelSet`] are
//!   positives and each negative `k` is weighted by `W(Δ(i, k))`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dcore::{pairwise_cosine_similarity, DArray, Graph, Var};
use crate::error::{Error, Result};

/// A subset of the label vocabulary, stored as sorted indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(BTreeSet<usize>);

impl LabelSet {
    pub fn new(members: impl IntoIterator<Item = usize>) -> Self {
        Self(members.into_iter().collect())
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: usize) -> bool {
        self.0.insert(label)
    }

    pub fn contains(&self, label: usize) -> bool {
        self.0.contains(&label)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn is_subset(&self, other: &LabelSet) -> bool {
        self.0.is_subset(&other.0)
    }

    /// Members outside `0..num_labels`, if any.
    pub fn out_of_range(&self, num_labels: usize) -> Option<usize> {
        self.0.range(num_labels..).next().copied()
    }

    /// Dense 0/1 indicator of length `num_labels`.
    pub fn indicator(&self, num_labels: usize) -> Vec<f64> {
        let mut v = vec![0.0; num_labels];
        for l in self.iter().filter(|&l| l < num_labels) {
            v[l] = 1.0;
        }
        v
    }
}

impl FromIterator<usize> for LabelSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self::new(iter)
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, l) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, "}}")
    }
}

/// Label distance: size of the symmetric difference.
pub fn delta(a: &LabelSet, b: &LabelSet) -> usize {
    a.0.symmetric_difference(&b.0).count()
}

/// Negative-pair weight as a function of label distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFn {
    /// `W(Δ) = Δ`
    Identity,
    /// `W(Δ) = 1`
    Constant,
    /// `W(Δ) = table[Δ]`; must cover `0..=L`.
    Table(Vec<f64>),
}

impl WeightFn {
    pub fn weight(&self, delta: usize) -> f64 {
        match self {
            WeightFn::Identity => delta as f64,
            WeightFn::Constant => 1.0,
            WeightFn::Table(t) => t.get(delta).or(t.last()).copied().unwrap_or(1.0),
        }
    }

    /// Non-decreasing over `0..=num_labels` and positive for `Δ ≥ 1`.
    pub fn validate(&self, num_labels: usize) -> Result<()> {
        if let WeightFn::Table(t) = self {
            if t.len() <= num_labels {
                return Err(Error::config(format!(
                    "weight table has {} entries, needs {} (Δ = 0..={num_labels})",
                    t.len(),
                    num_labels + 1
                )));
            }
            if t.iter().any(|w| !w.is_finite()) {
                return Err(Error::config("weight table contains non-finite values"));
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for d in 0..=num_labels {
            let w = self.weight(d);
            if w < prev {
                return Err(Error::config(format!(
                    "weight function decreases at Δ={d} ({prev} -> {w})"
                )));
            }
            if d >= 1 && w <= 0.0 {
                return Err(Error::config(format!(
                    "weight function must be positive for Δ ≥ 1, got W({d}) = {w}"
                )));
            }
            prev = w;
        }
        Ok(())
    }
}

/// Which rows enter the denominator of an anchor's softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorConvention {
    /// Negatives only.
    #[default]
    NegativesOnly,
    /// Every row except the anchor; positives carry weight 1.
    AllOthers,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorReduction {
    #[default]
    Mean,
    Sum,
}

/// What to do with an anchor that has no positive in the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPositives {
    #[default]
    Skip,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub weight_fn: WeightFn,
    pub denominator: DenominatorConvention,
    pub reduction: AnchorReduction,
    pub empty_positives: EmptyPositives,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            weight_fn: WeightFn::Identity,
            denominator: DenominatorConvention::NegativesOnly,
            reduction: AnchorReduction::Mean,
            empty_positives: EmptyPositives::Skip,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self, num_labels: usize) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        self.weight_fn.validate(num_labels)
    }
}

/// A contrastive loss node plus anchor bookkeeping.
#[derive(Clone, Copy, Debug)]
pub struct ContrastiveLoss {
    pub loss: Var,
    pub anchors_used: usize,
    /// Anchors dropped for lack of positives or of denominator terms.
    pub anchors_skipped: usize,
}

/// Row-major `m×m` positive weights (`1/|P(i)|`) and denominator weights.
struct AnchorMasks {
    m: usize,
    positive: Vec<f64>,
    denominator: Vec<f64>,
}

impl AnchorMasks {
    fn new(m: usize) -> Self {
        Self {
            m,
            positive: vec![0.0; m * m],
            denominator: vec![0.0; m * m],
        }
    }
}

fn check_rows(g: &Graph, z: Var, labels: usize, op: &str) -> Result<usize> {
    let (m, _) = g.value(z).dims()?;
    if m != labels {
        return Err(Error::usage(format!(
            "{op}: {m} embedding rows but {labels} label sets"
        )));
    }
    Ok(m)
}

/// Build the loss graph for precomputed anchor masks.
fn masked_contrastive(
    g: &mut Graph,
    z: Var,
    masks: AnchorMasks,
    cfg: &ContrastiveConfig,
    op: &str,
) -> Result<ContrastiveLoss> {
    if !(cfg.temperature > 0.0) {
        return Err(Error::config(format!(
            "temperature must be positive, got {}",
            cfg.temperature
        )));
    }
    let m = masks.m;
    let mut included = vec![0.0; m];
    let mut pad = vec![0.0; m];
    let mut skipped = 0;
    for i in 0..m {
        let row = i * m..(i + 1) * m;
        let has_pos = masks.positive[row.clone()].iter().any(|&p| p > 0.0);
        let has_den = masks.denominator[row].iter().any(|&w| w > 0.0);
        if !has_pos && cfg.empty_positives == EmptyPositives::Error {
            return Err(Error::usage(format!("{op}: anchor {i} has no positive")));
        }
        if has_pos && has_den {
            included[i] = 1.0;
        } else {
            pad[i] = 1.0;
            skipped += 1;
        }
    }
    if skipped > 0 {
        log::debug!("{op}: skipped {skipped} of {m} anchors");
    }
    let used = m - skipped;
    if used == 0 {
        let loss = g.constant(DArray::zeros(1, 1));
        return Ok(ContrastiveLoss {
            loss,
            anchors_used: 0,
            anchors_skipped: skipped,
        });
    }

    let sim = pairwise_cosine_similarity(g, z)?;
    let logits = g.scale(sim, 1.0 / cfg.temperature)?;

    // Per-row shift for a stable log-sum-exp. The shift is a constant, and
    // log Σ w exp(l − c) + c does not depend on c, so gradients are exact.
    let lv = g.value(logits);
    let shift: Vec<f64> = (0..m)
        .map(|i| {
            (0..m)
                .filter(|&k| masks.denominator[i * m + k] > 0.0)
                .map(|k| lv.get(i, k))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .map(|c| if c.is_finite() { c } else { 0.0 })
        .collect();
    let neg_shift = g.constant(DArray::raw(m, 1, shift.iter().map(|c| -c).collect()));
    let shifted = g.add(logits, neg_shift)?;
    let expd = g.exp(shifted)?;
    let weights = g.constant(DArray::raw(m, m, masks.denominator));
    let weighted = g.mul(expd, weights)?;
    let denom = g.sum_rows(weighted)?;
    let pad = g.constant(DArray::raw(m, 1, pad));
    let denom = g.add(denom, pad)?;
    let log_denom = g.log(denom)?;
    let shift = g.constant(DArray::raw(m, 1, shift));
    let log_denom = g.add(log_denom, shift)?;

    let included = g.constant(DArray::raw(m, 1, included));
    let denom_term = g.mul(log_denom, included)?;
    let denom_term = g.sum_all(denom_term)?;
    let pos_weights = g.constant(DArray::raw(m, m, masks.positive));
    let pos_term = g.mul(logits, pos_weights)?;
    let pos_term = g.sum_all(pos_term)?;
    let pos_term = g.scale(pos_term, -1.0)?;
    let total = g.add(denom_term, pos_term)?;
    let loss = match cfg.reduction {
        AnchorReduction::Sum => total,
        AnchorReduction::Mean => g.scale(total, 1.0 / used as f64)?,
    };
    Ok(ContrastiveLoss {
        loss,
        anchors_used: used,
        anchors_skipped: skipped,
    })
}

/// SimCLR loss over view-paired rows `(2k, 2k+1)`; every other row is in
/// the denominator regardless of `cfg.denominator`.
pub fn nt_xent(g: &mut Graph, z: Var, cfg: &ContrastiveConfig) -> Result<ContrastiveLoss> {
    let (m, _) = g.value(z).dims()?;
    if m == 0 || m % 2 != 0 {
        return Err(Error::usage(format!(
            "nt_xent: needs an even, non-zero number of rows, got {m}"
        )));
    }
    let mut masks = AnchorMasks::new(m);
    for i in 0..m {
        masks.positive[i * m + (i ^ 1)] = 1.0;
        for k in (0..m).filter(|&k| k != i) {
            masks.denominator[i * m + k] = 1.0;
        }
    }
    masked_contrastive(g, z, masks, cfg, "nt_xent")
}

/// Supervised contrastive loss over single-label examples.
pub fn supcon(
    g: &mut Graph,
    z: Var,
    labels: &[LabelSet],
    cfg: &ContrastiveConfig,
) -> Result<ContrastiveLoss> {
    let m = check_rows(g, z, labels.len(), "supcon")?;
    let class: Vec<usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| match (l.len(), l.iter().next()) {
            (1, Some(c)) => Ok(c),
            _ => Err(Error::usage(format!(
                "supcon: row {i} must carry exactly one label, got {l}"
            ))),
        })
        .collect::<Result<_>>()?;
    let mut masks = AnchorMasks::new(m);
    for i in 0..m {
        let positives: Vec<usize> = (0..m).filter(|&j| j != i && class[j] == class[i]).collect();
        for &j in &positives {
            masks.positive[i * m + j] = 1.0 / positives.len() as f64;
        }
        for k in (0..m).filter(|&k| k != i) {
            let negative = class[k] != class[i];
            if negative || cfg.denominator == DenominatorConvention::AllOthers {
                masks.denominator[i * m + k] = 1.0;
            }
        }
    }
    masked_contrastive(g, z, masks, cfg, "supcon")
}

/// Multi-label weighted supervised contrastive loss.
///
/// Rows `i ≠ j` are positives iff their label sets are identical. Each
/// negative `k` contributes `W(Δ(i, k)) · exp(s_ik/τ)` to anchor `i`'s
/// denominator; under [`DenominatorConvention::AllOthers`] positives also
/// contribute with weight 1.
pub fn multilabel_supcon(
    g: &mut Graph,
    z: Var,
    labels: &[LabelSet],
    cfg: &ContrastiveConfig,
) -> Result<ContrastiveLoss> {
    let m = check_rows(g, z, labels.len(), "multilabel_supcon")?;
    if m < 2 {
        return Err(Error::usage(format!(
            "multilabel_supcon: needs at least 2 rows, got {m}"
        )));
    }
    let num_labels = labels
        .iter()
        .flat_map(LabelSet::iter)
        .max()
        .map_or(0, |l| l + 1);
    cfg.weight_fn.validate(num_labels)?;
    let mut masks = AnchorMasks::new(m);
    for i in 0..m {
        let positives: Vec<usize> = (0..m)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        for &j in &positives {
            masks.positive[i * m + j] = 1.0 / positives.len() as f64;
        }
        for k in (0..m).filter(|&k| k != i) {
            let d = delta(&labels[i], &labels[k]);
            masks.denominator[i * m + k] = if d > 0 {
                cfg.weight_fn.weight(d)
            } else if cfg.denominator == DenominatorConvention::AllOthers {
                1.0
            } else {
                0.0
            };
        }
    }
    masked_contrastive(g, z, masks, cfg, "multilabel_supcon")
}

/// Mean binary cross-entropy over every cell of `logits`, in the stable
/// form `t·softplus(−x) + (1−t)·softplus(x)`.
pub fn bce_with_logits(g: &mut Graph, logits: Var, targets: &DArray) -> Result<Var> {
    let x = g.value(logits);
    if x.dims()? != targets.dims()? {
        return Err(Error::Shape {
            op: "bce_with_logits",
            shapes: vec![x.shape().to_vec(), targets.shape().to_vec()],
        });
    }
    if targets.data().iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::usage("bce_with_logits: targets must be 0 or 1"));
    }
    let cells = targets.len();
    let (r, c) = targets.dims()?;
    let t = g.constant(targets.clone());
    let not_t = g.constant(DArray::raw(
        r,
        c,
        targets.data().iter().map(|t| 1.0 - t).collect(),
    ));
    let neg = g.scale(logits, -1.0)?;
    let sp_neg = g.softplus(neg)?;
    let sp_pos = g.softplus(logits)?;
    let a = g.mul(t, sp_neg)?;
    let b = g.mul(not_t, sp_pos)?;
    let cell = g.add(a, b)?;
    let total = g.sum_all(cell)?;
    g.scale(total, 1.0 / cells as f64)
}

/// Scalar values of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cl: f64,
    pub l_ce: f64,
    pub combined: f64,
    pub alpha: f64,
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// `α·l_ce + (1−α)·l_cl`, with gradients flowing through both terms.
pub fn combined_loss(
    g: &mut Graph,
    l_ce: Var,
    l_cl: Var,
    alpha: f64,
) -> Result<(Var, LossBreakdown)> {
    check_alpha(alpha)?;
    let ce = g.scale(l_ce, alpha)?;
    let cl = g.scale(l_cl, 1.0 - alpha)?;
    let combined = g.add(ce, cl)?;
    let breakdown = LossBreakdown {
        l_cl: g.scalar(l_cl),
        l_ce: g.scalar(l_ce),
        combined: g.scalar(combined),
        alpha,
    };
    Ok((combined, breakdown))
}
