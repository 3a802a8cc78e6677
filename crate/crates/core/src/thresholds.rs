//! Per-language decision thresholds chosen by exhaustive grid search.
//!
//! A label is predicted when its sigmoid probability is strictly greater
//! than the threshold. During tuning a grid point is credited with the
//! lower of its micro-F1 under `p > θ` and under `p ≥ θ`, so a threshold
//! never sits exactly on a tuning probability whose decision would flip
//! with the tie rule. For probabilities that avoid the grid (the usual
//! case for model outputs) both scores coincide.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LabelSet;
use crate::metrics::{f1_from_counts, Counts};

pub const DEFAULT_GRID_STEP: f64 = 0.01;

/// The search grid `{1/K, 2/K, …, (K−1)/K}` with `K = 1/step`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    divisions: u32,
}

impl Grid {
    pub fn new(step: f64) -> Result<Self> {
        if !(step > 0.0 && step <= 0.5) {
            return Err(Error::config(format!("grid step {step} outside (0, 0.5]")));
        }
        let k = (1.0 / step).round();
        if ((1.0 / step) - k).abs() > 1e-9 * k {
            return Err(Error::config(format!(
                "grid step {step} does not divide 1 evenly"
            )));
        }
        Ok(Self {
            divisions: k as u32,
        })
    }

    pub fn step(&self) -> f64 {
        1.0 / self.divisions as f64
    }

    pub fn point(&self, index: u32) -> f64 {
        index as f64 / self.divisions as f64
    }

    /// Interior grid indices `1..K`.
    pub fn indices(&self) -> std::ops::Range<u32> {
        1..self.divisions
    }

    /// Grid index of `theta`, if it lies on the grid.
    pub fn index_of(&self, theta: f64) -> Option<u32> {
        let x = theta * self.divisions as f64;
        let k = x.round();
        ((x - k).abs() < 1e-6 && k >= 1.0 && k < self.divisions as f64).then_some(k as u32)
    }
}

/// Labels whose probability is strictly above `theta`, per row.
pub fn apply_threshold(probs: &[Vec<f64>], theta: f64) -> Vec<LabelSet> {
    probs
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &p)| p > theta)
                .map(|(l, _)| l)
                .collect()
        })
        .collect()
}

fn counts_at(probs: &[Vec<f64>], gold: &[LabelSet], theta: f64, inclusive: bool) -> Counts {
    let mut c = Counts::default();
    for (row, g) in probs.iter().zip(gold) {
        for (l, &p) in row.iter().enumerate() {
            let predicted = if inclusive { p >= theta } else { p > theta };
            match (predicted, g.contains(l)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        // gold labels beyond the probability width are always missed
        c.fn_ += g.iter().filter(|&l| l >= row.len()).count() as u64;
    }
    c
}

/// Micro-F1 credited to a grid point during tuning.
pub fn tuning_score(probs: &[Vec<f64>], gold: &[LabelSet], theta: f64) -> f64 {
    let strict = f1_from_counts(counts_at(probs, gold, theta, false));
    let inclusive = f1_from_counts(counts_at(probs, gold, theta, true));
    strict.min(inclusive)
}

/// Smallest grid threshold achieving the maximal tuning micro-F1.
pub fn tune_threshold(probs: &[Vec<f64>], gold: &[LabelSet], grid_step: f64) -> Result<f64> {
    let grid = Grid::new(grid_step)?;
    if probs.len() != gold.len() {
        return Err(Error::usage(format!(
            "tune_threshold: {} probability rows but {} gold sets",
            probs.len(),
            gold.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::usage("tune_threshold: no examples"));
    }
    let mut best = (f64::NEG_INFINITY, grid.indices().start);
    for k in grid.indices() {
        let score = tuning_score(probs, gold, grid.point(k));
        if score > best.0 {
            best = (score, k);
        }
    }
    Ok(grid.point(best.1))
}

/// Arithmetic mean of per-language thresholds, rounded to the nearest grid
/// point with ties going down.
pub fn zero_shot_threshold<'a>(
    thresholds: impl IntoIterator<Item = &'a f64>,
    grid_step: f64,
) -> Result<f64> {
    let grid = Grid::new(grid_step)?;
    let mut sum: u64 = 0;
    let mut n: u64 = 0;
    for &t in thresholds {
        let k = grid
            .index_of(t)
            .ok_or_else(|| Error::usage(format!("threshold {t} is not on the {grid_step} grid")))?;
        sum += u64::from(k);
        n += 1;
    }
    if n == 0 {
        return Err(Error::usage("zero_shot_threshold: no language thresholds"));
    }
    // ceil((2·sum − n) / 2n) == round-half-down(sum / n)
    let k = (2 * sum - n).div_ceil(2 * n);
    Ok(grid.point(k as u32))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub grid_step: f64,
    pub per_language: BTreeMap<String, f64>,
    pub zero_shot: f64,
}

impl ThresholdTable {
    /// Build a table from tuned per-language thresholds; the zero-shot
    /// threshold is derived from them.
    pub fn new(per_language: BTreeMap<String, f64>, grid_step: f64) -> Result<Self> {
        let zero_shot = zero_shot_threshold(per_language.values(), grid_step)?;
        Ok(Self {
            grid_step,
            per_language,
            zero_shot,
        })
    }

    /// Tune one threshold per language. Languages with no examples are
    /// skipped with a warning.
    pub fn tune<'a>(
        by_language: impl IntoIterator<Item = (&'a str, Vec<Vec<f64>>, Vec<LabelSet>)>,
        grid_step: f64,
    ) -> Result<Self> {
        let mut per_language = BTreeMap::new();
        for (lang, probs, gold) in by_language {
            if probs.is_empty() {
                log::warn!("language {lang} has no tuning examples; skipped");
                continue;
            }
            per_language.insert(lang.to_string(), tune_threshold(&probs, &gold, grid_step)?);
        }
        Self::new(per_language, grid_step)
    }

    /// Threshold for `language` and whether it was routed to zero-shot.
    pub fn threshold_for(&self, language: &str) -> (f64, bool) {
        match self.per_language.get(language) {
            Some(&t) => (t, false),
            None => (self.zero_shot, true),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let grid = Grid::new(self.grid_step)?;
        for (lang, &t) in &self.per_language {
            if grid.index_of(t).is_none() {
                return Err(Error::config(format!(
                    "threshold {t} for {lang} is not on the grid"
                )));
            }
        }
        let expected = zero_shot_threshold(self.per_language.values(), self.grid_step)?;
        if (expected - self.zero_shot).abs() > 1e-12 {
            return Err(Error::config(format!(
                "zero-shot threshold {} differs from the grid-rounded mean {expected}",
                self.zero_shot
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("threshold table serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        table.validate()?;
        Ok(table)
    }
}
