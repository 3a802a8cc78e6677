//! Checkpoint files.
//!
//! A checkpoint is one JSON object:
//!
//! ```text
//! {
//!   "format": "framecl-checkpoint",
//!   "version": 1,
//!   "seed": 0,
//!   "model": { ModelConfig },
//!   "contrastive": { ContrastiveConfig },
//!   "train": { TrainConfig },
//!   "labels": ["F01", ...],
//!   "features": { "source": "hashed" | "external", "dim": 4096 },
//!   "selected_epoch": 13,
//!   "thresholds": { ThresholdTable } | null,
//!   "parameters": [ { "name": "encoder_weight", "shape": [r, c], "data": [...] }, ... ]
//! }
//! ```
//!
//! `data` is row-major. Floats are written in shortest round-trip form, so a
//! save/load cycle is exact and equal parameters give identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureSource, LabelVocabulary};
use crate::dcore::DArray;
use crate::error::{Error, Result};
use crate::losses::ContrastiveConfig;
use crate::model::{ModelConfig, ModelParams};
use crate::thresholds::ThresholdTable;
use crate::train::TrainConfig;

pub const FORMAT: &str = "framecl-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub source: FeatureSource,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub model: ModelConfig,
    pub contrastive: ContrastiveConfig,
    pub train: TrainConfig,
    pub labels: Vec<String>,
    pub features: FeatureSpec,
    pub selected_epoch: Option<usize>,
    pub thresholds: Option<ThresholdTable>,
    pub parameters: Vec<NamedArray>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &ModelParams,
        model: ModelConfig,
        contrastive: ContrastiveConfig,
        train: TrainConfig,
        vocab: &LabelVocabulary,
        features: FeatureSpec,
        thresholds: Option<ThresholdTable>,
        selected_epoch: Option<usize>,
    ) -> Self {
        let parameters = ModelParams::NAMES
            .iter()
            .zip(params.arrays())
            .map(|(name, a)| NamedArray {
                name: name.to_string(),
                shape: [a.rows(), a.cols()],
                data: a.data().to_vec(),
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            seed: train.seed,
            model,
            contrastive,
            train,
            labels: vocab.names().to_vec(),
            features,
            selected_epoch,
            thresholds,
            parameters,
        }
    }

    pub fn vocabulary(&self) -> Result<LabelVocabulary> {
        LabelVocabulary::new(self.labels.clone())
    }

    /// Rebuild and shape-check the parameter arrays.
    pub fn params(&self) -> Result<ModelParams> {
        if self.parameters.len() != ModelParams::NAMES.len() {
            return Err(Error::config(format!(
                "checkpoint has {} parameter arrays, expected {}",
                self.parameters.len(),
                ModelParams::NAMES.len()
            )));
        }
        let mut arrays = Vec::with_capacity(6);
        for (want, a) in ModelParams::NAMES.iter().zip(&self.parameters) {
            if a.name != *want {
                return Err(Error::config(format!(
                    "checkpoint parameter {:?} where {want:?} was expected",
                    a.name
                )));
            }
            arrays.push(DArray::matrix(a.shape[0], a.shape[1], a.data.clone())?);
        }
        let arrays: [DArray; 6] = arrays.try_into().expect("six arrays");
        let params = ModelParams::from_arrays(arrays);
        params.validate(&self.model)?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::config(format!("not a checkpoint (format {:?})", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {} (this build reads {VERSION})",
                self.version
            )));
        }
        self.model.validate()?;
        self.contrastive.validate(self.model.num_labels)?;
        if self.labels.len() != self.model.num_labels {
            return Err(Error::config(format!(
                "{} label names for {} labels",
                self.labels.len(),
                self.model.num_labels
            )));
        }
        if self.features.dim != self.model.d_in {
            return Err(Error::config(format!(
                "feature dimension {} but model input {}",
                self.features.dim, self.model.d_in
            )));
        }
        if let Some(t) = &self.thresholds {
            t.validate()?;
        }
        self.params().map(|_| ())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        ck.validate()?;
        Ok(ck)
    }
}
