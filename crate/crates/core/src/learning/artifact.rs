use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fgm::{FgmConfig, FgmTarget};
use super::head::ClassifierHead;
use super::train::TrainingConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadDims {
    pub num_classes: usize,
    pub input_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadMetadata {
    /// Which component the head belongs to (`fsi`, `matcher`, `aligner`).
    pub component: String,
    pub seed: u64,
    pub training: TrainingConfig,
    pub fgm: FgmConfig,
    pub fgm_target: FgmTarget,
    /// Component-specific settings such as the matching mode.
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// On-disk form of a trained head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadArtifact {
    pub dims: HeadDims,
    /// Row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub dropout_rate: f64,
    pub metadata: HeadMetadata,
}

impl HeadArtifact {
    pub fn new(head: &ClassifierHead, metadata: HeadMetadata) -> Self {
        HeadArtifact {
            dims: HeadDims {
                num_classes: head.num_classes(),
                input_dim: head.input_dim(),
            },
            weight: head.weight().to_vec(),
            bias: head.bias().to_vec(),
            dropout_rate: head.dropout_rate(),
            metadata,
        }
    }

    /// Rebuilds the head, checking the stored shapes against each other and
    /// against `expected` (`num_classes`, `input_dim`) when given.
    pub fn to_head(&self, expected: Option<(usize, usize)>) -> Result<ClassifierHead> {
        if let Some((classes, dim)) = expected {
            if (classes, dim) != (self.dims.num_classes, self.dims.input_dim) {
                return Err(Error::Contract(format!(
                    "{} head is {}x{}, expected {classes}x{dim}",
                    self.metadata.component, self.dims.num_classes, self.dims.input_dim
                )));
            }
        }
        ClassifierHead::from_parts(
            self.dims.num_classes,
            self.dims.input_dim,
            self.weight.clone(),
            self.bias.clone(),
            self.dropout_rate,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
