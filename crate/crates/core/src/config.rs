//! Run configuration: one flat set of keys covering folds, encoder,
//! training, FGM and pipeline options.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aligner::{DEFAULT_ALIGN_CLASS_WEIGHTS, DEFAULT_ALIGN_THRESHOLD};
use crate::encoder::{Backend, EncoderConfig};
use crate::error::{Error, Result};
use crate::fsi::{DEFAULT_FALLBACK_K, DEFAULT_THRESHOLD};
use crate::learning::{FgmConfig, Optimizer, TrainingConfig, FINE_TUNE_LEARNING_RATE, FROZEN_LEARNING_RATE};
use crate::matcher::{InputSource, MatchMode};
use crate::metrics::Aggregation;

/// A trainable pipeline component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Fsi,
    Matcher,
    Aligner,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Fsi, Component::Matcher, Component::Aligner];

    pub fn name(self) -> &'static str {
        match self {
            Component::Fsi => "fsi",
            Component::Matcher => "matcher",
            Component::Aligner => "aligner",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown component `{s}`")))
    }
}

/// Which feature selections the matcher is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSelection {
    Gold,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub k_folds: usize,
    pub seed: u64,

    pub backend: Backend,
    pub dim: usize,
    pub max_len_sentence: usize,
    pub max_len_case: usize,
    pub ngram_orders: Vec<usize>,
    pub endpoint: Option<String>,
    pub retries: usize,
    pub max_in_flight: usize,
    pub timeout_ms: u64,

    pub batch_size: usize,
    pub epochs: usize,
    /// Defaults by backend: 1e-3 for hashed n-grams, 5e-6 otherwise.
    pub learning_rate: Option<f64>,
    pub optimizer: Optimizer,
    pub dropout: f64,

    pub fgm_fsi: bool,
    pub fgm_matcher: bool,
    pub fgm_aligner: bool,
    pub fgm_epsilon: f64,

    pub match_mode: MatchMode,
    pub align_mode: MatchMode,
    pub input_source: InputSource,
    pub matcher_train_selection: TrainSelection,
    pub fsi_threshold: f64,
    pub fallback_k: usize,
    pub align_threshold: f64,
    pub conflict_resolution: bool,
    pub class_weights_align: Vec<f64>,
    pub aggregation: Aggregation,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let train = TrainingConfig::default();
        RunConfig {
            corpus: None,
            output_dir: PathBuf::from("runs"),
            k_folds: 5,
            seed: 42,
            backend: enc.backend,
            dim: enc.dim,
            max_len_sentence: enc.max_len_sentence,
            max_len_case: enc.max_len_case,
            ngram_orders: enc.ngram_orders,
            endpoint: enc.endpoint,
            retries: enc.retries,
            max_in_flight: enc.max_in_flight,
            timeout_ms: enc.timeout_ms,
            batch_size: train.batch_size,
            epochs: train.epochs,
            learning_rate: None,
            optimizer: train.optimizer,
            dropout: train.dropout,
            fgm_fsi: false,
            fgm_matcher: false,
            fgm_aligner: false,
            fgm_epsilon: FgmConfig::default().epsilon,
            match_mode: MatchMode::Siamese,
            align_mode: MatchMode::Siamese,
            input_source: InputSource::FeatureSentences,
            matcher_train_selection: TrainSelection::Gold,
            fsi_threshold: DEFAULT_THRESHOLD,
            fallback_k: DEFAULT_FALLBACK_K,
            align_threshold: DEFAULT_ALIGN_THRESHOLD,
            conflict_resolution: true,
            class_weights_align: DEFAULT_ALIGN_CLASS_WEIGHTS.to_vec(),
            aggregation: Aggregation::Mean,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::Config(format!("k_folds must be >= 2, got {}", self.k_folds)));
        }
        self.encoder_config().validate()?;
        for c in Component::ALL {
            self.training_for(c, 0).validate()?;
            let fgm = self.fgm_for(c);
            if fgm.enabled {
                fgm.validate()?;
            }
        }
        if self.align_mode == MatchMode::Matching {
            return Err(Error::Config("align_mode must be concat or siamese".into()));
        }
        for (name, t) in [("fsi_threshold", self.fsi_threshold), ("align_threshold", self.align_threshold)] {
            if !(0.0..1.0).contains(&t) {
                return Err(Error::Config(format!("{name} {t} outside [0, 1)")));
            }
        }
        if self.fallback_k == 0 {
            return Err(Error::Config("fallback_k must be >= 1".into()));
        }
        if self.class_weights_align.len() != 2 {
            return Err(Error::Config("class_weights_align needs exactly two weights".into()));
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            backend: self.backend,
            dim: self.dim,
            max_len_sentence: self.max_len_sentence,
            max_len_case: self.max_len_case,
            ngram_orders: self.ngram_orders.clone(),
            endpoint: self.endpoint.clone(),
            retries: self.retries,
            max_in_flight: self.max_in_flight,
            timeout_ms: self.timeout_ms,
        }
    }

    pub fn effective_learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.backend {
            Backend::HashedNgram => FROZEN_LEARNING_RATE,
            Backend::External => FINE_TUNE_LEARNING_RATE,
        })
    }

    /// Seed used inside fold `fold_id`.
    pub fn fold_seed(&self, fold_id: usize) -> u64 {
        self.seed.wrapping_add(fold_id as u64)
    }

    pub fn training_for(&self, component: Component, fold_id: usize) -> TrainingConfig {
        TrainingConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.effective_learning_rate(),
            optimizer: self.optimizer,
            dropout: self.dropout,
            seed: self.fold_seed(fold_id),
            class_weights: match component {
                Component::Aligner => Some(self.class_weights_align.clone()),
                _ => None,
            },
        }
    }

    pub fn fgm_for(&self, component: Component) -> FgmConfig {
        let enabled = match component {
            Component::Fsi => self.fgm_fsi,
            Component::Matcher => self.fgm_matcher,
            Component::Aligner => self.fgm_aligner,
        };
        FgmConfig { enabled, epsilon: self.fgm_epsilon }
    }

    pub fn max_len_for(&self, component: Component) -> usize {
        match component {
            Component::Matcher => self.max_len_case,
            _ => self.max_len_sentence,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.effective_learning_rate(), 1e-3);
        assert_eq!(c.training_for(Component::Aligner, 0).class_weights, Some(vec![0.1, 1.0]));
        assert_eq!(c.training_for(Component::Fsi, 3).seed, 45);
        assert_eq!(c.max_len_for(Component::Matcher), 512);
        assert_eq!(c.max_len_for(Component::Aligner), 128);
    }

    #[test]
    fn external_backend_uses_fine_tune_rate() {
        let c = RunConfig { backend: Backend::External, ..Default::default() };
        assert_eq!(c.effective_learning_rate(), 5e-6);
        let c = RunConfig { learning_rate: Some(0.01), ..c };
        assert_eq!(c.effective_learning_rate(), 0.01);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"k_fold": 5}"#).unwrap_err();
        assert!(err.to_string().contains("k_fold"));
        let c: RunConfig = serde_json::from_str(r#"{"match_mode": "concat", "fgm_matcher": true}"#).unwrap();
        assert_eq!(c.match_mode, MatchMode::Concat);
        assert!(c.fgm_for(Component::Matcher).enabled);
        assert!(!c.fgm_for(Component::Fsi).enabled);
    }

    #[test]
    fn invalid_values() {
        for bad in [
            RunConfig { k_folds: 1, ..Default::default() },
            RunConfig { align_mode: MatchMode::Matching, ..Default::default() },
            RunConfig { align_threshold: 1.5, ..Default::default() },
            RunConfig { class_weights_align: vec![1.0], ..Default::default() },
            RunConfig { fgm_fsi: true, fgm_epsilon: 0.0, ..Default::default() },
            RunConfig { dim: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn component_names() {
        for c in Component::ALL {
            assert_eq!(c.name().parse::<Component>().unwrap(), c);
        }
        assert!("all".parse::<Component>().is_err());
    }
}
