//! Sentence encoders: text in, fixed-dimension vector out.
//!
//! Two backends exist. [`HashedNgramEncoder`] hashes character n-grams into a
//! normalized bag and needs no model; [`ExternalEncoder`] talks to a
//! pretrained-transformer service over HTTP.

mod external;
mod hashed;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use external::{ExternalEncoder, InfoResponse, EncodeRequest, EncodeResponse};
pub use hashed::{fnv1a64, hashed_ngram_backend, HashedNgramEncoder};

/// Reserved separator used to join the two sides of a pair (U+241F).
pub const SEP_TOKEN: char = '\u{241F}';

/// Dense encoder output. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("embedding entry {i} is not finite")));
        }
        Ok(Embedding(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Embedding(vec![0.0; dim])
    }

    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Embedding(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    HashedNgram,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub backend: Backend,
    pub dim: usize,
    pub max_len_sentence: usize,
    pub max_len_case: usize,
    pub ngram_orders: Vec<usize>,
    /// Base URL of an external encoder service, e.g. `http://127.0.0.1:8080`.
    pub endpoint: Option<String>,
    pub retries: usize,
    pub max_in_flight: usize,
    pub timeout_ms: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            backend: Backend::HashedNgram,
            dim: 1024,
            max_len_sentence: 128,
            max_len_case: 512,
            ngram_orders: vec![1, 2, 3],
            endpoint: None,
            retries: 2,
            max_in_flight: 4,
            timeout_ms: 30_000,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("encoder dim must be positive".into()));
        }
        if self.max_len_sentence == 0 || self.max_len_case == 0 {
            return Err(Error::Config("encoder max lengths must be positive".into()));
        }
        if self.backend == Backend::HashedNgram
            && (self.ngram_orders.is_empty() || self.ngram_orders.contains(&0))
        {
            return Err(Error::Config("ngram orders must be non-empty and positive".into()));
        }
        if self.backend == Backend::External && self.endpoint.is_none() {
            return Err(Error::Config("external backend needs an endpoint".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be positive".into()));
        }
        Ok(())
    }
}

pub trait SentenceEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// Encodes one text, truncated to `max_len` units first.
    fn encode(&self, text: &str, max_len: usize) -> Result<Embedding>;

    /// Encodes two texts as one separator-delimited sequence. Order matters.
    fn encode_joint(&self, text_a: &str, text_b: &str, max_len: usize) -> Result<Embedding>;

    fn encode_batch(&self, texts: &[&str], max_len: usize) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.encode(t, max_len)).collect()
    }
}

pub fn build_encoder(config: &EncoderConfig) -> Result<Arc<dyn SentenceEncoder>> {
    config.validate()?;
    Ok(match config.backend {
        Backend::HashedNgram => Arc::new(HashedNgramEncoder::new(config.dim, config.ngram_orders.clone())?),
        Backend::External => Arc::new(ExternalEncoder::connect(config)?),
    })
}

/// Prefix of at most `max_chars` Unicode scalar values.
pub fn truncate_chars(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((byte, _)) => &text[..byte],
        None => text,
    }
}

/// Per-side budget when two texts share one `max_len` sequence: three
/// positions are reserved for the start and separator markers.
pub fn pair_side_budget(max_len: usize) -> usize {
    max_len.saturating_sub(3) / 2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_counts_characters() {
        assert_eq!(truncate_chars("经审理查明", 2), "经审");
        assert_eq!(truncate_chars("ab", 5), "ab");
        assert_eq!(truncate_chars("ab", 0), "");
    }

    #[test]
    fn pair_budget() {
        assert_eq!(pair_side_budget(512), 254);
        assert_eq!(pair_side_budget(128), 62);
        assert_eq!(pair_side_budget(2), 0);
    }

    #[test]
    fn embedding_rejects_nan() {
        assert!(Embedding::new(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let bad = EncoderConfig { dim: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let ext = EncoderConfig { backend: Backend::External, ..Default::default() };
        assert!(ext.validate().is_err());
    }
}
