use super::{pair_side_budget, truncate_chars, Embedding, EncoderConfig, SentenceEncoder, SEP_TOKEN};
use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over UTF-8 bytes. Stable across platforms and runs.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |hash, &b| (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Character n-gram feature hashing with L2 normalization.
#[derive(Debug, Clone)]
pub struct HashedNgramEncoder {
    dim: usize,
    orders: Vec<usize>,
}

impl HashedNgramEncoder {
    pub fn new(dim: usize, orders: Vec<usize>) -> Result<Self> {
        if dim == 0 || orders.is_empty() || orders.contains(&0) {
            return Err(Error::Config(
                "hashed encoder needs dim > 0 and positive n-gram orders".into(),
            ));
        }
        Ok(HashedNgramEncoder { dim, orders })
    }

    pub fn vectorize(&self, text: &str) -> Embedding {
        let chars: Vec<char> = text.chars().collect();
        let mut buckets = vec![0.0f64; self.dim];
        let mut gram = String::new();
        for &n in &self.orders {
            if chars.len() < n {
                continue;
            }
            for window in chars.windows(n) {
                gram.clear();
                gram.extend(window);
                let bucket = (fnv1a64(gram.as_bytes()) % self.dim as u64) as usize;
                buckets[bucket] += 1.0;
            }
        }
        let norm = buckets.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            buckets.iter_mut().for_each(|v| *v /= norm);
        }
        Embedding::from_finite(buckets)
    }
}

impl SentenceEncoder for HashedNgramEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str, max_len: usize) -> Result<Embedding> {
        Ok(self.vectorize(truncate_chars(text, max_len)))
    }

    fn encode_joint(&self, text_a: &str, text_b: &str, max_len: usize) -> Result<Embedding> {
        let budget = pair_side_budget(max_len);
        let mut joined = String::with_capacity(text_a.len() + text_b.len() + 3);
        joined.push_str(truncate_chars(text_a, budget));
        joined.push(SEP_TOKEN);
        joined.push_str(truncate_chars(text_b, budget));
        Ok(self.vectorize(&joined))
    }
}

/// Hashed n-gram encoding of `text` under `config` (no truncation).
pub fn hashed_ngram_backend(text: &str, config: &EncoderConfig) -> Result<Embedding> {
    Ok(HashedNgramEncoder::new(config.dim, config.ngram_orders.clone())?.vectorize(text))
}
