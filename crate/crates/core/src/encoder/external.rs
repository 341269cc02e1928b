use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Embedding, EncoderConfig, SentenceEncoder};
use crate::error::{Error, Result};

/// Body of `POST /encode`. With `pair = true`, `texts` holds consecutive
/// `(a, b)` pairs and one vector comes back per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub texts: Vec<String>,
    pub pair: bool,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub vectors: Vec<Vec<f64>>,
}

/// Body of `GET /info`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub dim: usize,
}

/// Counting gate bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

enum Failure {
    Retryable(String),
    Fatal(Error),
}

/// HTTP client for a pretrained-encoder service. The service owns
/// tokenization, truncation to `max_len` and pooling.
pub struct ExternalEncoder {
    base: String,
    dim: usize,
    retries: usize,
    agent: ureq::Agent,
    gate: Gate,
}

impl ExternalEncoder {
    /// Connects and checks the advertised dimension against `config.dim`.
    pub fn connect(config: &EncoderConfig) -> Result<Self> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::Config("external backend needs an endpoint".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        let mut encoder = ExternalEncoder {
            base: endpoint.trim_end_matches('/').to_string(),
            dim: config.dim,
            retries: config.retries,
            agent,
            gate: Gate::new(config.max_in_flight.max(1)),
        };
        let info: InfoResponse = encoder.with_retries(|enc| enc.get_info())?;
        if info.dim != config.dim {
            return Err(Error::Protocol(format!(
                "service advertises dim {} but {} is configured",
                info.dim, config.dim
            )));
        }
        encoder.dim = info.dim;
        Ok(encoder)
    }

    fn with_retries<T>(&self, mut call: impl FnMut(&Self) -> std::result::Result<T, Failure>) -> Result<T> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match call(self) {
                Ok(value) => return Ok(value),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(message)) => {
                    if attempts > self.retries {
                        return Err(Error::Transport { attempts, message });
                    }
                    log::warn!("encoder request failed (attempt {attempts}): {message}");
                    std::thread::sleep(Duration::from_millis(20 * attempts as u64));
                }
            }
        }
    }

    fn classify(err: ureq::Error) -> Failure {
        match err {
            ureq::Error::StatusCode(code) if code >= 500 => Failure::Retryable(format!("HTTP {code}")),
            ureq::Error::StatusCode(code) => Failure::Fatal(Error::Protocol(format!("HTTP {code}"))),
            ureq::Error::Json(e) => Failure::Fatal(Error::Protocol(format!("bad response body: {e}"))),
            other => Failure::Retryable(other.to_string()),
        }
    }

    fn get_info(&self) -> std::result::Result<InfoResponse, Failure> {
        let _permit = self.gate.acquire();
        let mut response = self
            .agent
            .get(&format!("{}/info", self.base))
            .call()
            .map_err(Self::classify)?;
        response.body_mut().read_json().map_err(Self::classify)
    }

    fn post_encode(&self, request: &EncodeRequest) -> std::result::Result<EncodeResponse, Failure> {
        let _permit = self.gate.acquire();
        let mut response = self
            .agent
            .post(&format!("{}/encode", self.base))
            .send_json(request)
            .map_err(Self::classify)?;
        response.body_mut().read_json().map_err(Self::classify)
    }

    fn request(&self, request: EncodeRequest, expected: usize) -> Result<Vec<Embedding>> {
        let response = self.with_retries(|enc| enc.post_encode(&request))?;
        if response.vectors.len() != expected {
            return Err(Error::Protocol(format!(
                "expected {expected} vector(s), got {}",
                response.vectors.len()
            )));
        }
        response
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(Error::Protocol(format!(
                        "vector of length {} from a dim-{} service",
                        v.len(),
                        self.dim
                    )));
                }
                Embedding::new(v).map_err(|e| Error::Protocol(e.to_string()))
            })
            .collect()
    }
}

impl SentenceEncoder for ExternalEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str, max_len: usize) -> Result<Embedding> {
        let request = EncodeRequest {
            texts: vec![text.to_string()],
            pair: false,
            max_len,
        };
        Ok(self.request(request, 1)?.remove(0))
    }

    fn encode_joint(&self, text_a: &str, text_b: &str, max_len: usize) -> Result<Embedding> {
        let request = EncodeRequest {
            texts: vec![text_a.to_string(), text_b.to_string()],
            pair: true,
            max_len,
        };
        Ok(self.request(request, 1)?.remove(0))
    }

    fn encode_batch(&self, texts: &[&str], max_len: usize) -> Result<Vec<Embedding>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let request = EncodeRequest {
            texts: texts.iter().map(|t| t.to_string()).collect(),
            pair: false,
            max_len,
        };
        self.request(request, texts.len())
    }
}
