//! Text-similarity loss and the reward derived from it.
//!
//! Loss providers return *losses*; the trainer turns consecutive losses into
//! rewards `r_t = beta * (L_t - L_{t+1})`. Two providers exist: a client for
//! the remote CLIP loss service and a deterministic exposure proxy used for
//! hermetic training and tests.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{encode_png, quantize, FloatImage, QuantizedImage};

pub const NEGATIVE_PROMPT: &str = "a bad, saturated, blacked out photo of nothing";
pub const DEFAULT_REWARD_SCALE: f64 = 200.0;
/// Side length of the square crop the loss service scores.
pub const QUERY_SIZE: usize = 224;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("invalid loss input: {0}")]
    Domain(String),
    #[error("loss provider failed after {attempts} attempt(s): {message}")]
    Provider { attempts: u32, message: String },
    #[error("protocol error: {message} (payload: {excerpt:?})")]
    Protocol { message: String, excerpt: String },
}

pub type Result<T> = std::result::Result<T, RewardError>;

/// Case-insensitive deduplication that keeps the first spelling seen.
pub fn unique_classes<S: AsRef<str>>(classes: &[S]) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for c in classes {
        let c = c.as_ref().trim();
        let key = c.to_lowercase();
        if !c.is_empty() && !seen.contains(&key) {
            seen.push(key);
            out.push(c.to_string());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    negative: String,
    positives: Vec<String>,
}

impl PromptSet {
    pub fn new<S: AsRef<str>>(classes: &[S]) -> Result<Self> {
        let unique = unique_classes(classes);
        if unique.is_empty() {
            return Err(RewardError::Domain("at least one class name is required".into()));
        }
        Ok(Self {
            negative: NEGATIVE_PROMPT.to_string(),
            positives: unique.iter().map(|c| format!("a good photo of {c}")).collect(),
        })
    }

    pub fn negative(&self) -> &str {
        &self.negative
    }

    pub fn positives(&self) -> &[String] {
        &self.positives
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardScale(f64);

impl RewardScale {
    pub fn new(beta: f64) -> Result<Self> {
        if beta.is_finite() && beta > 0.0 {
            Ok(Self(beta))
        } else {
            Err(RewardError::Domain(format!("reward scale must be positive, got {beta}")))
        }
    }

    pub fn beta(self) -> f64 {
        self.0
    }
}

impl Default for RewardScale {
    fn default() -> Self {
        Self(DEFAULT_REWARD_SCALE)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean over classes of the two-way cross-entropy between the class prompt
/// and the negative prompt, on raw cosine similarities:
/// `(1/N) sum_i log(1 + exp(-(pos_i - neg_i)))`.
pub fn clip_loss_from_similarities(pos_sims: &[f64], neg_sims: &[f64]) -> Result<f64> {
    if pos_sims.is_empty() {
        return Err(RewardError::Domain("no classes (N = 0)".into()));
    }
    if pos_sims.len() != neg_sims.len() {
        return Err(RewardError::Domain(format!(
            "{} positive vs {} negative similarities",
            pos_sims.len(),
            neg_sims.len()
        )));
    }
    if pos_sims.iter().chain(neg_sims).any(|v| !v.is_finite()) {
        return Err(RewardError::Domain("non-finite similarity".into()));
    }
    let total: f64 = pos_sims
        .iter()
        .zip(neg_sims)
        .map(|(p, n)| softplus(n - p))
        .sum();
    Ok(total / pos_sims.len() as f64)
}

pub fn reward_from_losses(loss_t: f64, loss_next: f64, scale: RewardScale) -> f64 {
    scale.beta() * (loss_t - loss_next)
}

/// Anything that scores an image (with its class names) by a loss.
pub trait LossProvider: Send + Sync {
    fn loss(&self, image: &FloatImage, classes: &[String]) -> Result<f64>;

    /// Called once before training starts.
    fn health_check(&self) -> Result<()> {
        Ok(())
    }
}

/// Exposure proxy: `(mean_Y - 0.5)^2 + max(0, 0.2 - std_Y)^2` on luminance
/// `Y = (R + G + B) / 3`. Minimized by mid-exposed images with some spread.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProxyLoss;

pub const PROXY_TARGET_MEAN: f64 = 0.5;
pub const PROXY_MIN_SPREAD: f64 = 0.2;

pub fn proxy_loss(image: &FloatImage) -> f64 {
    let lum = image.luminance();
    let n = lum.len() as f64;
    let mean = lum.iter().sum::<f64>() / n;
    let var = lum.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let spread_gap = (PROXY_MIN_SPREAD - var.sqrt()).max(0.0);
    (mean - PROXY_TARGET_MEAN).powi(2) + spread_gap * spread_gap
}

impl LossProvider for ProxyLoss {
    fn loss(&self, image: &FloatImage, _classes: &[String]) -> Result<f64> {
        Ok(proxy_loss(image))
    }
}

/// One scoring request: an 8-bit RGB 224x224 image and its class names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossQuery {
    image: QuantizedImage,
    classes: Vec<String>,
}

impl LossQuery {
    pub fn new<S: AsRef<str>>(image: QuantizedImage, classes: &[S]) -> Result<Self> {
        if image.dims() != (3, QUERY_SIZE, QUERY_SIZE) || image.bit_depth() != 8 {
            return Err(RewardError::Domain(format!(
                "query image must be 8-bit 3x{QUERY_SIZE}x{QUERY_SIZE}, got {:?} at {} bits",
                image.dims(),
                image.bit_depth()
            )));
        }
        let classes = unique_classes(classes);
        if classes.is_empty() {
            return Err(RewardError::Domain("at least one class name is required".into()));
        }
        Ok(Self { image, classes })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn image(&self) -> &QuantizedImage {
        &self.image
    }

    /// JSON body for `POST /v1/loss`.
    pub fn to_body(&self) -> Result<LossRequestBody> {
        let png = encode_png(&self.image)
            .map_err(|e| RewardError::Domain(format!("cannot encode query image: {e}")))?;
        Ok(LossRequestBody {
            image_png_b64: base64::engine::general_purpose::STANDARD.encode(png),
            classes: self.classes.clone(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LossRequestBody {
    pub image_png_b64: String,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LossResponseBody {
    pub loss: f64,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HealthResponseBody {
    pub model: String,
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DebugSimsResponseBody {
    pub positive_sims: Vec<f64>,
    pub negative_sims: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(200),
            timeout: Duration::from_secs(30),
            max_in_flight: 4,
        }
    }
}

/// Counting gate bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate poisoned") += 1;
        self.0.cv.notify_one();
    }
}

enum Failure {
    Retryable(String),
    Fatal(RewardError),
}

const EXCERPT_LEN: usize = 200;

fn excerpt(s: &str) -> String {
    s.chars().take(EXCERPT_LEN).collect()
}

/// HTTP client for the CLIP loss service. Performs no math beyond JSON
/// handling.
pub struct RemoteClipLoss {
    base_url: String,
    agent: ureq::Agent,
    config: RemoteConfig,
    gate: Gate,
}

impl RemoteClipLoss {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_config(base_url, RemoteConfig::default())
    }

    pub fn with_config(base_url: impl Into<String>, config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            gate: Gate {
                free: Mutex::new(config.max_in_flight.max(1)),
                cv: Condvar::new(),
            },
            config,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn with_retries<T>(&self, mut op: impl FnMut() -> std::result::Result<T, Failure>) -> Result<T> {
        let _slot = self.gate.acquire();
        let attempts = self.config.attempts.max(1);
        let mut backoff = self.config.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match op() {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => last = msg,
            }
            if attempt < attempts {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(RewardError::Provider {
            attempts,
            message: last,
        })
    }

    fn read_reply(
        response: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> std::result::Result<String, Failure> {
        let mut response = response.map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retryable(format!("reading response body: {e}")))?;
        match status {
            200 => Ok(body),
            500..=599 => Err(Failure::Retryable(format!("HTTP {status}: {}", excerpt(&body)))),
            _ => Err(Failure::Fatal(RewardError::Protocol {
                message: format!("service rejected the request with HTTP {status}"),
                excerpt: excerpt(&body),
            })),
        }
    }

    fn parse<T: serde::de::DeserializeOwned>(body: &str) -> std::result::Result<T, Failure> {
        serde_json::from_str(body).map_err(|e| {
            Failure::Fatal(RewardError::Protocol {
                message: format!("malformed response: {e}"),
                excerpt: excerpt(body),
            })
        })
    }

    pub fn query(&self, query: &LossQuery) -> Result<LossResponseBody> {
        let body = query.to_body()?;
        let url = format!("{}/v1/loss", self.base_url);
        let reply: LossResponseBody = self.with_retries(|| {
            let text = Self::read_reply(self.agent.post(&url).send_json(&body))?;
            Self::parse(&text)
        })?;
        if !reply.loss.is_finite() {
            return Err(RewardError::Protocol {
                message: "service returned a non-finite loss".into(),
                excerpt: format!("{reply:?}"),
            });
        }
        Ok(reply)
    }

    /// Per-prompt similarities from `/v1/debug_sims`.
    pub fn debug_sims(&self, query: &LossQuery) -> Result<DebugSimsResponseBody> {
        let body = query.to_body()?;
        let url = format!("{}/v1/debug_sims", self.base_url);
        self.with_retries(|| {
            let text = Self::read_reply(self.agent.post(&url).send_json(&body))?;
            Self::parse(&text)
        })
    }

    pub fn health(&self) -> Result<HealthResponseBody> {
        let url = format!("{}/v1/health", self.base_url);
        self.with_retries(|| {
            let text = Self::read_reply(self.agent.get(&url).call())?;
            Self::parse(&text)
        })
    }
}

impl LossProvider for RemoteClipLoss {
    fn loss(&self, image: &FloatImage, classes: &[String]) -> Result<f64> {
        let query = LossQuery::new(quantize(image, 8), classes)?;
        self.query(&query).map(|r| r.loss)
    }

    fn health_check(&self) -> Result<()> {
        let h = self.health()?;
        if h.status == "ok" {
            Ok(())
        } else {
            Err(RewardError::Provider {
                attempts: 1,
                message: format!("service reports status {:?}", h.status),
            })
        }
    }
}
