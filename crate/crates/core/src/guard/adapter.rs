//! Model adapters: how the guard reaches the model it protects.

use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("model expects {expected} input features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("model input column `{0}` is not numeric")]
    NonNumericInput(String),
    #[error("model request timed out after {0} ms")]
    Timeout(u64),
    #[error("model transport failed after {attempts} attempt(s): {message}")]
    TransportFailure { attempts: u32, message: String },
    #[error("malformed model response: {0}")]
    MalformedResponse(String),
    #[error("unsupported model format for `{0}`; use a builtin .json model or an http(s) endpoint")]
    UnsupportedModelFormat(String),
    #[error("invalid model definition: {0}")]
    InvalidModel(String),
}

/// Anything that turns a numeric batch into class probabilities.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AdapterError>;

    /// Output column names, when known.
    fn classes(&self) -> Option<&[String]> {
        None
    }
}

/// Softmax-linear classifier; also the builtin model file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinLinear {
    /// `C × D`
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub classes: Vec<String>,
}

impl BuiltinLinear {
    pub fn from_json(text: &str) -> Result<Self, AdapterError> {
        let m: BuiltinLinear =
            serde_json::from_str(text).map_err(|e| AdapterError::InvalidModel(e.to_string()))?;
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<(), AdapterError> {
        let bad = |m: String| Err(AdapterError::InvalidModel(m));
        let c = self.weights.len();
        if c == 0 {
            return bad("model has no classes".into());
        }
        if self.bias.len() != c || self.classes.len() != c {
            return bad(format!(
                "{c} weight rows, {} biases, {} class names",
                self.bias.len(),
                self.classes.len()
            ));
        }
        let d = self.weights[0].len();
        if self.weights.iter().any(|w| w.len() != d) {
            return bad("weight rows differ in length".into());
        }
        if self.weights.iter().flatten().chain(&self.bias).any(|x| !x.is_finite()) {
            return bad("non-finite weight or bias".into());
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].len()
    }
}

/// Numerically stable softmax of `W·x + b`.
pub fn builtin_predict(model: &BuiltinLinear, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AdapterError> {
    let d = model.input_dim();
    x.iter()
        .map(|row| {
            if row.len() != d {
                return Err(AdapterError::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            let logits: Vec<f64> = model
                .weights
                .iter()
                .zip(&model.bias)
                .map(|(w, b)| w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + b)
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            Ok(exps.into_iter().map(|e| e / total).collect())
        })
        .collect()
}

impl Predictor for BuiltinLinear {
    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AdapterError> {
        builtin_predict(self, x)
    }

    fn classes(&self) -> Option<&[String]> {
        Some(&self.classes)
    }
}

/// Remote model speaking the JSON prediction protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalHttp {
    /// Base URL; requests go to `<endpoint>/v1/predict`.
    pub endpoint: String,
    pub timeout_ms: u64,
    pub retries: u32,
}

pub const DEFAULT_TIMEOUT_MS: u64 = 5_000;
pub const DEFAULT_RETRIES: u32 = 3;
const BACKOFF_START: Duration = Duration::from_millis(100);

#[derive(Serialize)]
struct PredictRequest<'a> {
    instances: &'a [Vec<f64>],
}

#[derive(Deserialize)]
struct PredictResponse {
    probabilities: Vec<Vec<f64>>,
}

/// An [`ExternalHttp`] config bound to a connection pool.
pub struct HttpClient {
    config: ExternalHttp,
    url: String,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(config: ExternalHttp) -> Result<Self, AdapterError> {
        if config.timeout_ms == 0 {
            return Err(AdapterError::InvalidModel("timeout_ms must be positive".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let url = format!("{}/v1/predict", config.endpoint.trim_end_matches('/'));
        Ok(HttpClient { config, url, agent })
    }

    fn attempt(&self, body: &str) -> Result<String, Attempt> {
        let response = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => Attempt::Timeout,
                other => Attempt::Transport(other.to_string()),
            })?;
        let status = response.status().as_u16();
        if status != 200 {
            return Err(Attempt::Transport(format!("HTTP status {status}")));
        }
        response
            .into_body()
            .read_to_string()
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => Attempt::Timeout,
                other => Attempt::Transport(other.to_string()),
            })
    }
}

enum Attempt {
    Timeout,
    Transport(String),
}

/// POST the batch, retrying transport failures with exponential backoff
/// (100 ms, 200 ms, ...). The probabilities are returned as received.
pub fn http_predict(client: &HttpClient, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AdapterError> {
    let body = serde_json::to_string(&PredictRequest { instances: x }).expect("request JSON");
    let mut delay = BACKOFF_START;
    let attempts = client.config.retries + 1;
    let mut last = Attempt::Transport(String::new());
    for i in 0..attempts {
        if i > 0 {
            std::thread::sleep(delay);
            delay *= 2;
        }
        match client.attempt(&body) {
            Ok(text) => {
                let parsed: PredictResponse = serde_json::from_str(&text)
                    .map_err(|e| AdapterError::MalformedResponse(e.to_string()))?;
                if parsed.probabilities.len() != x.len() {
                    return Err(AdapterError::MalformedResponse(format!(
                        "{} probability rows for {} instances",
                        parsed.probabilities.len(),
                        x.len()
                    )));
                }
                return Ok(parsed.probabilities);
            }
            Err(e) => last = e,
        }
    }
    Err(match last {
        Attempt::Timeout => AdapterError::Timeout(client.config.timeout_ms),
        Attempt::Transport(message) => AdapterError::TransportFailure { attempts, message },
    })
}

impl Predictor for HttpClient {
    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AdapterError> {
        http_predict(self, x)
    }
}

/// Placeholder for model formats the runtime cannot execute.
pub struct Unsupported(pub String);

impl Predictor for Unsupported {
    fn predict(&self, _x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AdapterError> {
        Err(AdapterError::UnsupportedModelFormat(self.0.clone()))
    }
}

/// Contents of a bundle's `adapter.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterConfig {
    BuiltinLinear(BuiltinLinear),
    ExternalHttp(ExternalHttp),
    Unsupported { location: String },
}

impl AdapterConfig {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("adapter JSON");
        s.push('\n');
        s
    }

    pub fn predictor(&self) -> Result<Box<dyn Predictor>, AdapterError> {
        Ok(match self {
            AdapterConfig::BuiltinLinear(m) => {
                m.check()?;
                Box::new(m.clone())
            }
            AdapterConfig::ExternalHttp(c) => Box::new(HttpClient::new(c.clone())?),
            AdapterConfig::Unsupported { location } => Box::new(Unsupported(location.clone())),
        })
    }
}

/// Result of a `Probabilities_sum_to_one` check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumVerdict {
    pub ok: bool,
    pub worst_row: Option<usize>,
    pub worst_deviation: f64,
}

/// Every row must sum to 1 within `tolerance` and hold entries in
/// `[−tolerance, 1 + tolerance]`. The worst row is the one with the largest
/// deviation of either kind.
pub fn check_probabilities_sum_to_one(pred: &[Vec<f64>], tolerance: f64) -> SumVerdict {
    let mut worst_row = None;
    let mut worst = 0.0;
    let mut ok = true;
    for (i, row) in pred.iter().enumerate() {
        let sum_dev = (row.iter().sum::<f64>() - 1.0).abs();
        let entry_dev = row
            .iter()
            .map(|&p| if p < 0.0 { -p } else if p > 1.0 { p - 1.0 } else { 0.0 })
            .fold(0.0, f64::max);
        // NaN compares false everywhere; treat it as an infinite deviation.
        let dev = if sum_dev.is_nan() || entry_dev.is_nan() {
            f64::INFINITY
        } else {
            sum_dev.max(entry_dev)
        };
        if dev > tolerance {
            ok = false;
        }
        if worst_row.is_none() || dev > worst {
            worst = dev;
            worst_row = Some(i);
        }
    }
    SumVerdict {
        ok,
        worst_row,
        worst_deviation: worst,
    }
}
