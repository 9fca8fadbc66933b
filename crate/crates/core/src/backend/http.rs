//! Completions-with-logprobs client.
//!
//! Sends `{model, prompt, max_tokens: 1, logprobs: K, echo: false}` and reads
//! `choices[0].logprobs.top_logprobs[0]`, a map from token text to natural
//! log probability.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{extract_label_probs, BackendConfig, BackendError, LabelProbBackend};
use crate::prob::ProbVector;
use crate::prompt::{LabelSpace, Prompt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub max_tokens: u32,
    pub logprobs: u32,
    pub echo: bool,
    pub temperature: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CompletionResponse {
    pub choices: Vec<CompletionChoice>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CompletionChoice {
    #[serde(default)]
    pub text: String,
    pub logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ChoiceLogprobs {
    #[serde(default)]
    pub top_logprobs: Vec<HashMap<String, f64>>,
}

impl CompletionResponse {
    /// Next-token probabilities (exponentiated log probabilities).
    pub fn next_token_probs(&self) -> Result<HashMap<String, f64>, BackendError> {
        let top = self
            .choices
            .first()
            .and_then(|c| c.logprobs.as_ref())
            .and_then(|l| l.top_logprobs.first())
            .ok_or_else(|| {
                BackendError::Protocol("response has no choices[0].logprobs.top_logprobs[0]".into())
            })?;
        top.iter()
            .map(|(tok, &lp)| {
                if lp.is_nan() || lp > 1e-9 {
                    Err(BackendError::Protocol(format!("log probability {lp} for token {tok:?}")))
                } else {
                    Ok((tok.clone(), lp.min(0.0).exp()))
                }
            })
            .collect()
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    top_logprobs: u32,
    max_attempts: u32,
    initial_backoff: Duration,
    max_parallel: usize,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("top_logprobs", &self.top_logprobs)
            .finish()
    }
}

impl HttpBackend {
    /// Resolves the credential immediately so a missing key fails before any
    /// work starts.
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let api_key = match &cfg.api_key_env_var {
            Some(var) => Some(
                std::env::var(var).map_err(|_| BackendError::MissingCredential(var.clone()))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout())
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: cfg.endpoint_url.clone().expect("validated"),
            model: cfg.model_name.clone(),
            api_key,
            top_logprobs: cfg.top_logprobs,
            max_attempts: cfg.retry.max_attempts,
            initial_backoff: Duration::from_millis(cfg.retry.initial_backoff_ms),
            max_parallel: cfg.max_parallel_requests,
        })
    }

    fn post_once(&self, body: &CompletionRequest<'_>) -> Result<CompletionResponse, Attempt> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return resp
                .json::<CompletionResponse>()
                .map_err(|e| Attempt::Fatal(BackendError::Protocol(e.to_string())));
        }
        let text = resp.text().unwrap_or_default();
        if status.as_u16() == 429 || status.is_server_error() {
            Err(Attempt::Retry(format!("HTTP {status}: {text}")))
        } else {
            Err(Attempt::Fatal(BackendError::Http {
                status: status.as_u16(),
                body: text,
            }))
        }
    }

    pub fn complete(&self, prompt: &str) -> Result<CompletionResponse, BackendError> {
        let body = CompletionRequest {
            model: &self.model,
            prompt,
            max_tokens: 1,
            logprobs: self.top_logprobs,
            echo: false,
            temperature: 0.0,
        };
        let mut delay = self.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.max_attempts {
            match self.post_once(&body) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("completion attempt {attempt}/{} failed: {msg}", self.max_attempts);
                    last = msg;
                    if attempt < self.max_attempts {
                        std::thread::sleep(delay);
                        delay = delay.saturating_mul(2);
                    }
                }
            }
        }
        Err(BackendError::Unavailable {
            attempts: self.max_attempts,
            message: last,
        })
    }
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

impl LabelProbBackend for HttpBackend {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn query(&self, prompt: &Prompt, labels: &LabelSpace) -> Result<ProbVector, BackendError> {
        let resp = self.complete(&prompt.rendered_text)?;
        extract_label_probs(&resp.next_token_probs()?, labels)
    }

    fn max_parallel(&self) -> usize {
        self.max_parallel
    }
}
