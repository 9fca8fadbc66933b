//! Label-probability providers.
//!
//! A backend turns a rendered prompt into the next-token probability of each
//! class verbalizer, renormalized over the label space. Two implementations
//! ship: [`HttpBackend`] for completion APIs that return top-K log
//! probabilities, and [`SyntheticBackend`], a seeded biased oracle for
//! offline runs. [`CachedBackend`] wraps either one and guarantees each
//! distinct prompt reaches the backend at most once.

mod cache;
mod http;
mod synthetic;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{ProbError, ProbVector};
use crate::prompt::{LabelSpace, Prompt};

pub use cache::{cache_key, CacheRecord, CachedBackend};
pub use http::{CompletionRequest, CompletionResponse, HttpBackend};
pub use synthetic::{synthetic_oracle_probs, SyntheticBackend, SyntheticOracleSpec};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("verbalizer {verbalizer:?} of class {class} missing from backend response")]
    MissingVerbalizer { class: usize, verbalizer: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("environment variable {0} holding the API credential is not set")]
    MissingCredential(String),
    #[error("backend config: {0}")]
    Config(String),
    #[error("prompt {index}: {source}")]
    AtPrompt {
        index: usize,
        #[source]
        source: Box<BackendError>,
    },
    #[error("cache: {0}")]
    Cache(String),
}

impl From<ProbError> for BackendError {
    fn from(e: ProbError) -> Self {
        BackendError::Protocol(e.to_string())
    }
}

/// Anything that can score a prompt's next token over a label space.
pub trait LabelProbBackend: Send + Sync {
    fn model_name(&self) -> &str;

    fn query(&self, prompt: &Prompt, labels: &LabelSpace) -> Result<ProbVector, BackendError>;

    /// Upper bound on concurrent [`query`](Self::query) calls.
    fn max_parallel(&self) -> usize {
        1
    }
}

impl<B: LabelProbBackend + ?Sized> LabelProbBackend for Arc<B> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn query(&self, prompt: &Prompt, labels: &LabelSpace) -> Result<ProbVector, BackendError> {
        (**self).query(prompt, labels)
    }

    fn max_parallel(&self) -> usize {
        (**self).max_parallel()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default = "default_parallel")]
    pub max_parallel_requests: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Name of the environment variable that holds the API key. `None` sends
    /// no credential.
    #[serde(default)]
    pub api_key_env_var: Option<String>,
    /// Number of top next-token log probabilities to request.
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(default)]
    pub synthetic: Option<SyntheticOracleSpec>,
    /// Directory for the on-disk logit cache.
    #[serde(default)]
    pub cache_dir: Option<std::path::PathBuf>,
}

fn default_model() -> String {
    "synthetic".to_owned()
}
fn default_parallel() -> usize {
    4
}
fn default_timeout() -> f64 {
    30.0
}
fn default_top_logprobs() -> u32 {
    100
}

impl BackendConfig {
    pub fn synthetic(spec: SyntheticOracleSpec) -> Self {
        Self {
            kind: BackendKind::Synthetic,
            endpoint_url: None,
            model_name: default_model(),
            max_parallel_requests: 1,
            timeout_secs: default_timeout(),
            retry: RetryPolicy::default(),
            api_key_env_var: None,
            top_logprobs: default_top_logprobs(),
            synthetic: Some(spec),
            cache_dir: None,
        }
    }

    pub fn http(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            endpoint_url: Some(endpoint_url.into()),
            model_name: model_name.into(),
            max_parallel_requests: default_parallel(),
            timeout_secs: default_timeout(),
            retry: RetryPolicy::default(),
            api_key_env_var: None,
            top_logprobs: default_top_logprobs(),
            synthetic: None,
            cache_dir: None,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_parallel_requests == 0 {
            return Err(BackendError::Config("max_parallel_requests must be >= 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(BackendError::Config("retry.max_attempts must be >= 1".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(BackendError::Config("timeout_secs must be positive".into()));
        }
        match self.kind {
            BackendKind::Http if self.endpoint_url.is_none() => Err(BackendError::Config(
                "http backend needs endpoint_url".into(),
            )),
            BackendKind::Synthetic => match &self.synthetic {
                None => Err(BackendError::Config(
                    "synthetic backend needs a `synthetic` oracle spec".into(),
                )),
                Some(spec) => spec.validate(),
            },
            _ => Ok(()),
        }
    }
}

/// Pick the C verbalizer entries out of a token→probability map and
/// renormalize them.
///
/// Lookup order per class: the verbalizer as-is, then with one leading
/// space, then the longest token that is a proper prefix of the
/// verbalizer (with or without the leading space) provided no other class
/// shares that prefix. The last rule scores a multi-token verbalizer by its
/// first token.
pub fn extract_label_probs(
    token_probs: &HashMap<String, f64>,
    labels: &LabelSpace,
) -> Result<ProbVector, BackendError> {
    let verbalizers: Vec<&str> = labels.verbalizers().collect();
    let mut weights = Vec::with_capacity(verbalizers.len());
    for (class, verb) in verbalizers.iter().enumerate() {
        let p = lookup_verbalizer(token_probs, verb, &verbalizers).ok_or_else(|| {
            BackendError::MissingVerbalizer {
                class,
                verbalizer: (*verb).to_owned(),
            }
        })?;
        if !p.is_finite() || p < 0.0 {
            return Err(BackendError::Protocol(format!(
                "probability {p} for verbalizer {verb:?}"
            )));
        }
        weights.push(p);
    }
    Ok(ProbVector::normalize(weights)?)
}

fn lookup_verbalizer(map: &HashMap<String, f64>, verb: &str, all: &[&str]) -> Option<f64> {
    if let Some(&p) = map.get(verb) {
        return Some(p);
    }
    let spaced = format!(" {verb}");
    if let Some(&p) = map.get(&spaced) {
        return Some(p);
    }
    let best = map
        .iter()
        .filter_map(|(tok, &p)| {
            let bare = tok.strip_prefix(' ').unwrap_or(tok);
            let proper = !bare.is_empty() && bare.len() < verb.len() && verb.starts_with(bare);
            let unique = all
                .iter()
                .filter(|other| other.starts_with(bare))
                .count()
                == 1;
            (proper && unique).then_some((bare.len(), tok.starts_with(' '), tok, p))
        })
        // longest prefix first; then prefer the spaced spelling, then token text
        .max_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(b.2.cmp(a.2)))?;
    Some(best.3)
}

/// Build the backend named by `cfg`. Synthetic backends need the oracle's
/// ground truth (input key → class), which plays the role of what a real
/// model would already know.
pub fn build_backend(
    cfg: &BackendConfig,
    oracle_truth: impl FnOnce() -> HashMap<String, usize>,
) -> Result<Arc<dyn LabelProbBackend>, BackendError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Http => Arc::new(HttpBackend::new(cfg)?),
        BackendKind::Synthetic => {
            let spec = cfg.synthetic.clone().expect("validated");
            Arc::new(
                SyntheticBackend::new(spec, oracle_truth())
                    .with_model_name(&cfg.model_name)
                    .with_max_parallel(cfg.max_parallel_requests),
            )
        }
    })
}

/// Query every prompt, up to `backend.max_parallel()` at a time. Results come
/// back in input order; the first failure (lowest index) is reported.
pub fn query_many<B: LabelProbBackend + ?Sized>(
    backend: &B,
    prompts: &[Prompt],
    labels: &LabelSpace,
) -> Result<Vec<ProbVector>, BackendError> {
    let workers = backend.max_parallel().clamp(1, prompts.len().max(1));
    let at = |index: usize, e: BackendError| BackendError::AtPrompt {
        index,
        source: Box::new(e),
    };
    if workers == 1 {
        return prompts
            .iter()
            .enumerate()
            .map(|(i, p)| backend.query(p, labels).map_err(|e| at(i, e)))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<ProbVector, BackendError>>>> =
        prompts.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= prompts.len() {
                    break;
                }
                let r = backend.query(&prompts[i], labels);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .enumerate()
        .map(|(i, slot)| {
            slot.into_inner()
                .expect("slot lock")
                .expect("every slot filled")
                .map_err(|e| at(i, e))
        })
        .collect()
}

/// Query the validation prompts once each through the cache, before any
/// training epoch runs.
pub fn precompute_validation_logits(
    prompts: &[Prompt],
    labels: &LabelSpace,
    backend: &CachedBackend,
) -> Result<Vec<ProbVector>, BackendError> {
    query_many(backend, prompts, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(v: &[&str]) -> LabelSpace {
        LabelSpace::new(v).unwrap()
    }

    fn map(entries: &[(&str, f64)]) -> HashMap<String, f64> {
        entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn renormalizes_over_verbalizers() {
        let p = extract_label_probs(&map(&[("A", 0.2), ("B", 0.2), ("other", 0.6)]), &ls(&["A", "B"]))
            .unwrap();
        assert_eq!(p.values(), &[0.5, 0.5]);
        assert!((p.raw_mass() - 0.4).abs() < 1e-15);

        let p = extract_label_probs(&map(&[("A", 0.75), ("B", 0.25)]), &ls(&["A", "B"])).unwrap();
        assert_eq!(p.values(), &[0.75, 0.25]);
        assert_eq!(p.raw_mass(), 1.0);

        let p = extract_label_probs(&map(&[("A", 0.0), ("B", 0.3)]), &ls(&["A", "B"])).unwrap();
        assert_eq!(p.values(), &[0.0, 1.0]);
    }

    #[test]
    fn leading_space_variant() {
        let probs = map(&[(" Positive", (-0.1f64).exp()), (" Negative", (-2.4f64).exp())]);
        let p = extract_label_probs(&probs, &ls(&["Positive", "Negative"])).unwrap();
        let expected = (-0.1f64).exp() / ((-0.1f64).exp() + (-2.4f64).exp());
        assert!((p.values()[0] - expected).abs() < 1e-12);
        assert!((p.values()[0] - 0.909).abs() < 1e-3);
    }

    #[test]
    fn exact_match_wins_over_spaced() {
        let probs = map(&[("A", 0.1), (" A", 0.5), ("B", 0.1)]);
        let p = extract_label_probs(&probs, &ls(&["A", "B"])).unwrap();
        assert_eq!(p.values(), &[0.5, 0.5]);
    }

    #[test]
    fn first_token_of_multi_token_verbalizer() {
        let probs = map(&[(" Descr", 0.2), (" De", 0.3), (" Number", 0.2)]);
        let p = extract_label_probs(&probs, &ls(&["Description", "Number"])).unwrap();
        assert_eq!(p.values(), &[0.5, 0.5]);
    }

    #[test]
    fn shared_prefix_is_not_a_match() {
        let probs = map(&[(" g", 0.5), (" bad", 0.2)]);
        let err = extract_label_probs(&probs, &ls(&["good", "great", "bad"])).unwrap_err();
        assert!(matches!(err, BackendError::MissingVerbalizer { class: 0, .. }));
    }

    #[test]
    fn missing_verbalizer_names_class() {
        let err = extract_label_probs(&map(&[("A", 1.0)]), &ls(&["A", "B"])).unwrap_err();
        match err {
            BackendError::MissingVerbalizer { class, verbalizer } => {
                assert_eq!(class, 1);
                assert_eq!(verbalizer, "B");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn non_finite_is_protocol_error() {
        let err = extract_label_probs(&map(&[("A", f64::NAN), ("B", 0.1)]), &ls(&["A", "B"]))
            .unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)));
    }

    #[test]
    fn config_validation() {
        let mut cfg = BackendConfig::http("http://localhost:1", "m");
        cfg.validate().unwrap();
        cfg.max_parallel_requests = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = BackendConfig::http("http://localhost:1", "m");
        cfg.retry.max_attempts = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = BackendConfig::http("x", "m");
        cfg.endpoint_url = None;
        assert!(cfg.validate().is_err());
    }
}
