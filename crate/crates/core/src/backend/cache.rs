use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, LabelProbBackend};
use crate::prob::ProbVector;
use crate::prompt::{LabelSpace, Prompt};

/// Content hash of `(rendered_text, model_name, label set)`.
pub fn cache_key(rendered_text: &str, model_name: &str, labels: &LabelSpace) -> String {
    let mut h = Sha256::new();
    h.update(model_name.as_bytes());
    h.update([0u8]);
    for v in labels.verbalizers() {
        h.update(v.as_bytes());
        h.update([0x1f]);
    }
    h.update([0u8]);
    h.update(rendered_text.as_bytes());
    hex::encode(h.finalize())
}

/// On-disk cache entry, one JSON file per prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub hash: String,
    pub model: String,
    pub labels: Vec<String>,
    pub values: Vec<f64>,
    pub raw_mass: f64,
    pub timestamp: String,
}

type Slot = Arc<Mutex<Option<ProbVector>>>;

/// Memoizing wrapper: every distinct prompt content reaches the inner
/// backend at most once, even under concurrent queries.
pub struct CachedBackend {
    inner: Arc<dyn LabelProbBackend>,
    slots: Mutex<HashMap<String, Slot>>,
    dir: Option<PathBuf>,
    calls: AtomicUsize,
    hits: AtomicUsize,
}

impl CachedBackend {
    pub fn new(inner: Arc<dyn LabelProbBackend>) -> Self {
        Self {
            inner,
            slots: Mutex::new(HashMap::new()),
            dir: None,
            calls: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
        }
    }

    /// Persist entries under `dir` and reuse any found there.
    pub fn with_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .map_err(|e| BackendError::Cache(format!("{}: {e}", dir.display())))?;
        self.dir = Some(dir);
        Ok(self)
    }

    /// Queries forwarded to the inner backend so far.
    pub fn backend_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn clear(&self) {
        self.slots.lock().expect("cache lock").clear();
    }

    fn slot(&self, key: &str) -> Slot {
        self.slots
            .lock()
            .expect("cache lock")
            .entry(key.to_owned())
            .or_default()
            .clone()
    }

    fn record_path(dir: &Path, key: &str) -> PathBuf {
        dir.join(format!("{key}.json"))
    }

    fn read_disk(&self, key: &str, labels: &LabelSpace) -> Option<ProbVector> {
        let path = Self::record_path(self.dir.as_ref()?, key);
        let text = std::fs::read_to_string(&path).ok()?;
        let rec: CacheRecord = serde_json::from_str(&text).ok()?;
        let names: Vec<&str> = labels.verbalizers().collect();
        if rec.hash != key || rec.model != self.inner.model_name() || rec.labels != names {
            log::warn!("ignoring mismatched cache record {}", path.display());
            return None;
        }
        Some(ProbVector::from_simplex(rec.values).ok()?.with_raw_mass(rec.raw_mass))
    }

    fn write_disk(&self, key: &str, labels: &LabelSpace, p: &ProbVector) -> Result<(), BackendError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let rec = CacheRecord {
            hash: key.to_owned(),
            model: self.inner.model_name().to_owned(),
            labels: labels.verbalizers().map(str::to_owned).collect(),
            values: p.values().to_vec(),
            raw_mass: p.raw_mass(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        let path = Self::record_path(dir, key);
        let text = serde_json::to_string(&rec).map_err(|e| BackendError::Cache(e.to_string()))?;
        std::fs::write(&path, text)
            .map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))
    }
}

impl LabelProbBackend for CachedBackend {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn query(&self, prompt: &Prompt, labels: &LabelSpace) -> Result<ProbVector, BackendError> {
        let key = cache_key(&prompt.rendered_text, self.inner.model_name(), labels);
        let slot = self.slot(&key);
        let mut entry = slot.lock().expect("cache slot lock");
        if let Some(p) = entry.as_ref() {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(p.clone());
        }
        if let Some(p) = self.read_disk(&key, labels) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            *entry = Some(p.clone());
            return Ok(p);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let p = self.inner.query(prompt, labels)?;
        self.write_disk(&key, labels, &p)?;
        *entry = Some(p.clone());
        Ok(p)
    }

    fn max_parallel(&self) -> usize {
        self.inner.max_parallel()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{query_many, SyntheticBackend, SyntheticOracleSpec};
    use crate::prompt::{assemble_prompt, Input, PromptTemplate};

    fn oracle(name: &str) -> Arc<dyn LabelProbBackend> {
        let spec = SyntheticOracleSpec {
            classes: 2,
            true_logit_scale: 1.0,
            bias_weights: vec![2.0, 1.0],
            noise_stddev: 0.3,
            seed: 1,
        };
        Arc::new(
            SyntheticBackend::new(spec, HashMap::new())
                .with_model_name(name)
                .with_max_parallel(4),
        )
    }

    fn prompts(texts: &[&str]) -> (Vec<Prompt>, LabelSpace) {
        let t = PromptTemplate::builtin("sst2").unwrap();
        let ls = t.label_space().unwrap();
        let ps = texts
            .iter()
            .map(|s| assemble_prompt(&Input::text(*s), &[], &t, &ls).unwrap())
            .collect();
        (ps, ls)
    }

    #[test]
    fn repeated_prompt_is_one_call() {
        let cache = CachedBackend::new(oracle("m"));
        let (ps, ls) = prompts(&["a", "a", "a"]);
        let out = query_many(&cache, &ps, &ls).unwrap();
        assert_eq!(cache.backend_calls(), 1);
        assert_eq!(cache.cache_hits(), 2);
        assert_eq!(out[0], out[2]);
    }

    #[test]
    fn key_includes_model_and_labels() {
        let t = PromptTemplate::builtin("sst2").unwrap();
        let ls = t.label_space().unwrap();
        let other = LabelSpace::new(&["good", "bad"]).unwrap();
        assert_ne!(cache_key("x", "m1", &ls), cache_key("x", "m2", &ls));
        assert_ne!(cache_key("x", "m1", &ls), cache_key("x", "m1", &other));
        assert_eq!(cache_key("x", "m1", &ls), cache_key("x", "m1", &ls));
    }

    #[test]
    fn disk_records_are_reused_only_for_same_model() {
        let dir = tempfile::tempdir().unwrap();
        let (ps, ls) = prompts(&["a", "b"]);

        let first = CachedBackend::new(oracle("m")).with_dir(dir.path()).unwrap();
        let a = query_many(&first, &ps, &ls).unwrap();
        assert_eq!(first.backend_calls(), 2);

        let second = CachedBackend::new(oracle("m")).with_dir(dir.path()).unwrap();
        let b = query_many(&second, &ps, &ls).unwrap();
        assert_eq!(second.backend_calls(), 0);
        assert_eq!(a, b);

        let third = CachedBackend::new(oracle("other")).with_dir(dir.path()).unwrap();
        query_many(&third, &ps, &ls).unwrap();
        assert_eq!(third.backend_calls(), 2);

        let name = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
        let rec: CacheRecord =
            serde_json::from_str(&std::fs::read_to_string(name).unwrap()).unwrap();
        assert_eq!(rec.labels, vec!["Positive", "Negative"]);
    }

    #[test]
    fn parallel_results_keep_input_order() {
        let cache = CachedBackend::new(oracle("m"));
        let texts: Vec<String> = (0..40).map(|i| format!("q{i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let (ps, ls) = prompts(&refs);
        let parallel = query_many(&cache, &ps, &ls).unwrap();
        let serial: Vec<_> = ps.iter().map(|p| oracle("m").query(p, &ls).unwrap()).collect();
        assert_eq!(parallel, serial);
    }
}
