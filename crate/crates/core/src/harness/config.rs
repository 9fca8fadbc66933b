use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::BackendConfig;
use crate::calibrator::TrainConfig;
use crate::error::{Error, Result};
use crate::prompt::{PromptTemplate, DEFAULT_CONTENT_FREE_TOKEN, SST2_FORMATS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Noc,
    Conc,
    Linc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Noc => "noc",
            Method::Conc => "conc",
            Method::Linc => "linc",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which demonstrations the validation prompts embed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationDemos {
    /// The same k demonstrations as the test prompts.
    #[default]
    Shared,
    /// A separately drawn k-shot set.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_grid_epochs")]
    pub epochs: Vec<usize>,
    #[serde(default = "default_validation_sizes")]
    pub validation_sizes: Vec<usize>,
    #[serde(default = "default_grid_steps")]
    pub step_sizes: Vec<f64>,
    /// Share of the validation pool held out for scoring grid cells.
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            epochs: default_grid_epochs(),
            validation_sizes: default_validation_sizes(),
            step_sizes: default_grid_steps(),
            holdout_fraction: default_holdout(),
        }
    }
}

fn default_grid_epochs() -> Vec<usize> {
    vec![1, 5, 15, 50, 100]
}
fn default_validation_sizes() -> Vec<usize> {
    vec![1, 5, 10, 30, 100, 300]
}
fn default_grid_steps() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1, 1.0]
}
fn default_holdout() -> f64 {
    0.2
}
fn default_permutations() -> usize {
    8
}
fn default_templates() -> Vec<String> {
    SST2_FORMATS.iter().map(|s| s.to_string()).collect()
}

/// Parameters of the robustness studies and sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Per-class demonstration fractions. Empty means: every one-hot mix
    /// plus the uniform mix.
    #[serde(default)]
    pub proportions: Vec<Vec<f64>>,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_templates")]
    pub templates: Vec<String>,
    #[serde(default = "default_validation_sizes")]
    pub validation_sizes: Vec<usize>,
    #[serde(default)]
    pub grid: GridConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            proportions: Vec::new(),
            permutations: default_permutations(),
            templates: default_templates(),
            validation_sizes: default_validation_sizes(),
            grid: GridConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train_path: PathBuf,
    #[serde(default)]
    pub validation_path: Option<PathBuf>,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    /// Built-in template name or path to a template JSON file.
    pub template: String,
    /// Display names for the classes; defaults to the verbalizers.
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
    pub k: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    pub backend: BackendConfig,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_cf_token")]
    pub cf_token: String,
    #[serde(default = "default_bins")]
    pub ece_bins: usize,
    #[serde(default = "default_bins")]
    pub entropy_bins: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Seed for the test/validation carve-outs; fixed across demo seeds.
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub validation_demos: ValidationDemos,
    #[serde(default)]
    pub max_prompt_tokens: Option<usize>,
    #[serde(default)]
    pub studies: StudyConfig,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Noc, Method::Conc, Method::Linc]
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_test_size() -> usize {
    300
}
fn default_cf_token() -> String {
    DEFAULT_CONTENT_FREE_TOKEN.to_owned()
}
fn default_bins() -> usize {
    10
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Parse a config file, apply `key.path=value` overrides, and resolve
    /// relative paths against the file's directory.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: ExperimentConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train_path);
        fix(&mut self.output);
        if let Some(p) = &mut self.validation_path {
            fix(p);
        }
        if let Some(p) = &mut self.test_path {
            fix(p);
        }
        if let Some(p) = &mut self.backend.cache_dir {
            fix(p);
        }
        if PromptTemplate::builtin(&self.template).is_none() {
            let mut p = PathBuf::from(&self.template);
            fix(&mut p);
            self.template = p.to_string_lossy().into_owned();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        if self.test_size == 0 {
            return bad("test_size must be >= 1");
        }
        if self.ece_bins == 0 || self.entropy_bins == 0 {
            return bad("ece_bins and entropy_bins must be >= 1");
        }
        self.train
            .validate()
            .map_err(|e| Error::Config(format!("train: {e}")))?;
        self.backend
            .validate()
            .map_err(|e| Error::Config(format!("backend: {e}")))?;
        let g = &self.studies.grid;
        if !(g.holdout_fraction > 0.0 && g.holdout_fraction < 1.0) {
            return bad("studies.grid.holdout_fraction must lie in (0, 1)");
        }
        if g.step_sizes.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return bad("studies.grid.step_sizes must be finite and >= 0");
        }
        Ok(())
    }
}

/// Set `dotted.key` in a JSON tree. The value is parsed as JSON when it
/// parses, otherwise taken as a string. Missing intermediate objects are
/// created; unknown leaf keys are caught later by the typed parse.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part:?} is not inside an object")))?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Config(format!("override {key:?}: parent is not an object")))?
        .insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({
            "train_path": "train.jsonl",
            "template": "sst2",
            "k": 4,
            "backend": {
                "kind": "synthetic",
                "synthetic": {"classes": 2, "true_logit_scale": 1.0, "bias_weights": [1.0, 1.0]}
            }
        })
    }

    #[test]
    fn defaults_fill_in() {
        let cfg: ExperimentConfig = serde_json::from_value(minimal()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seeds.len(), 5);
        assert_eq!(cfg.test_size, 300);
        assert_eq!(cfg.cf_token, "N/A");
        assert_eq!(cfg.ece_bins, 10);
        assert_eq!(cfg.methods, vec![Method::Noc, Method::Conc, Method::Linc]);
        assert_eq!(cfg.studies.permutations, 8);
        assert_eq!(cfg.studies.templates.len(), 6);
    }

    #[test]
    fn unknown_keys_fail() {
        let mut v = minimal();
        v["surprise"] = json!(1);
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
        let mut v = minimal();
        v["train"] = json!({"epoch": 3});
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }

    #[test]
    fn overrides() {
        let mut v = minimal();
        apply_override(&mut v, "train.epochs=5").unwrap();
        apply_override(&mut v, "cf_token=NA").unwrap();
        apply_override(&mut v, "seeds=[7]").unwrap();
        apply_override(&mut v, "backend.synthetic.noise_stddev=0.25").unwrap();
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.cf_token, "NA");
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.backend.synthetic.unwrap().noise_stddev, 0.25);

        let mut v = minimal();
        assert!(apply_override(&mut v, "no_equals").is_err());
        assert!(apply_override(&mut v, "k.deeper=1").is_err());
        assert!(apply_override(&mut v, "a..b=1").is_err());
    }

    #[test]
    fn validation_rules() {
        let mut v = minimal();
        v["seeds"] = json!([]);
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert!(cfg.validate().is_err());
        let mut v = minimal();
        v["train"] = json!({"step_size": 50.0});
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, minimal().to_string()).unwrap();
        let cfg = ExperimentConfig::load(&path, &["k=2".into()]).unwrap();
        assert_eq!(cfg.k, 2);
        assert_eq!(cfg.train_path, dir.path().join("train.jsonl"));
        assert_eq!(cfg.template, "sst2");
    }
}
