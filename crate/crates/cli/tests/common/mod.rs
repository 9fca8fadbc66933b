#![allow(dead_code)]

use std::path::{Path, PathBuf};

use linc_core::{Dataset, ExperimentConfig};
use serde_json::{json, Value};

/// Two-class oracle whose unbiased conditionals are (0.6, 0.4) / (0.4, 0.6)
/// and whose label bias (4, 1) pushes every raw prediction to class 0.
pub fn bias_flip_backend() -> Value {
    json!({
        "kind": "synthetic",
        "synthetic": {
            "classes": 2,
            "true_logit_scale": 1.5f64.ln(),
            "bias_weights": [4.0, 1.0]
        }
    })
}

/// Writes balanced train/validation/test files under `dir`.
pub fn write_data(dir: &Path, train_per_class: usize, val_per_class: usize, test_per_class: usize) {
    Dataset::synthetic(2, train_per_class, "demo")
        .write_jsonl(dir.join("train.jsonl"))
        .unwrap();
    Dataset::synthetic(2, val_per_class, "val")
        .write_jsonl(dir.join("validation.jsonl"))
        .unwrap();
    Dataset::synthetic(2, test_per_class, "test")
        .write_jsonl(dir.join("test.jsonl"))
        .unwrap();
}

/// Config over the files from [`write_data`] with LinC at N_v = 30,
/// T = 100, step 0.1 from zero init.
pub fn base_config(test_size: usize) -> Value {
    json!({
        "train_path": "train.jsonl",
        "validation_path": "validation.jsonl",
        "test_path": "test.jsonl",
        "template": "sst2",
        "k": 4,
        "methods": ["noc", "conc", "linc"],
        "seeds": [0],
        "test_size": test_size,
        "train": {"epochs": 100, "validation_size": 30, "step_size": 0.1},
        "backend": bias_flip_backend(),
        "output": "out"
    })
}

pub fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

pub fn load(dir: &Path, cfg: &Value) -> ExperimentConfig {
    ExperimentConfig::load(write_config(dir, cfg), &[]).unwrap()
}
