use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, LabelProbBackend};
use crate::prob::ProbVector;
use crate::prompt::{LabelSpace, Prompt};

/// A label-biased stand-in for a language model.
///
/// The unbiased conditional is `p* = softmax(scale · onehot(y) + ε)` with
/// `ε ~ N(0, noise_stddev²)` per class, and the returned vector is
/// `normalize(p* ∘ bias_weights)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticOracleSpec {
    pub classes: usize,
    pub true_logit_scale: f64,
    pub bias_weights: Vec<f64>,
    #[serde(default)]
    pub noise_stddev: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticOracleSpec {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::Config(m));
        if self.classes < 2 {
            return bad(format!("synthetic oracle needs >= 2 classes, got {}", self.classes));
        }
        if self.bias_weights.len() != self.classes {
            return bad(format!(
                "{} bias weights for {} classes",
                self.bias_weights.len(),
                self.classes
            ));
        }
        if self.bias_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return bad("bias weights must be positive".into());
        }
        if !(self.noise_stddev >= 0.0 && self.noise_stddev.is_finite()) {
            return bad("noise_stddev must be finite and >= 0".into());
        }
        if !self.true_logit_scale.is_finite() {
            return bad("true_logit_scale must be finite".into());
        }
        Ok(())
    }

    /// `p*` before the bias is applied. `None` means the input carries no
    /// class signal (content-free or unknown query).
    fn unbiased(&self, true_class: Option<usize>, sample_key: u64) -> Vec<f64> {
        let mut logits = vec![0.0; self.classes];
        if let Some(c) = true_class {
            logits[c] = self.true_logit_scale;
        }
        if self.noise_stddev > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(sample_key);
            let normal = Normal::new(0.0, self.noise_stddev).expect("validated stddev");
            for z in &mut logits {
                *z += normal.sample(&mut rng);
            }
        }
        crate::calibrator::softmax(&logits)
    }

    fn biased(&self, true_class: Option<usize>, sample_key: u64) -> ProbVector {
        let weighted = self
            .unbiased(true_class, sample_key)
            .into_iter()
            .zip(&self.bias_weights)
            .map(|(p, w)| p * w)
            .collect();
        ProbVector::normalize(weighted).expect("positive weights on a softmax stay normalizable")
    }
}

/// Oracle output for one sample. `sample_key` selects the noise draw, so a
/// fixed `(spec, sample_key)` always gives bit-identical output.
///
/// Panics if `true_class` is out of range.
pub fn synthetic_oracle_probs(
    true_class: usize,
    spec: &SyntheticOracleSpec,
    sample_key: u64,
) -> ProbVector {
    assert!(true_class < spec.classes, "true class {true_class} out of range");
    spec.biased(Some(true_class), sample_key)
}

/// Backend answering from a [`SyntheticOracleSpec`] and a table of true
/// classes keyed by query input.
///
/// Queries whose input is not in the table (the content-free token, for
/// instance) get `p* = softmax(noise)`, uniform when noise is off. Noise is
/// keyed by a hash of the full rendered prompt, so the same query under
/// different demonstrations draws different noise.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    spec: SyntheticOracleSpec,
    truth: HashMap<String, usize>,
    model_name: String,
    max_parallel: usize,
}

impl SyntheticBackend {
    pub fn new(spec: SyntheticOracleSpec, truth: HashMap<String, usize>) -> Self {
        Self {
            spec,
            truth,
            model_name: "synthetic".into(),
            max_parallel: 1,
        }
    }

    pub fn with_model_name(mut self, name: &str) -> Self {
        self.model_name = name.to_owned();
        self
    }

    pub fn with_max_parallel(mut self, n: usize) -> Self {
        self.max_parallel = n.max(1);
        self
    }

    pub fn spec(&self) -> &SyntheticOracleSpec {
        &self.spec
    }
}

fn text_key(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl LabelProbBackend for SyntheticBackend {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn query(&self, prompt: &Prompt, labels: &LabelSpace) -> Result<ProbVector, BackendError> {
        if labels.len() != self.spec.classes {
            return Err(BackendError::Config(format!(
                "label space has {} classes, synthetic oracle has {}",
                labels.len(),
                self.spec.classes
            )));
        }
        let true_class = self.truth.get(&prompt.query_input.key()).copied();
        if let Some(c) = true_class {
            if c >= self.spec.classes {
                return Err(BackendError::Config(format!("oracle truth has class {c}")));
            }
        }
        Ok(self.spec.biased(true_class, text_key(&prompt.rendered_text)))
    }

    fn max_parallel(&self) -> usize {
        self.max_parallel
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{assemble_prompt, Input, PromptTemplate};

    fn spec(scale: f64, bias: &[f64], noise: f64) -> SyntheticOracleSpec {
        SyntheticOracleSpec {
            classes: bias.len(),
            true_logit_scale: scale,
            bias_weights: bias.to_vec(),
            noise_stddev: noise,
            seed: 7,
        }
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn uniform_without_signal() {
        let p = synthetic_oracle_probs(1, &spec(0.0, &[1.0, 1.0, 1.0], 0.0), 0);
        assert!(close(p.values(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn large_scale_saturates() {
        let p = synthetic_oracle_probs(0, &spec(60.0, &[1.0, 1.0], 0.0), 0);
        assert!(p.values()[0] > 1.0 - 1e-12);
    }

    #[test]
    fn bias_flip_fixture() {
        let s = spec(1.5f64.ln(), &[4.0, 1.0], 0.0);
        // true conditional (0.6, 0.4) → (2.4, 0.4) → (6/7, 1/7)
        let p0 = synthetic_oracle_probs(0, &s, 0);
        assert!(close(p0.values(), &[6.0 / 7.0, 1.0 / 7.0], 1e-12));
        // (0.4, 0.6) → (1.6, 0.6) → (8/11, 3/11): argmax flips to class 0
        let p1 = synthetic_oracle_probs(1, &s, 0);
        assert!(close(p1.values(), &[8.0 / 11.0, 3.0 / 11.0], 1e-12));
        assert_eq!(p1.argmax(), 0);
    }

    #[test]
    fn unbiased_noiseless_argmax_is_truth() {
        let s = spec(0.3, &[1.0, 1.0, 1.0, 1.0], 0.0);
        for c in 0..4 {
            assert_eq!(synthetic_oracle_probs(c, &s, 0).argmax(), c);
        }
    }

    #[test]
    fn noise_is_reproducible_per_key() {
        let s = spec(1.0, &[2.0, 1.0, 1.0], 0.5);
        let a = synthetic_oracle_probs(2, &s, 11);
        assert_eq!(a, synthetic_oracle_probs(2, &s, 11));
        assert_ne!(a, synthetic_oracle_probs(2, &s, 12));
    }

    #[test]
    fn backend_uses_truth_table() {
        let t = PromptTemplate::builtin("sst2").unwrap();
        let ls = t.label_space().unwrap();
        let truth = HashMap::from([("good".to_string(), 0), ("bad".to_string(), 1)]);
        let b = SyntheticBackend::new(spec(1.5f64.ln(), &[4.0, 1.0], 0.0), truth);
        let q = |s: &str| assemble_prompt(&Input::text(s), &[], &t, &ls).unwrap();
        assert!(close(b.query(&q("bad"), &ls).unwrap().values(), &[8.0 / 11.0, 3.0 / 11.0], 1e-12));
        assert!(close(b.query(&q("N/A"), &ls).unwrap().values(), &[0.8, 0.2], 1e-12));
        let wrong = LabelSpace::new(&["a", "b", "c"]).unwrap();
        assert!(b.query(&q("good"), &wrong).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(spec(1.0, &[1.0, 0.0], 0.0).validate().is_err());
        assert!(spec(1.0, &[1.0, 1.0], -1.0).validate().is_err());
        assert!(spec(1.0, &[1.0], 0.0).validate().is_err());
        spec(1.0, &[1.0, 2.0], 0.1).validate().unwrap();
    }
}
