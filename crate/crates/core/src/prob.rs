use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the unit-sum invariant of a [`ProbVector`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("probability vector needs at least 2 entries, got {0}")]
    TooShort(usize),
    #[error("entry {index} is {value}, expected a finite non-negative number")]
    BadEntry { index: usize, value: f64 },
    #[error("entries sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("total mass is {0}, cannot normalize")]
    ZeroMass(f64),
}

/// Probability vector over the C classes of a label space.
///
/// Always normalized at construction; `raw_mass` keeps the pre-normalization
/// sum (for label-token extraction this is the share of next-token mass that
/// landed on the verbalizers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProbVector")]
pub struct ProbVector {
    values: Vec<f64>,
    raw_mass: f64,
}

#[derive(Deserialize)]
struct RawProbVector {
    values: Vec<f64>,
    raw_mass: f64,
}

impl TryFrom<RawProbVector> for ProbVector {
    type Error = ProbError;

    fn try_from(raw: RawProbVector) -> Result<Self, Self::Error> {
        Ok(Self::from_simplex(raw.values)?.with_raw_mass(raw.raw_mass))
    }
}

impl ProbVector {
    /// Normalize non-negative weights to unit sum.
    pub fn normalize(weights: Vec<f64>) -> Result<Self, ProbError> {
        if weights.len() < 2 {
            return Err(ProbError::TooShort(weights.len()));
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(ProbError::BadEntry { index, value });
            }
        }
        let mass: f64 = weights.iter().sum();
        if mass.is_nan() || mass <= 0.0 || !mass.is_finite() {
            return Err(ProbError::ZeroMass(mass));
        }
        let values = weights.into_iter().map(|w| w / mass).collect();
        Ok(Self {
            values,
            raw_mass: mass,
        })
    }

    /// Accept values that already sum to 1 (within [`SIMPLEX_TOLERANCE`])
    /// without rescaling them.
    pub fn from_simplex(values: Vec<f64>) -> Result<Self, ProbError> {
        let check = Self::normalize(values.clone())?;
        if (check.raw_mass - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(ProbError::NotNormalized(check.raw_mass));
        }
        Ok(Self {
            values,
            raw_mass: 1.0,
        })
    }

    /// Replace the recorded pre-normalization mass.
    pub fn with_raw_mass(mut self, raw_mass: f64) -> Self {
        self.raw_mass = raw_mass;
        self
    }

    pub fn uniform(classes: usize) -> Self {
        Self {
            values: vec![1.0 / classes as f64; classes],
            raw_mass: 1.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn raw_mass(&self) -> f64 {
        self.raw_mass
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
