//! Black-box calibration for in-context learning.
//!
//! The crate builds few-shot prompts, reads per-label probabilities from a
//! completion backend, fits an affine map `softmax(A p + b)` over those
//! probabilities with per-sample gradient descent on a handful of labeled
//! validation prompts, and scores the result against the uncalibrated and
//! content-free baselines.
//!
//! Module map:
//!
//! - [`prompt`]: label spaces, templates, demonstration sampling, prompt assembly.
//! - [`dataset`]: JSON Lines loading, splits and the held-out label guard.
//! - [`backend`]: label-probability providers (HTTP, synthetic oracle) and the logit cache.
//! - [`calibrator`]: affine calibration, loss, gradients and the training loop.
//! - [`metrics`]: entropy, expected calibration error, accuracy, aggregation.
//! - [`harness`]: experiment protocols and report emission.

pub mod backend;
pub mod calibrator;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod prob;
pub mod prompt;

pub use backend::{
    BackendConfig, BackendError, BackendKind, CachedBackend, LabelProbBackend, SyntheticOracleSpec,
};
pub use calibrator::{CalibError, CalibrationParams, InitMode, LrSchedule, TrainConfig, TrainTrace};
pub use dataset::{Dataset, HeldOutLabels, TestSet};
pub use error::{Error, Result};
pub use harness::{EvalReport, ExperimentConfig, Method};
pub use metrics::{EceResult, EntropyHistogram};
pub use prob::ProbVector;
pub use prompt::{Demonstration, Input, LabelSpace, Prompt, PromptTemplate};
