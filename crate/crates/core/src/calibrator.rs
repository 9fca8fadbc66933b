//! Affine calibration `p̃ = softmax(A p + b)` and its training loop.
//!
//! With `g = p̃ − onehot(y)` the cross-entropy gradients are `∇b = g` and
//! `∇A = g pᵀ`. Training walks the validation set one sample at a time for
//! `T` epochs, carrying parameters across epochs.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{argmax, ProbVector};

/// Floor applied inside `ln` so the loss stays finite.
pub const LOG_FLOOR: f64 = 1e-12;
/// Clamp applied to content-free probabilities before inversion.
pub const CONC_EPSILON: f64 = 1e-10;
pub const MIN_STEP_SIZE: f64 = 1e-5;
pub const MAX_STEP_SIZE: f64 = 2e1;
pub const DEFAULT_STEP_SIZE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibError {
    #[error("expected a length-{expected} vector, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("calibration needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("content-free initialization needs the content-free probabilities")]
    MissingContentFree,
    #[error("training diverged at epoch {epoch}, sample {index} (step size {step_size})")]
    Diverged {
        epoch: usize,
        index: usize,
        step_size: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Zero,
    Random,
    Conc,
    /// Identity matrix, zero bias. Only used by the uncalibrated baseline.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Step size falls linearly from its initial value at epoch 1 to
    /// `floor` at the last epoch.
    LinearDecay { floor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_validation_size")]
    pub validation_size: usize,
    #[serde(default)]
    pub init_mode: InitMode,
    #[serde(default)]
    pub shuffle_each_epoch: bool,
    #[serde(default = "default_random_stddev")]
    pub random_init_stddev: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
}

fn default_step_size() -> f64 {
    DEFAULT_STEP_SIZE
}
fn default_epochs() -> usize {
    50
}
fn default_validation_size() -> usize {
    10
}
fn default_random_stddev() -> f64 {
    0.01
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: default_step_size(),
            epochs: default_epochs(),
            validation_size: default_validation_size(),
            init_mode: InitMode::Zero,
            shuffle_each_epoch: false,
            random_init_stddev: default_random_stddev(),
            seed: 0,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    /// Range checks for user-facing configs. [`train_linc`] itself accepts any
    /// finite non-negative step size (zero is useful as a control).
    pub fn validate(&self) -> Result<(), CalibError> {
        let bad = |m: String| Err(CalibError::InvalidConfig(m));
        if !(MIN_STEP_SIZE..=MAX_STEP_SIZE).contains(&self.step_size) {
            return bad(format!(
                "step_size {} outside [{MIN_STEP_SIZE}, {MAX_STEP_SIZE}]",
                self.step_size
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.validation_size == 0 {
            return bad("validation_size must be >= 1".into());
        }
        if self.init_mode == InitMode::Random && (self.random_init_stddev.is_nan() || self.random_init_stddev <= 0.0) {
            return bad("random_init_stddev must be > 0".into());
        }
        if let LrSchedule::LinearDecay { floor } = self.lr_schedule {
            if !(0.0..=self.step_size).contains(&floor) {
                return bad(format!("decay floor {floor} must lie in [0, step_size]"));
            }
        }
        Ok(())
    }

    fn step_size_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.step_size,
            LrSchedule::LinearDecay { floor } => {
                if self.epochs <= 1 {
                    self.step_size
                } else {
                    let frac = (epoch - 1) as f64 / (self.epochs - 1) as f64;
                    self.step_size + (floor - self.step_size) * frac
                }
            }
        }
    }
}

/// The `C×C` matrix `A` and `C`-vector `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct CalibrationParams {
    #[serde(rename = "C")]
    classes: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    init_mode: InitMode,
    train_config: Option<TrainConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    #[serde(rename = "C")]
    classes: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    init_mode: InitMode,
    #[serde(default)]
    train_config: Option<TrainConfig>,
}

impl TryFrom<RawParams> for CalibrationParams {
    type Error = CalibError;

    fn try_from(raw: RawParams) -> Result<Self, Self::Error> {
        let mut p = CalibrationParams::from_parts(raw.a, raw.b, raw.init_mode)?;
        if p.classes != raw.classes {
            return Err(CalibError::InvalidParams(format!(
                "C = {} but A is {}×{}",
                raw.classes, p.classes, p.classes
            )));
        }
        p.train_config = raw.train_config;
        Ok(p)
    }
}

impl CalibrationParams {
    pub fn from_parts(a: Vec<Vec<f64>>, b: Vec<f64>, init_mode: InitMode) -> Result<Self, CalibError> {
        let c = b.len();
        if c < 2 {
            return Err(CalibError::TooFewClasses(c));
        }
        if a.len() != c || a.iter().any(|row| row.len() != c) {
            return Err(CalibError::InvalidParams(format!("A must be {c}×{c} to match b")));
        }
        if a.iter().flatten().chain(&b).any(|x| !x.is_finite()) {
            return Err(CalibError::InvalidParams("non-finite entry".into()));
        }
        Ok(Self {
            classes: c,
            a,
            b,
            init_mode,
            train_config: None,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn a(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn init_mode(&self) -> InitMode {
        self.init_mode
    }

    pub fn train_config(&self) -> Option<&TrainConfig> {
        self.train_config.as_ref()
    }

    fn is_finite(&self) -> bool {
        self.a.iter().flatten().chain(&self.b).all(|x| x.is_finite())
    }

    fn check_input(&self, p: &[f64]) -> Result<(), CalibError> {
        if p.len() == self.classes {
            Ok(())
        } else {
            Err(CalibError::Shape {
                expected: self.classes,
                found: p.len(),
            })
        }
    }

    fn check_label(&self, y: usize) -> Result<(), CalibError> {
        if y < self.classes {
            Ok(())
        } else {
            Err(CalibError::Label {
                label: y,
                classes: self.classes,
            })
        }
    }

    /// `self -= step * grad`
    fn descend(&mut self, grad: &Gradient, step: f64) {
        for (row, grow) in self.a.iter_mut().zip(&grad.a) {
            for (x, g) in row.iter_mut().zip(grow) {
                *x -= step * g;
            }
        }
        for (x, g) in self.b.iter_mut().zip(&grad.b) {
            *x -= step * g;
        }
    }
}

pub fn init_zero(classes: usize) -> Result<CalibrationParams, CalibError> {
    CalibrationParams::from_parts(
        vec![vec![0.0; classes]; classes],
        vec![0.0; classes],
        InitMode::Zero,
    )
}

/// I.i.d. `N(0, stddev²)` entries for `A` and `b`.
pub fn init_random(classes: usize, seed: u64, stddev: f64) -> Result<CalibrationParams, CalibError> {
    if !(stddev > 0.0 && stddev.is_finite()) {
        return Err(CalibError::InvalidConfig(format!("stddev must be > 0, got {stddev}")));
    }
    if classes < 2 {
        return Err(CalibError::TooFewClasses(classes));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, stddev).expect("positive stddev");
    let a = (0..classes)
        .map(|_| (0..classes).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let b = (0..classes).map(|_| normal.sample(&mut rng)).collect();
    CalibrationParams::from_parts(a, b, InitMode::Random)
}

/// `A = diag(1 / max(p_cf, ε))`, `b = 0`.
pub fn init_conc(p_cf: &ProbVector) -> Result<CalibrationParams, CalibError> {
    let c = p_cf.len();
    let mut a = vec![vec![0.0; c]; c];
    for (i, &p) in p_cf.values().iter().enumerate() {
        a[i][i] = 1.0 / p.max(CONC_EPSILON);
    }
    CalibrationParams::from_parts(a, vec![0.0; c], InitMode::Conc)
}

/// Uncalibrated baseline: `A = I`, `b = 0`.
pub fn baseline_noc(classes: usize) -> Result<CalibrationParams, CalibError> {
    let mut a = vec![vec![0.0; classes]; classes];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    CalibrationParams::from_parts(a, vec![0.0; classes], InitMode::Identity)
}

/// `z = A p + b`
pub fn apply_affine(params: &CalibrationParams, p: &[f64]) -> Result<Vec<f64>, CalibError> {
    params.check_input(p)?;
    Ok(params
        .a
        .iter()
        .zip(&params.b)
        .map(|(row, bias)| row.iter().zip(p).map(|(w, x)| w * x).sum::<f64>() + bias)
        .collect())
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn calibrated_probs(params: &CalibrationParams, p: &[f64]) -> Result<ProbVector, CalibError> {
    let z = apply_affine(params, p)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(CalibError::InvalidParams("non-finite logits".into()));
    }
    Ok(ProbVector::from_simplex(softmax(&z)).expect("softmax of finite logits is on the simplex"))
}

/// Natural-log cross-entropy `−ln max(p̃_y, 1e-12)`.
pub fn cross_entropy(calibrated: &[f64], y: usize) -> f64 {
    -calibrated[y].max(LOG_FLOOR).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Gradient {
    fn zeros(c: usize) -> Self {
        Self {
            a: vec![vec![0.0; c]; c],
            b: vec![0.0; c],
        }
    }

    fn accumulate(&mut self, p: &[f64], g: &[f64]) {
        for ((row, gi), bi) in self.a.iter_mut().zip(g).zip(&mut self.b) {
            for (x, pj) in row.iter_mut().zip(p) {
                *x += gi * pj;
            }
            *bi += gi;
        }
    }
}

/// Loss and gradient of one sample.
fn loss_and_grad(params: &CalibrationParams, p: &[f64], y: usize) -> Result<(f64, Gradient), CalibError> {
    params.check_label(y)?;
    let z = apply_affine(params, p)?;
    let mut g = softmax(&z);
    let loss = cross_entropy(&g, y);
    g[y] -= 1.0;
    let mut grad = Gradient::zeros(params.classes);
    grad.accumulate(p, &g);
    Ok((loss, grad))
}

/// `(∇A, ∇b)` of the cross-entropy of `softmax(A p + b)` against class `y`.
pub fn grad(params: &CalibrationParams, p: &[f64], y: usize) -> Result<Gradient, CalibError> {
    loss_and_grad(params, p, y).map(|(_, g)| g)
}

/// Cross-entropy of one sample under `params`.
pub fn loss(params: &CalibrationParams, p: &[f64], y: usize) -> Result<f64, CalibError> {
    params.check_label(y)?;
    Ok(cross_entropy(&softmax(&apply_affine(params, p)?), y))
}

/// Summed loss over a labeled set.
pub fn objective(params: &CalibrationParams, data: &[(ProbVector, usize)]) -> Result<f64, CalibError> {
    data.iter().map(|(p, y)| loss(params, p.values(), *y)).sum()
}

/// Argmax of the calibrated probabilities, lowest index on ties.
pub fn predict(params: &CalibrationParams, p: &[f64]) -> Result<usize, CalibError> {
    Ok(argmax(&apply_affine(params, p)?))
}

/// Record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean pre-update loss over each epoch's samples.
    pub epoch_losses: Vec<f64>,
    pub final_params: CalibrationParams,
    /// Backend queries attributed to this run by the caller; training itself
    /// never queries.
    pub backend_calls: usize,
    #[serde(skip)]
    pub wall_clock: Duration,
}

/// Per-sample gradient descent on the validation probabilities.
///
/// `content_free` is required when `cfg.init_mode` is [`InitMode::Conc`].
/// The sample order is the given order unless `cfg.shuffle_each_epoch`.
pub fn train_linc(
    val: &[(ProbVector, usize)],
    cfg: &TrainConfig,
    content_free: Option<&ProbVector>,
) -> Result<(CalibrationParams, TrainTrace), CalibError> {
    let started = Instant::now();
    let Some((first, _)) = val.first() else {
        return Err(CalibError::EmptyValidation);
    };
    if !(cfg.step_size >= 0.0 && cfg.step_size.is_finite()) {
        return Err(CalibError::InvalidConfig(format!(
            "step size must be finite and >= 0, got {}",
            cfg.step_size
        )));
    }
    let classes = first.len();
    let mut params = match cfg.init_mode {
        InitMode::Zero => init_zero(classes)?,
        InitMode::Random => init_random(classes, cfg.seed, cfg.random_init_stddev)?,
        InitMode::Conc => init_conc(content_free.ok_or(CalibError::MissingContentFree)?)?,
        InitMode::Identity => baseline_noc(classes)?,
    };
    for (p, y) in val {
        params.check_input(p.values())?;
        params.check_label(*y)?;
    }

    let mut order: Vec<usize> = (0..val.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle_each_epoch {
            order.shuffle(&mut rng);
        }
        let step = cfg.step_size_at(epoch);
        let mut total = 0.0;
        for &i in &order {
            let (p, y) = &val[i];
            let (l, g) = loss_and_grad(&params, p.values(), *y)?;
            params.descend(&g, step);
            if !l.is_finite() || !params.is_finite() {
                return Err(CalibError::Diverged {
                    epoch,
                    index: i,
                    step_size: step,
                });
            }
            total += l;
        }
        epoch_losses.push(total / val.len() as f64);
    }
    params.train_config = Some(cfg.clone());
    let trace = TrainTrace {
        epoch_losses,
        final_params: params.clone(),
        backend_calls: 0,
        wall_clock: started.elapsed(),
    };
    Ok((params, trace))
}

/// Full-batch gradient descent on the summed loss. Returns the parameters
/// and the objective before the first step and after every step.
pub fn full_batch_descent(
    init: &CalibrationParams,
    data: &[(ProbVector, usize)],
    step_size: f64,
    iterations: usize,
) -> Result<(CalibrationParams, Vec<f64>), CalibError> {
    let mut params = init.clone();
    let mut history = Vec::with_capacity(iterations + 1);
    for it in 0..=iterations {
        let mut total = Gradient::zeros(params.classes);
        let mut obj = 0.0;
        for (p, y) in data {
            let (l, g) = loss_and_grad(&params, p.values(), *y)?;
            obj += l;
            for (row, grow) in total.a.iter_mut().zip(&g.a) {
                for (x, gx) in row.iter_mut().zip(grow) {
                    *x += gx;
                }
            }
            for (x, gx) in total.b.iter_mut().zip(&g.b) {
                *x += gx;
            }
        }
        history.push(obj);
        if it < iterations {
            params.descend(&total, step_size);
            if !params.is_finite() {
                return Err(CalibError::Diverged {
                    epoch: it + 1,
                    index: 0,
                    step_size,
                });
            }
        }
    }
    Ok((params, history))
}
