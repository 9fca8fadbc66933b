use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use super::config::{ExperimentConfig, Method, ValidationDemos};
use super::report::{
    CellResult, EvalReport, GridCell, GridReport, ProportionCell, ProportionStudyReport, RunMeta,
    SeedAudit, SpreadSummary, StudyError, SweepReport, SweepRow, TemplateRow, TemplateStudyReport,
    REPORT_VERSION,
};
use crate::backend::{build_backend, precompute_validation_logits, query_many, CachedBackend, LabelProbBackend};
use crate::calibrator::{
    baseline_noc, calibrated_probs, init_conc, predict, train_linc, CalibError, CalibrationParams,
    InitMode, TrainConfig, TrainTrace,
};
use crate::dataset::{shuffled_indices, stratified_split, Dataset, TestSet};
use crate::error::{Error, Result};
use crate::metrics::{entropy_histogram, expected_calibration_error, mean_std};
use crate::prob::ProbVector;
use crate::prompt::{
    assemble_prompt, build_validation_prompts, content_free_prompt, estimate_token_budget,
    permute_demonstrations, sample_demonstrations, Demonstration, LabelSpace, Prompt, PromptTemplate,
};

/// Which protocol the data is being prepared for. Decides how many rows
/// are carved out of the training file for validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    FewShot,
    ValidationSweep,
    HyperparameterGrid,
}

/// Loaded data, resolved template and a cached backend.
pub struct Experiment {
    cfg: ExperimentConfig,
    template: PromptTemplate,
    labels: LabelSpace,
    demo_pool: Vec<Demonstration>,
    validation_pool: Vec<Demonstration>,
    test: TestSet,
    backend: Arc<CachedBackend>,
}

struct Loaded {
    demo_pool: Vec<Demonstration>,
    validation_pool: Vec<Demonstration>,
    test: Vec<Demonstration>,
    all_rows: Vec<Demonstration>,
}

fn independent_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

impl Experiment {
    /// Load data and build the backend named in the config.
    pub fn prepare(cfg: ExperimentConfig, protocol: Protocol) -> Result<Self> {
        let (template, labels) = resolve_template(&cfg)?;
        let loaded = load_data(&cfg, &labels, protocol)?;
        let inner = build_backend(&cfg.backend, || {
            loaded
                .all_rows
                .iter()
                .map(|d| (d.input.key(), d.label))
                .collect::<HashMap<_, _>>()
        })
        .map_err(|e| Error::backend("backend setup", e))?;
        Self::assemble(cfg, template, labels, loaded, inner)
    }

    /// Same as [`Experiment::prepare`] with a caller-supplied backend.
    pub fn with_backend(
        cfg: ExperimentConfig,
        protocol: Protocol,
        backend: Arc<dyn LabelProbBackend>,
    ) -> Result<Self> {
        let (template, labels) = resolve_template(&cfg)?;
        let loaded = load_data(&cfg, &labels, protocol)?;
        Self::assemble(cfg, template, labels, loaded, backend)
    }

    fn assemble(
        cfg: ExperimentConfig,
        template: PromptTemplate,
        labels: LabelSpace,
        loaded: Loaded,
        inner: Arc<dyn LabelProbBackend>,
    ) -> Result<Self> {
        let mut cache = CachedBackend::new(inner);
        if let Some(dir) = &cfg.backend.cache_dir {
            cache = cache
                .with_dir(dir)
                .map_err(|e| Error::backend("cache setup", e))?;
        }
        if cfg.k > loaded.demo_pool.len() {
            return Err(Error::Config(format!(
                "k = {} but only {} rows are left for demonstrations",
                cfg.k,
                loaded.demo_pool.len()
            )));
        }
        log::info!(
            "{} demonstration rows, {} validation rows, {} test rows",
            loaded.demo_pool.len(),
            loaded.validation_pool.len(),
            loaded.test.len()
        );
        Ok(Self {
            cfg,
            template,
            labels,
            demo_pool: loaded.demo_pool,
            validation_pool: loaded.validation_pool,
            test: TestSet::from_rows(loaded.test),
            backend: Arc::new(cache),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn backend(&self) -> &CachedBackend {
        &self.backend
    }

    pub fn validation_pool_len(&self) -> usize {
        self.validation_pool.len()
    }

    pub fn test_len(&self) -> usize {
        self.test.len()
    }

    fn demos_for(&self, seed: u64, proportions: Option<&[f64]>) -> Result<Vec<Demonstration>> {
        Ok(sample_demonstrations(&self.demo_pool, self.cfg.k, seed, proportions)?)
    }

    fn validation_demos(&self, demos: &[Demonstration], seed: u64) -> Result<Vec<Demonstration>> {
        match self.cfg.validation_demos {
            ValidationDemos::Shared => Ok(demos.to_vec()),
            ValidationDemos::Independent => self.demos_for(independent_seed(seed), None),
        }
    }

    fn query(&self, prompts: &[Prompt], labels: &LabelSpace, stage: String) -> Result<Vec<ProbVector>> {
        query_many(&*self.backend, prompts, labels).map_err(|e| Error::backend(stage, e))
    }

    fn content_free(
        &self,
        template: &PromptTemplate,
        labels: &LabelSpace,
        demos: &[Demonstration],
        seed: u64,
    ) -> Result<ProbVector> {
        let prompt = content_free_prompt(demos, template, labels, &self.cfg.cf_token)?;
        let mut p = self.query(&[prompt], labels, format!("seed {seed}: content-free prompt"))?;
        Ok(p.remove(0))
    }

    /// Train on the first `train.validation_size` validation rows.
    fn fit_linc(
        &self,
        template: &PromptTemplate,
        labels: &LabelSpace,
        val_demos: &[Demonstration],
        train: &TrainConfig,
        seed: u64,
    ) -> Result<(CalibrationParams, TrainTrace)> {
        let n = train.validation_size;
        if n == 0 || n > self.validation_pool.len() {
            return Err(Error::Config(format!(
                "validation_size {n} but the validation pool has {} rows",
                self.validation_pool.len()
            )));
        }
        let before = self.backend.backend_calls();
        let pairs = build_validation_prompts(&self.validation_pool[..n], val_demos, template, labels)?;
        let (prompts, ys): (Vec<Prompt>, Vec<usize>) = pairs.into_iter().unzip();
        let probs = precompute_validation_logits(&prompts, labels, &self.backend)
            .map_err(|e| Error::backend(format!("seed {seed}: validation prompts"), e))?;
        let cf = match train.init_mode {
            InitMode::Conc => Some(self.content_free(template, labels, val_demos, seed)?),
            _ => None,
        };
        let data: Vec<(ProbVector, usize)> = probs.into_iter().zip(ys).collect();
        let (params, mut trace) = train_linc(&data, train, cf.as_ref())
            .map_err(|e| Error::calibration(format!("seed {seed}: training"), e))?;
        trace.backend_calls = self.backend.backend_calls() - before;
        Ok((params, trace))
    }

    /// Fit the calibrator for the first configured seed.
    pub fn calibrate(&self) -> Result<(CalibrationParams, TrainTrace)> {
        let seed = self.cfg.seeds[0];
        let demos = self.demos_for(seed, None)?;
        let val_demos = self.validation_demos(&demos, seed)?;
        self.fit_linc(&self.template, &self.labels, &val_demos, &self.cfg.train, seed)
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate(
        &self,
        template: &PromptTemplate,
        labels: &LabelSpace,
        demos: &[Demonstration],
        val_demos: &[Demonstration],
        methods: &[Method],
        train: &TrainConfig,
        seed: u64,
        meta: &mut RunMeta,
    ) -> Result<(Vec<CellResult>, usize)> {
        let mut prompts = Vec::with_capacity(self.test.len());
        let mut over_budget = 0;
        for input in &self.test.inputs {
            let mut p = assemble_prompt(input, demos, template, labels)?;
            p.provenance.seed = Some(seed);
            if let Some(max) = self.cfg.max_prompt_tokens {
                if !estimate_token_budget(&p, max, None).fits {
                    over_budget += 1;
                }
            }
            prompts.push(p);
        }
        if over_budget > 0 {
            log::warn!("seed {seed}: {over_budget} test prompts may exceed the context window");
        }
        let test_probs = self.query(&prompts, labels, format!("seed {seed}: test prompts"))?;

        let mut methods = methods.to_vec();
        methods.sort();
        methods.dedup();
        let mut cells = Vec::with_capacity(methods.len());
        for method in methods {
            let (params, trace) = match method {
                Method::Noc => (baseline_noc(labels.len()).map_err(|e| Error::calibration("baseline", e))?, None),
                Method::Conc => {
                    let cf = self.content_free(template, labels, demos, seed)?;
                    (init_conc(&cf).map_err(|e| Error::calibration("content-free", e))?, None)
                }
                Method::Linc => {
                    let (params, trace) = self.fit_linc(template, labels, val_demos, train, seed)?;
                    meta.record(seed, format!("linc n_v={}", train.validation_size), trace.wall_clock);
                    (params, Some(trace))
                }
            };
            cells.push(self.score(method, seed, demos.len(), params, trace, &test_probs, labels)?);
        }
        Ok((cells, over_budget))
    }

    #[allow(clippy::too_many_arguments)]
    fn score(
        &self,
        method: Method,
        seed: u64,
        k: usize,
        params: CalibrationParams,
        train_trace: Option<TrainTrace>,
        test_probs: &[ProbVector],
        labels: &LabelSpace,
    ) -> Result<CellResult> {
        let stage = || format!("seed {seed}: scoring {method}");
        let mut calibrated = Vec::with_capacity(test_probs.len());
        let mut preds = Vec::with_capacity(test_probs.len());
        for p in test_probs {
            calibrated.push(calibrated_probs(&params, p.values()).map_err(|e| Error::calibration(stage(), e))?);
            preds.push(predict(&params, p.values()).map_err(|e| Error::calibration(stage(), e))?);
        }
        let correct = self.test.labels.correctness(&preds)?;
        let accuracy = self.test.labels.accuracy(&preds)?;
        let confidences: Vec<f64> = calibrated.iter().map(|q| q.max().clamp(0.0, 1.0)).collect();
        let ece = expected_calibration_error(&confidences, &correct, self.cfg.ece_bins)?;
        let entropy_histogram = entropy_histogram(&calibrated, labels.len(), self.cfg.entropy_bins)?;
        Ok(CellResult {
            method,
            seed,
            k,
            accuracy,
            mean_entropy: entropy_histogram.mean_entropy,
            ece,
            entropy_histogram,
            params,
            train_trace,
        })
    }

    /// Every configured method on every seed.
    pub fn run_fewshot_eval(&self) -> Result<EvalReport> {
        let started = Instant::now();
        let mut meta = RunMeta::start();
        let mut cells = Vec::new();
        let mut audit = Vec::new();
        for &seed in &self.cfg.seeds {
            let demos = self.demos_for(seed, None)?;
            let val_demos = self.validation_demos(&demos, seed)?;
            let before = self.backend.backend_calls();
            let (mut seed_cells, over) = self.evaluate(
                &self.template,
                &self.labels,
                &demos,
                &val_demos,
                &self.cfg.methods,
                &self.cfg.train,
                seed,
                &mut meta,
            )?;
            audit.push(SeedAudit {
                seed,
                backend_calls: self.backend.backend_calls() - before,
                prompts_over_budget: over,
            });
            cells.append(&mut seed_cells);
        }
        let mut report = EvalReport::new(self.cfg.clone(), cells, audit);
        meta.finish(started);
        report.meta = meta;
        Ok(report)
    }

    /// Accuracy under each demonstration label mix, over several orderings
    /// of the same demonstrations. A mix that the pool cannot satisfy is
    /// recorded and skipped.
    pub fn run_label_proportion_study(&self) -> Result<(ProportionStudyReport, RunMeta)> {
        let started = Instant::now();
        let mut meta = RunMeta::start();
        let classes = self.labels.len();
        let mixes = if self.cfg.studies.proportions.is_empty() {
            default_proportions(classes)
        } else {
            self.cfg.studies.proportions.clone()
        };
        let base = self.cfg.seeds[0];
        let mut cells = Vec::new();
        let mut errors = Vec::new();
        for (index, mix) in mixes.iter().enumerate() {
            if mix.len() != classes {
                errors.push(StudyError {
                    what: format!("proportion {index}"),
                    message: format!("{} fractions for {classes} classes", mix.len()),
                });
                continue;
            }
            let demos = match self.demos_for(base, Some(mix)) {
                Ok(d) => d,
                Err(e) => {
                    errors.push(StudyError {
                        what: format!("proportion {index}"),
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            for perm in 0..self.cfg.studies.permutations.max(1) {
                let ordered = if perm == 0 {
                    demos.clone()
                } else {
                    permute_demonstrations(&demos, base.wrapping_add(perm as u64))
                };
                let val_demos = self.validation_demos(&ordered, base)?;
                let (results, _) = self.evaluate(
                    &self.template,
                    &self.labels,
                    &ordered,
                    &val_demos,
                    &self.cfg.methods,
                    &self.cfg.train,
                    base,
                    &mut meta,
                )?;
                cells.extend(results.into_iter().map(|c| ProportionCell {
                    proportion_index: index,
                    proportion: mix.clone(),
                    permutation: perm,
                    method: c.method,
                    accuracy: c.accuracy,
                }));
            }
        }
        meta.finish(started);
        let report = ProportionStudyReport {
            version: REPORT_VERSION.to_owned(),
            k: self.cfg.k,
            cells,
            errors,
        };
        Ok((report, meta))
    }

    /// The same demonstrations rendered with each configured template.
    pub fn run_template_study(&self) -> Result<(TemplateStudyReport, RunMeta)> {
        let started = Instant::now();
        let mut meta = RunMeta::start();
        let names = &self.cfg.studies.templates;
        if names.len() < 2 {
            return Err(Error::Config("the template study needs at least two templates".into()));
        }
        let seed = self.cfg.seeds[0];
        let demos = self.demos_for(seed, None)?;
        let val_demos = self.validation_demos(&demos, seed)?;
        let mut rows = Vec::new();
        let mut errors = Vec::new();
        for name in names {
            let resolved = PromptTemplate::resolve(name).and_then(|t| {
                let ls = t.label_space()?;
                Ok((t, ls))
            });
            let (template, labels) = match resolved {
                Ok(pair) if pair.1.len() == self.labels.len() => pair,
                Ok(pair) => {
                    errors.push(StudyError {
                        what: name.clone(),
                        message: format!("{} classes, expected {}", pair.1.len(), self.labels.len()),
                    });
                    continue;
                }
                Err(e) => {
                    errors.push(StudyError {
                        what: name.clone(),
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            let evaluated = self.evaluate(
                &template,
                &labels,
                &demos,
                &val_demos,
                &self.cfg.methods,
                &self.cfg.train,
                seed,
                &mut meta,
            );
            let cells = match evaluated {
                Ok((cells, _)) => cells,
                Err(Error::Prompt(e)) => {
                    errors.push(StudyError {
                        what: name.clone(),
                        message: e.to_string(),
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            rows.extend(cells.into_iter().map(|c| TemplateRow {
                template: name.clone(),
                method: c.method,
                accuracy: c.accuracy,
                mean_entropy: c.mean_entropy,
                ece: c.ece.ece,
            }));
        }
        let mut methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
        methods.sort();
        methods.dedup();
        let summary = methods
            .into_iter()
            .map(|m| {
                let acc: Vec<f64> = rows.iter().filter(|r| r.method == m).map(|r| r.accuracy).collect();
                let (mean_accuracy, std_accuracy) = mean_std(&acc)?;
                Ok(SpreadSummary {
                    method: m,
                    mean_accuracy,
                    std_accuracy,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        meta.finish(started);
        let report = TemplateStudyReport {
            version: REPORT_VERSION.to_owned(),
            rows,
            summary,
            errors,
        };
        Ok((report, meta))
    }

    /// LinC accuracy as a function of validation size, with the baselines
    /// as constant reference rows. Validation sets are nested prefixes of
    /// one pool.
    pub fn run_validation_size_sweep(&self) -> Result<(SweepReport, RunMeta)> {
        let started = Instant::now();
        let mut meta = RunMeta::start();
        let mut sizes = self.cfg.studies.validation_sizes.clone();
        sizes.sort_unstable();
        sizes.dedup();
        let mut skipped = Vec::new();
        sizes.retain(|&n| {
            let ok = n >= 1 && n <= self.validation_pool.len();
            if !ok {
                skipped.push(StudyError {
                    what: format!("validation_size {n}"),
                    message: format!("validation pool has {} rows", self.validation_pool.len()),
                });
            }
            ok
        });
        let references: Vec<Method> = self
            .cfg
            .methods
            .iter()
            .copied()
            .filter(|m| *m != Method::Linc)
            .collect();
        let mut reference_acc: Vec<(Method, Vec<f64>)> = Vec::new();
        let mut linc_acc: Vec<Vec<f64>> = vec![Vec::new(); sizes.len()];
        for &seed in &self.cfg.seeds {
            let demos = self.demos_for(seed, None)?;
            let val_demos = self.validation_demos(&demos, seed)?;
            if !references.is_empty() {
                let (cells, _) = self.evaluate(
                    &self.template,
                    &self.labels,
                    &demos,
                    &val_demos,
                    &references,
                    &self.cfg.train,
                    seed,
                    &mut meta,
                )?;
                for c in cells {
                    match reference_acc.iter_mut().find(|(m, _)| *m == c.method) {
                        Some((_, v)) => v.push(c.accuracy),
                        None => reference_acc.push((c.method, vec![c.accuracy])),
                    }
                }
            }
            for (slot, &n) in linc_acc.iter_mut().zip(&sizes) {
                let train = TrainConfig {
                    validation_size: n,
                    ..self.cfg.train.clone()
                };
                let (cells, _) = self.evaluate(
                    &self.template,
                    &self.labels,
                    &demos,
                    &val_demos,
                    &[Method::Linc],
                    &train,
                    seed,
                    &mut meta,
                )?;
                slot.push(cells[0].accuracy);
            }
        }
        let mut rows = Vec::new();
        for (method, accuracies) in reference_acc {
            let (mean_accuracy, std_accuracy) = mean_std(&accuracies)?;
            rows.push(SweepRow {
                method,
                validation_size: None,
                labeled_total: None,
                accuracies,
                mean_accuracy,
                std_accuracy,
            });
        }
        for (accuracies, n) in linc_acc.into_iter().zip(sizes) {
            let (mean_accuracy, std_accuracy) = mean_std(&accuracies)?;
            rows.push(SweepRow {
                method: Method::Linc,
                validation_size: Some(n),
                labeled_total: Some(n + self.cfg.k),
                accuracies,
                mean_accuracy,
                std_accuracy,
            });
        }
        meta.finish(started);
        let report = SweepReport {
            version: REPORT_VERSION.to_owned(),
            k: self.cfg.k,
            rows,
            skipped,
        };
        Ok((report, meta))
    }

    /// Grid search over (epochs, validation size, step size), scored on a
    /// held-out slice of the validation pool. Ties go to the
    /// lexicographically smallest triple.
    pub fn run_hyperparameter_grid(&self) -> Result<(GridReport, RunMeta)> {
        let started = Instant::now();
        let mut meta = RunMeta::start();
        let grid = &self.cfg.studies.grid;
        let pool_len = self.validation_pool.len();
        let holdout = ((grid.holdout_fraction * pool_len as f64).round() as usize).max(1);
        if holdout >= pool_len {
            return Err(Error::Config(format!(
                "validation pool of {pool_len} rows is too small to hold out {holdout}"
            )));
        }
        let order = shuffled_indices(pool_len, self.cfg.split_seed.wrapping_add(2));
        let fit_rows: Vec<Demonstration> =
            order[..pool_len - holdout].iter().map(|&i| self.validation_pool[i].clone()).collect();
        let hold_rows: Vec<Demonstration> =
            order[pool_len - holdout..].iter().map(|&i| self.validation_pool[i].clone()).collect();

        let seed = self.cfg.seeds[0];
        let demos = self.demos_for(seed, None)?;
        let val_demos = self.validation_demos(&demos, seed)?;
        let (template, labels) = (&self.template, &self.labels);

        let mut epochs = grid.epochs.clone();
        epochs.sort_unstable();
        epochs.dedup();
        let mut sizes = grid.validation_sizes.clone();
        sizes.sort_unstable();
        sizes.dedup();
        let mut steps = grid.step_sizes.clone();
        steps.sort_by(f64::total_cmp);
        steps.dedup();

        let mut skipped = Vec::new();
        sizes.retain(|&n| {
            let ok = n >= 1 && n <= fit_rows.len();
            if !ok {
                skipped.push(StudyError {
                    what: format!("validation_size {n}"),
                    message: format!("{} rows available for fitting", fit_rows.len()),
                });
            }
            ok
        });
        let max_fit = sizes.last().copied().unwrap_or(0);

        let stage = |what: &str| format!("seed {seed}: grid {what} prompts");
        let (hold_prompts, hold_labels): (Vec<Prompt>, Vec<usize>) =
            build_validation_prompts(&hold_rows, &val_demos, template, labels)?.into_iter().unzip();
        let hold_probs = self.query(&hold_prompts, labels, stage("held-out"))?;
        let (fit_prompts, fit_labels): (Vec<Prompt>, Vec<usize>) =
            build_validation_prompts(&fit_rows[..max_fit], &val_demos, template, labels)?
                .into_iter()
                .unzip();
        let fit_probs = self.query(&fit_prompts, labels, stage("fitting"))?;
        let fit_data: Vec<(ProbVector, usize)> = fit_probs.into_iter().zip(fit_labels).collect();
        let cf = match self.cfg.train.init_mode {
            InitMode::Conc => Some(self.content_free(template, labels, &val_demos, seed)?),
            _ => None,
        };

        let mut cells = Vec::new();
        let mut best: Option<(f64, TrainConfig)> = None;
        for &t in &epochs {
            for &n in &sizes {
                for &step in &steps {
                    let train = TrainConfig {
                        epochs: t,
                        validation_size: n,
                        step_size: step,
                        ..self.cfg.train.clone()
                    };
                    let params = match train_linc(&fit_data[..n], &train, cf.as_ref()) {
                        Ok((params, trace)) => {
                            meta.record(seed, format!("grid T={t} n_v={n} step={step}"), trace.wall_clock);
                            params
                        }
                        Err(e @ CalibError::Diverged { .. }) => {
                            skipped.push(StudyError {
                                what: format!("T={t} n_v={n} step={step}"),
                                message: e.to_string(),
                            });
                            continue;
                        }
                        Err(e) => return Err(Error::calibration("grid training", e)),
                    };
                    let hits = hold_probs
                        .iter()
                        .zip(&hold_labels)
                        .map(|(p, &y)| predict(&params, p.values()).map(|c| c == y))
                        .collect::<Result<Vec<bool>, CalibError>>()
                        .map_err(|e| Error::calibration("grid scoring", e))?;
                    let acc = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
                    cells.push(GridCell {
                        epochs: t,
                        validation_size: n,
                        step_size: step,
                        holdout_accuracy: acc,
                    });
                    if best.as_ref().map_or(true, |(b, _)| acc > *b) {
                        best = Some((acc, train));
                    }
                }
            }
        }
        let (best_holdout_accuracy, best) =
            best.ok_or_else(|| Error::Config("no grid cell could be trained".into()))?;
        meta.finish(started);
        let report = GridReport {
            version: REPORT_VERSION.to_owned(),
            holdout_size: holdout,
            cells,
            best,
            best_holdout_accuracy,
            skipped,
        };
        Ok((report, meta))
    }
}

/// Every single-class mix followed by the uniform mix.
pub fn default_proportions(classes: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..classes)
        .map(|c| (0..classes).map(|i| if i == c { 1.0 } else { 0.0 }).collect())
        .collect();
    out.push(vec![1.0 / classes as f64; classes]);
    out
}

fn resolve_template(cfg: &ExperimentConfig) -> Result<(PromptTemplate, LabelSpace)> {
    let template = PromptTemplate::resolve(&cfg.template)?;
    let labels = match &cfg.class_names {
        Some(names) => {
            let verbalizers: Vec<&str> = template.verbalizers.iter().map(String::as_str).collect();
            LabelSpace::with_names(&verbalizers, names)?
        }
        None => template.label_space()?,
    };
    Ok((template, labels))
}

fn validation_need(cfg: &ExperimentConfig, protocol: Protocol) -> usize {
    match protocol {
        Protocol::FewShot if cfg.methods.contains(&Method::Linc) => cfg.train.validation_size,
        Protocol::FewShot => 0,
        Protocol::ValidationSweep => cfg.studies.validation_sizes.iter().copied().max().unwrap_or(0),
        Protocol::HyperparameterGrid => {
            let g = &cfg.studies.grid;
            let largest = g.validation_sizes.iter().copied().max().unwrap_or(0) as f64;
            (largest / (1.0 - g.holdout_fraction)).ceil() as usize
        }
    }
}

fn load_data(cfg: &ExperimentConfig, labels: &LabelSpace, protocol: Protocol) -> Result<Loaded> {
    let classes = labels.len();
    let load = |path: &std::path::Path| -> Result<Vec<Demonstration>> {
        let ds = Dataset::load_jsonl(path)?;
        ds.check_labels(classes)?;
        Ok(ds.rows)
    };
    let train = load(&cfg.train_path)?;
    let mut all_rows = train.clone();

    let (test, mut train) = match &cfg.test_path {
        Some(path) => {
            let rows = load(path)?;
            all_rows.extend(rows.iter().cloned());
            (stratified_split(&rows, cfg.test_size, cfg.split_seed).0, train)
        }
        None => stratified_split(&train, cfg.test_size, cfg.split_seed),
    };

    let validation_pool = match &cfg.validation_path {
        Some(path) => {
            let rows = load(path)?;
            all_rows.extend(rows.iter().cloned());
            let order = shuffled_indices(rows.len(), cfg.split_seed.wrapping_add(1));
            order.into_iter().map(|i| rows[i].clone()).collect()
        }
        None => {
            let need = validation_need(cfg, protocol);
            let carve = need.min(train.len().saturating_sub(cfg.k));
            if carve < need {
                log::warn!("only {carve} of {need} requested validation rows could be carved out");
            }
            let order = shuffled_indices(train.len(), cfg.split_seed.wrapping_add(1));
            let mut take = vec![false; train.len()];
            for &i in &order[..carve] {
                take[i] = true;
            }
            let pool: Vec<Demonstration> = order[..carve].iter().map(|&i| train[i].clone()).collect();
            let mut i = 0;
            train.retain(|_| {
                i += 1;
                !take[i - 1]
            });
            pool
        }
    };
    if test.is_empty() {
        return Err(Error::Config("the test set is empty".into()));
    }
    Ok(Loaded {
        demo_pool: train,
        validation_pool,
        test,
        all_rows,
    })
}
