use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use crate::calibrator::{CalibrationParams, TrainConfig, TrainTrace};
use crate::error::{Error, Result};
use crate::metrics::{mean_std, EceResult, EntropyHistogram};

pub const REPORT_VERSION: &str = concat!("linc-core ", env!("CARGO_PKG_VERSION"));

/// One method on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub seed: u64,
    pub k: usize,
    pub accuracy: f64,
    pub mean_entropy: f64,
    pub ece: EceResult,
    pub entropy_histogram: EntropyHistogram,
    pub params: CalibrationParams,
    #[serde(default)]
    pub train_trace: Option<TrainTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub seeds: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_ece: f64,
    pub mean_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAudit {
    pub seed: u64,
    /// Distinct backend queries issued while evaluating this seed.
    pub backend_calls: usize,
    /// Test prompts whose estimated length exceeds `max_prompt_tokens`.
    pub prompts_over_budget: usize,
}

/// Wall-clock data kept out of the report so reports stay byte-identical
/// across reruns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    pub elapsed_ms: u128,
    pub training_ms: Vec<TrainingTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTime {
    pub seed: u64,
    pub label: String,
    pub ms: u128,
}

impl RunMeta {
    pub(crate) fn start() -> Self {
        Self {
            version: REPORT_VERSION.to_owned(),
            started_at: chrono::Utc::now().to_rfc3339(),
            ..Default::default()
        }
    }

    pub(crate) fn record(&mut self, seed: u64, label: impl Into<String>, d: Duration) {
        self.training_ms.push(TrainingTime {
            seed,
            label: label.into(),
            ms: d.as_millis(),
        });
    }

    pub(crate) fn finish(&mut self, started: std::time::Instant) {
        self.finished_at = chrono::Utc::now().to_rfc3339();
        self.elapsed_ms = started.elapsed().as_millis();
    }
}

/// Rows for the flat CSV view of a report.
pub trait CsvTable {
    fn header(&self) -> Vec<&'static str>;
    fn rows(&self) -> Vec<Vec<String>>;

    fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for r in self.rows() {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write `{stem}.json`, `{stem}.csv` and `run_meta.json` under `dir`.
pub fn write_report<R: Serialize + CsvTable>(
    report: &R,
    meta: &RunMeta,
    dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}.csv"));
    let meta_path = dir.join("run_meta.json");
    write_json(report, &json)?;
    report.write_csv(&csv)?;
    write_json(meta, &meta_path)?;
    Ok(vec![json, csv, meta_path])
}

/// Few-shot evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<MethodAggregate>,
    pub seed_audit: Vec<SeedAudit>,
    #[serde(skip)]
    pub meta: RunMeta,
}

impl EvalReport {
    pub(crate) fn new(config: ExperimentConfig, cells: Vec<CellResult>, seed_audit: Vec<SeedAudit>) -> Self {
        let aggregates = aggregate(&cells);
        Self {
            version: REPORT_VERSION.to_owned(),
            config,
            cells,
            aggregates,
            seed_audit,
            meta: RunMeta::default(),
        }
    }

    pub fn aggregate(&self, method: Method) -> Option<&MethodAggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Report JSON, flat CSV, one entropy histogram CSV per cell, and the
    /// run metadata. Returns the written paths, report JSON first.
    pub fn emit(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let mut paths = write_report(self, &self.meta, dir, "report")?;
        for cell in &self.cells {
            let p = dir.join(format!("entropy_{}_{}.csv", cell.method, cell.seed));
            let file = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            cell.entropy_histogram.write_csv(file)?;
            paths.push(p);
        }
        Ok(paths)
    }

    /// `method: mean ± std` per method, in method order.
    pub fn summary_line(&self) -> String {
        self.aggregates
            .iter()
            .map(|a| format!("{}: {:.4} ± {:.4}", a.method, a.mean_accuracy, a.std_accuracy))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl CsvTable for EvalReport {
    fn header(&self) -> Vec<&'static str> {
        vec!["method", "seed", "k", "accuracy", "mean_entropy", "ece"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.cells
            .iter()
            .map(|c| {
                vec![
                    c.method.to_string(),
                    c.seed.to_string(),
                    c.k.to_string(),
                    c.accuracy.to_string(),
                    c.mean_entropy.to_string(),
                    c.ece.ece.to_string(),
                ]
            })
            .collect()
    }
}

/// Per-method mean/std over cells, methods in enum order.
pub fn aggregate(cells: &[CellResult]) -> Vec<MethodAggregate> {
    let mut methods: Vec<Method> = cells.iter().map(|c| c.method).collect();
    methods.sort();
    methods.dedup();
    methods
        .into_iter()
        .map(|m| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.method == m).collect();
            let acc: Vec<f64> = mine.iter().map(|c| c.accuracy).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&acc).expect("non-empty");
            let n = mine.len() as f64;
            MethodAggregate {
                method: m,
                seeds: mine.len(),
                mean_accuracy,
                std_accuracy,
                mean_ece: mine.iter().map(|c| c.ece.ece).sum::<f64>() / n,
                mean_entropy: mine.iter().map(|c| c.mean_entropy).sum::<f64>() / n,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyError {
    pub what: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionCell {
    pub proportion_index: usize,
    pub proportion: Vec<f64>,
    pub permutation: usize,
    pub method: Method,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionStudyReport {
    pub version: String,
    pub k: usize,
    pub cells: Vec<ProportionCell>,
    pub errors: Vec<StudyError>,
}

impl ProportionStudyReport {
    /// Accuracies of `method` for one proportion across permutations.
    pub fn accuracies(&self, proportion_index: usize, method: Method) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.proportion_index == proportion_index && c.method == method)
            .map(|c| c.accuracy)
            .collect()
    }
}

impl CsvTable for ProportionStudyReport {
    fn header(&self) -> Vec<&'static str> {
        vec!["proportion_index", "proportion", "permutation", "method", "accuracy"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.cells
            .iter()
            .map(|c| {
                let prop: Vec<String> = c.proportion.iter().map(f64::to_string).collect();
                vec![
                    c.proportion_index.to_string(),
                    prop.join(";"),
                    c.permutation.to_string(),
                    c.method.to_string(),
                    c.accuracy.to_string(),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRow {
    pub template: String,
    pub method: Method,
    pub accuracy: f64,
    pub mean_entropy: f64,
    pub ece: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadSummary {
    pub method: Method,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateStudyReport {
    pub version: String,
    pub rows: Vec<TemplateRow>,
    pub summary: Vec<SpreadSummary>,
    pub errors: Vec<StudyError>,
}

impl TemplateStudyReport {
    pub fn summary_for(&self, method: Method) -> Option<&SpreadSummary> {
        self.summary.iter().find(|s| s.method == method)
    }
}

impl CsvTable for TemplateStudyReport {
    fn header(&self) -> Vec<&'static str> {
        vec!["template", "method", "accuracy", "mean_entropy", "ece"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.template.clone(),
                    r.method.to_string(),
                    r.accuracy.to_string(),
                    r.mean_entropy.to_string(),
                    r.ece.to_string(),
                ]
            })
            .collect()
    }
}

/// One point of the validation-size sweep. Reference rows (the baselines)
/// have no validation size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub validation_size: Option<usize>,
    /// Labeled examples used in total: validation size plus k.
    pub labeled_total: Option<usize>,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub version: String,
    pub k: usize,
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<StudyError>,
}

impl CsvTable for SweepReport {
    fn header(&self) -> Vec<&'static str> {
        vec!["method", "validation_size", "labeled_total", "mean_accuracy", "std_accuracy"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.method.to_string(),
                    opt(r.validation_size),
                    opt(r.labeled_total),
                    r.mean_accuracy.to_string(),
                    r.std_accuracy.to_string(),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub epochs: usize,
    pub validation_size: usize,
    pub step_size: f64,
    pub holdout_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub version: String,
    pub holdout_size: usize,
    pub cells: Vec<GridCell>,
    pub best: TrainConfig,
    pub best_holdout_accuracy: f64,
    pub skipped: Vec<StudyError>,
}

impl CsvTable for GridReport {
    fn header(&self) -> Vec<&'static str> {
        vec!["epochs", "validation_size", "step_size", "holdout_accuracy"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.cells
            .iter()
            .map(|c| {
                vec![
                    c.epochs.to_string(),
                    c.validation_size.to_string(),
                    c.step_size.to_string(),
                    c.holdout_accuracy.to_string(),
                ]
            })
            .collect()
    }
}
