//! Experiment protocols: few-shot evaluation, robustness studies, sweeps and
//! report emission.

mod config;
mod experiment;
mod report;

pub use config::{apply_override, ExperimentConfig, GridConfig, Method, StudyConfig, ValidationDemos};
pub use experiment::{default_proportions, Experiment, Protocol};
pub use report::{
    aggregate, write_report, CellResult, CsvTable, EvalReport, GridCell, GridReport,
    MethodAggregate, ProportionCell, ProportionStudyReport, RunMeta, SeedAudit, SpreadSummary,
    StudyError, SweepReport, SweepRow, TemplateRow, TemplateStudyReport, TrainingTime,
    REPORT_VERSION,
};
