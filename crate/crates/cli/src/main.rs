use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use linc_core::harness::{write_report, CsvTable, Experiment, Protocol, RunMeta};
use linc_core::{Error, EvalReport, ExperimentConfig};

/// Calibrate in-context classification with an affine probe over label
/// probabilities.
#[derive(Debug, Parser)]
#[command(name = "linc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the calibrator for the first seed and write params.json.
    Calibrate(RunArgs),
    /// Few-shot evaluation of every configured method and seed.
    Eval(RunArgs),
    /// Accuracy as a function of validation set size.
    SweepValidation(RunArgs),
    /// Grid search over epochs, validation size and step size.
    SweepHparams(RunArgs),
    /// Demonstration label mixes under several orderings.
    StudyPermutations(RunArgs),
    /// One demonstration set rendered with several templates.
    StudyTemplates(RunArgs),
    /// Rewrite the CSV views of an existing report.json.
    ConvertReport {
        /// Path to report.json.
        input: PathBuf,
        /// Output directory (defaults to the report's directory).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override a config field, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run a single seed (also used as the training seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `output` in the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seeds=[{seed}]"));
            overrides.push(format!("train.seed={seed}"));
        }
        let mut cfg = ExperimentConfig::load(&self.config, &overrides)?;
        if let Some(out) = &self.output {
            cfg.output = out.clone();
        }
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_backend() {
        2
    } else if e.is_divergence() {
        3
    } else {
        1
    }
}

fn print_error(e: &Error) {
    let mut msg = format!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        let text = s.to_string();
        if !msg.contains(&text) {
            msg.push_str(&format!("\n  caused by: {text}"));
        }
        source = s.source();
    }
    eprintln!("{msg}");
}

fn emit<R: serde::Serialize + CsvTable>(report: &R, meta: &RunMeta, dir: &Path, stem: &str) -> Result<PathBuf, Error> {
    Ok(write_report(report, meta, dir, stem)?.remove(0))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Calibrate(args) => {
            let cfg = args.load()?;
            let exp = Experiment::prepare(cfg, Protocol::FewShot)?;
            let (params, trace) = exp.calibrate()?;
            let dir = &exp.config().output;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.clone(), e))?;
            let path = dir.join("params.json");
            let text = serde_json::to_string_pretty(&params)?;
            std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
            let last = trace.epoch_losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "linc: {} epochs, final mean loss {last:.6}, {} backend calls",
                trace.epoch_losses.len(),
                trace.backend_calls
            );
            println!("{}", path.display());
        }
        Command::Eval(args) => {
            let cfg = args.load()?;
            let exp = Experiment::prepare(cfg, Protocol::FewShot)?;
            let report = exp.run_fewshot_eval()?;
            let paths = report.emit(&exp.config().output)?;
            println!("{}", report.summary_line());
            println!("{}", paths[0].display());
        }
        Command::SweepValidation(args) => {
            let cfg = args.load()?;
            let exp = Experiment::prepare(cfg, Protocol::ValidationSweep)?;
            let (report, meta) = exp.run_validation_size_sweep()?;
            let path = emit(&report, &meta, &exp.config().output, "sweep_validation")?;
            let line: Vec<String> = report
                .rows
                .iter()
                .map(|r| match r.validation_size {
                    Some(n) => format!("{}@{n}: {:.4} ± {:.4}", r.method, r.mean_accuracy, r.std_accuracy),
                    None => format!("{}: {:.4} ± {:.4}", r.method, r.mean_accuracy, r.std_accuracy),
                })
                .collect();
            println!("{}", line.join(", "));
            println!("{}", path.display());
        }
        Command::SweepHparams(args) => {
            let cfg = args.load()?;
            let exp = Experiment::prepare(cfg, Protocol::HyperparameterGrid)?;
            let (report, meta) = exp.run_hyperparameter_grid()?;
            let path = emit(&report, &meta, &exp.config().output, "sweep_hparams")?;
            println!(
                "best: epochs={} validation_size={} step_size={} (held-out accuracy {:.4})",
                report.best.epochs,
                report.best.validation_size,
                report.best.step_size,
                report.best_holdout_accuracy
            );
            println!("{}", path.display());
        }
        Command::StudyPermutations(args) => {
            let cfg = args.load()?;
            let exp = Experiment::prepare(cfg, Protocol::FewShot)?;
            let (report, meta) = exp.run_label_proportion_study()?;
            let path = emit(&report, &meta, &exp.config().output, "study_permutations")?;
            let mut parts = Vec::new();
            let mut keys: Vec<_> = report.cells.iter().map(|c| (c.proportion_index, c.method)).collect();
            keys.sort();
            keys.dedup();
            for (i, m) in keys {
                let acc = report.accuracies(i, m);
                let (mean, std) = linc_core::metrics::mean_std(&acc)?;
                parts.push(format!("{m}[{i}]: {mean:.4} ± {std:.4}"));
            }
            for e in &report.errors {
                log::warn!("{}: {}", e.what, e.message);
            }
            println!("{}", parts.join(", "));
            println!("{}", path.display());
        }
        Command::StudyTemplates(args) => {
            let cfg = args.load()?;
            let exp = Experiment::prepare(cfg, Protocol::FewShot)?;
            let (report, meta) = exp.run_template_study()?;
            let path = emit(&report, &meta, &exp.config().output, "study_templates")?;
            for e in &report.errors {
                log::warn!("{}: {}", e.what, e.message);
            }
            let line: Vec<String> = report
                .summary
                .iter()
                .map(|s| format!("{}: {:.4} ± {:.4}", s.method, s.mean_accuracy, s.std_accuracy))
                .collect();
            println!("{}", line.join(", "));
            println!("{}", path.display());
        }
        Command::ConvertReport { input, output } => {
            let report = EvalReport::load(&input)?;
            let dir = match output {
                Some(d) => d,
                None => input.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.clone(), e))?;
            let csv = dir.join("report.csv");
            report.write_csv(&csv)?;
            for cell in &report.cells {
                let p = dir.join(format!("entropy_{}_{}.csv", cell.method, cell.seed));
                let file = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
                cell.entropy_histogram.write_csv(file)?;
            }
            println!("{}", report.summary_line());
            println!("{}", csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            print_error(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
