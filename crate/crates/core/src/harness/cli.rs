//! The `labelnoise` command line.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 when a command fails.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use super::{
    load_result, render_csv, render_markdown, render_runs_csv, run_experiment, ExperimentConfig,
    Method,
};
use crate::data::{self, LabelQuality, LabeledDataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::estimation;
use crate::losses::{CorrectedError, LossSpec, ValidationScore};
use crate::metrics;
use crate::nn::{self, checkpoint, Architecture, Model, TrainConfig};
use crate::noise::{self, TransitionMatrix};

#[derive(Debug, Parser)]
#[command(
    name = "labelnoise",
    version,
    about = "Train image classifiers under class-conditional label noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Md,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ResultFormat {
    /// Comparison tables.
    Md,
    /// Aggregates, one row per method and metric.
    Csv,
    /// Raw scores, one row per run and method.
    Runs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ArchArg {
    SmallCnn,
    EnhancedCnn,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::SmallCnn => Architecture::SmallCnn,
            ArchArg::EnhancedCnn => Architecture::EnhancedCnn,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a clean synthetic dataset.
    Generate {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 1000)]
        per_class: usize,
        #[arg(long, default_value_t = 16)]
        height: usize,
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = data::DEFAULT_CONTRAST)]
        contrast: f64,
        #[arg(long, default_value_t = data::DEFAULT_SIGMA)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corrupt the labels of a dataset file with a transition matrix.
    Inject {
        #[arg(long)]
        data: PathBuf,
        /// fashion05, fashion06, identity, symmetric:<rho> or a CSV path.
        #[arg(long)]
        t: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an auxiliary network on noisy data and estimate the matrix.
    #[command(name = "estimate-t")]
    EstimateT {
        #[arg(long)]
        data: PathBuf,
        /// Ground truth to score the estimate against.
        #[arg(long)]
        truth: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = super::ESTIMATOR_MAX_EPOCHS)]
        epochs: usize,
        /// Write the estimate as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one method with one seed.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ce_baseline")]
        method: String,
        /// Transition matrix for the corrected methods.
        #[arg(long)]
        t: Option<String>,
        #[arg(long, value_enum, default_value = "small-cnn")]
        arch: ArchArg,
        /// Comma-separated conv filter counts.
        #[arg(long, value_delimiter = ',')]
        filters: Option<Vec<usize>>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 5)]
        patience: usize,
        #[arg(long)]
        out: PathBuf,
        /// Write per-epoch losses as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: ReportFormat,
    },
    /// Run a full experiment from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for result.json, result.csv, runs.csv, result.md.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Render a saved result.
    Report {
        #[arg(long)]
        result: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: ResultFormat,
    },
}

/// Resolves `fashion05`, `fashion06`, `identity`, `symmetric:<rho>` or a
/// CSV file path.
pub fn parse_transition(spec: &str, n_classes: usize) -> Result<TransitionMatrix> {
    let t = match spec {
        "identity" => TransitionMatrix::identity(n_classes)?,
        s if s.starts_with("symmetric:") => {
            let rho: f64 = s["symmetric:".len()..]
                .parse()
                .map_err(|_| Error::Parse(format!("bad noise rate in {s:?}")))?;
            TransitionMatrix::symmetric(n_classes, rho)?
        }
        s => match TransitionMatrix::known_matrix(s) {
            Ok(t) => t,
            Err(_) if std::path::Path::new(s).exists() => TransitionMatrix::load_csv(s)?,
            Err(e) => return Err(e),
        },
    };
    if t.n_classes() != n_classes {
        return Err(Error::Dimension(format!(
            "matrix {spec} has {} classes, data has {n_classes}",
            t.n_classes()
        )));
    }
    Ok(t)
}

fn print_matrix(rows: &[Vec<f64>]) {
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        println!("{}", cells.join(", "));
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            classes,
            per_class,
            height,
            width,
            channels,
            contrast,
            sigma,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                n_classes: classes,
                samples_per_class: per_class,
                image_shape: (height, width, channels),
                template_contrast: contrast,
                pixel_noise_sigma: sigma,
            };
            let d = data::generate_synthetic(&spec, seed)?;
            d.save(&out)?;
            println!(
                "wrote {} samples ({classes} classes) to {}",
                d.len(),
                out.display()
            );
        }
        Command::Inject {
            data: path,
            t,
            seed,
            out,
        } => {
            let d = LabeledDataset::load(&path)?;
            let t = parse_transition(&t, d.n_classes)?;
            let (noisy, record) = noise::inject_noise(&d.labels, &t, seed)?;
            let noisy = d.relabel(noisy, LabelQuality::Noisy)?;
            noisy.save(&out)?;
            println!(
                "flipped {} of {} labels ({:.4})",
                record.n_flipped,
                d.len(),
                record.n_flipped as f64 / d.len() as f64
            );
            println!("noisy label histogram: {:?}", noisy.class_histogram());
            println!("empirical flip matrix:");
            print_matrix(&record.empirical_matrix);
        }
        Command::EstimateT {
            data: path,
            truth,
            seed,
            epochs,
            out,
        } => {
            let d = LabeledDataset::load(&path)?;
            let truth = truth
                .map(|s| parse_transition(&s, d.n_classes))
                .transpose()?;
            let parts = data::split(&d, 0.8, seed)?;
            let model = Model::build(Architecture::SmallCnn, d.image_shape(), d.n_classes, seed)?;
            let config = TrainConfig {
                max_epochs: epochs,
                seed,
                ..TrainConfig::default()
            };
            let (model, _) = nn::train(
                model,
                &parts.train,
                &parts.val,
                &LossSpec::cross_entropy(),
                &config,
            )?;
            let mut report =
                estimation::estimate_transition(&model, &parts.train.images, &parts.train.labels)?;
            if let Some(t) = &truth {
                report = report.with_truth(t)?;
            }
            print_matrix(report.estimated.rows());
            println!("{}", report.summary());
            if let Some(out) = out {
                report.estimated.save_csv(out)?;
            }
        }
        Command::Train {
            data: path,
            method,
            t,
            arch,
            filters,
            hidden,
            seed,
            epochs,
            batch_size,
            patience,
            out,
            history,
        } => {
            let d = LabeledDataset::load(&path)?;
            let method: Method = method.parse()?;
            let t = match t {
                Some(s) => parse_transition(&s, d.n_classes)?,
                None if method == Method::CeBaseline => TransitionMatrix::identity(d.n_classes)?,
                None => return Err(Error::MissingTransition(method.name())),
            };
            let config = TrainConfig {
                batch_size,
                max_epochs: epochs,
                patience,
                seed,
                loss: method.loss_kind(),
                ..TrainConfig::default()
            };
            let parts = data::split(&d, 1.0 - config.val_fraction, seed)?;
            let model = Model::build_with(
                arch.into(),
                d.image_shape(),
                d.n_classes,
                filters.as_deref(),
                hidden,
                seed,
            )?;
            let loss = method.loss(&t)?;
            let unbiased = CorrectedError::new(&t)?;
            let monitor: &dyn ValidationScore = if method == Method::CeBaseline {
                &loss
            } else {
                &unbiased
            };
            let (model, hist) = nn::train_with_validation(
                model,
                &parts.train,
                &parts.val,
                &loss,
                monitor,
                &config,
            )?;
            checkpoint::save(&model, &out)?;
            if let Some(h) = history {
                fs::write(h, hist.to_csv())?;
            }
            println!(
                "trained {} for {} epochs (best epoch {}), saved to {}",
                method.name(),
                hist.epochs.len(),
                hist.best_epoch,
                out.display()
            );
        }
        Command::Evaluate {
            model,
            data: path,
            format,
        } => {
            let model = checkpoint::load(&model)?;
            let d = LabeledDataset::load(&path)?;
            let predictions = model.predict(&d.images)?;
            let report = metrics::compute_metrics(&metrics::confusion(
                &d.labels,
                &predictions,
                d.n_classes,
            )?)?;
            match format {
                ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&report)?),
                ReportFormat::Csv => println!(
                    "{}\n{}",
                    metrics::MetricsReport::csv_header(),
                    report.csv_row()
                ),
                ReportFormat::Md => {
                    println!("| Score | Value |\n|-------|-------|");
                    for (name, v) in metrics::METRIC_NAMES.iter().zip(report.values()) {
                        println!("| {name} | {} |", metrics::fmt_opt(v));
                    }
                    if !report.undefined_classes.is_empty() {
                        println!("\nundefined for classes {:?}", report.undefined_classes);
                    }
                }
            }
        }
        Command::Experiment { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let result = run_experiment(&config, Some(&out))?;
            print!("{}", render_markdown(&result));
            println!("\nwrote results to {}", out.display());
        }
        Command::Report { result, format } => {
            let result = load_result(&result)?;
            match format {
                ResultFormat::Md => print!("{}", render_markdown(&result)),
                ResultFormat::Csv => print!("{}", render_csv(&result)),
                ResultFormat::Runs => print!("{}", render_runs_csv(&result)),
            }
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs the command.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
