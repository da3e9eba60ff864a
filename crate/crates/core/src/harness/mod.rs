//! Experiment driver and command-line front end.
//!
//! One experiment repeats a fixed protocol over `n_runs` seeds: build the
//! data, corrupt the training pool (never the test set), split it 80/20,
//! optionally estimate the transition matrix with an auxiliary network,
//! train every requested method from the same initial weights and score
//! each on the clean test set.

pub mod cli;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{self, generate_synthetic, LabelQuality, LabeledDataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::estimation::{self, EstimationReport};
use crate::losses::{CorrectedError, LossKind, LossSpec, ValidationScore};
use crate::metrics::{
    self, AggregateReport, MetricSummary, MetricsReport, TableColumn, METRIC_NAMES,
};
use crate::nn::{self, Architecture, Model, TrainConfig};
use crate::noise::{self, KnownMatrix, TransitionMatrix};
use crate::rng;
use crate::tensor::Tensor;

const TAG_POOL: u64 = 1;
const TAG_TEST: u64 = 2;
const TAG_NOISE: u64 = 3;
const TAG_SPLIT: u64 = 4;
const TAG_AUX: u64 = 5;
const TAG_INIT: u64 = 6;
const TAG_TRAIN: u64 = 7;

/// Upper bound on epochs for the auxiliary estimator network.
pub const ESTIMATOR_MAX_EPOCHS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CeBaseline,
    Reweighted,
    Backward,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::CeBaseline, Method::Reweighted, Method::Backward];

    pub fn name(self) -> &'static str {
        match self {
            Method::CeBaseline => "ce_baseline",
            Method::Reweighted => "reweighted",
            Method::Backward => "backward",
        }
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            Method::CeBaseline => LossKind::CrossEntropy,
            Method::Reweighted => LossKind::Reweighted,
            Method::Backward => LossKind::Backward,
        }
    }

    pub fn loss(self, t: &TransitionMatrix) -> Result<LossSpec> {
        match self {
            Method::CeBaseline => Ok(LossSpec::cross_entropy()),
            Method::Reweighted => LossSpec::reweighted(t.clone()),
            Method::Backward => LossSpec::backward(t.clone()),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Score monitored on the noisy validation split for early stopping.
///
/// The baseline always monitors its own cross-entropy. The reweighted loss
/// draws its weights from the model itself and keeps falling as the model
/// grows confident whether or not it is right, so the corrected methods
/// default to a score that is unbiased for the clean data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationLoss {
    /// Every method monitors its own training loss.
    Matching,
    /// Corrected methods monitor the backward-corrected cross-entropy.
    UnbiasedLoss,
    /// Corrected methods monitor the backward-corrected 0-1 loss, which
    /// stays bounded when a model turns overconfident.
    #[default]
    UnbiasedError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    File { train: PathBuf, test: PathBuf },
}

/// Where the injected noise comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSource {
    /// Clean labels; corrections see the identity.
    None,
    Fashion05,
    Fashion06,
    Symmetric {
        rho: f64,
    },
    File {
        path: PathBuf,
    },
    /// Labels are taken as already noisy and the matrix is unknown: nothing
    /// is injected and the corrections use the estimate.
    Estimate,
}

impl NoiseSource {
    /// The ground-truth matrix, if there is one.
    pub fn matrix(&self, n_classes: usize) -> Result<Option<TransitionMatrix>> {
        let t = match self {
            NoiseSource::None => TransitionMatrix::identity(n_classes)?,
            NoiseSource::Fashion05 => TransitionMatrix::known(KnownMatrix::Fashion05),
            NoiseSource::Fashion06 => TransitionMatrix::known(KnownMatrix::Fashion06),
            NoiseSource::Symmetric { rho } => TransitionMatrix::symmetric(n_classes, *rho)?,
            NoiseSource::File { path } => TransitionMatrix::load_csv(path)?,
            NoiseSource::Estimate => return Ok(None),
        };
        if t.n_classes() != n_classes {
            return Err(Error::Dimension(format!(
                "noise matrix has {} classes, data has {n_classes}",
                t.n_classes()
            )));
        }
        Ok(Some(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Test samples per class for synthetic data.
    pub test_per_class: usize,
    pub noise: NoiseSource,
    /// Estimate the matrix even when the truth is known, correct with the
    /// estimate and report its error.
    pub estimate_t: bool,
    pub methods: Vec<Method>,
    /// Feed the network pixels in `[0, 1]`; otherwise grey levels `0..=255`.
    pub normalization: bool,
    pub architecture: Architecture,
    pub filters: Option<Vec<usize>>,
    pub hidden: Option<usize>,
    pub n_runs: usize,
    pub base_seed: u64,
    /// `seed` and `loss` are set per run and method.
    pub train: TrainConfig,
    pub validation_loss: ValidationLoss,
    pub estimator_max_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic(SyntheticSpec::default()),
            test_per_class: 200,
            noise: NoiseSource::Fashion05,
            estimate_t: false,
            methods: Method::ALL.to_vec(),
            normalization: true,
            architecture: Architecture::SmallCnn,
            filters: None,
            hidden: None,
            n_runs: 10,
            base_seed: 0,
            train: TrainConfig::default(),
            validation_loss: ValidationLoss::default(),
            estimator_max_epochs: ESTIMATOR_MAX_EPOCHS,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::InvalidArgument("n_runs must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("select at least one method".into()));
        }
        if self.architecture == Architecture::Custom {
            return Err(Error::InvalidArgument(
                "architecture must be small_cnn or enhanced_cnn; use filters to customise".into(),
            ));
        }
        if self.estimator_max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "estimator_max_epochs must be at least 1".into(),
            ));
        }
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
            if self.test_per_class == 0 {
                return Err(Error::InvalidArgument(
                    "test_per_class must be positive".into(),
                ));
            }
        }
        self.train.validate()
    }

    fn needs_estimate(&self) -> bool {
        self.estimate_t || self.noise == NoiseSource::Estimate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: Method,
    pub metrics: MetricsReport,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    /// Labels changed by injection; `None` when nothing was injected.
    pub n_flipped: Option<usize>,
    pub estimation: Option<EstimationReport>,
    pub methods: Vec<MethodRun>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub aggregate: AggregateReport,
    /// Per metric, in [`METRIC_NAMES`] order; `None` for the baseline or
    /// when no baseline was run.
    pub growth_rates: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationSummary {
    pub mean_estimate: Vec<Vec<f64>>,
    pub mean_mse: Option<f64>,
    pub mean_condition_number: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<MethodSummary>,
    pub estimation: Option<EstimationSummary>,
    pub wall_clock_secs: f64,
}

impl ExperimentResult {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn mean_accuracy(&self, method: Method) -> Option<f64> {
        self.summary(method)
            .and_then(|s| s.aggregate.mean("accuracy"))
    }
}

/// Images at the scale the network should see, whatever the stored scale.
/// Data with any value above 1 is taken to be raw grey levels.
fn rescale(images: &Tensor, normalization: bool) -> Result<Tensor> {
    let raw = images.data().iter().any(|&v| v > 1.0);
    match (normalization, raw) {
        (true, true) => data::normalize(images),
        (false, false) => data::to_raw(images),
        _ => Ok(images.clone()),
    }
}

fn load_data(config: &ExperimentConfig, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let (mut pool, mut test) = match &config.dataset {
        DatasetSource::Synthetic(spec) => {
            let test_spec = SyntheticSpec {
                samples_per_class: config.test_per_class,
                ..spec.clone()
            };
            (
                generate_synthetic(spec, rng::derive(seed, &[TAG_POOL]))?,
                generate_synthetic(&test_spec, rng::derive(seed, &[TAG_TEST]))?,
            )
        }
        DatasetSource::File { train, test } => {
            (LabeledDataset::load(train)?, LabeledDataset::load(test)?)
        }
    };
    if pool.n_classes != test.n_classes || pool.image_shape() != test.image_shape() {
        return Err(Error::Dimension(format!(
            "train data is {:?} with {} classes, test data is {:?} with {}",
            pool.image_shape(),
            pool.n_classes,
            test.image_shape(),
            test.n_classes
        )));
    }
    pool.images = rescale(&pool.images, config.normalization)?;
    test.images = rescale(&test.images, config.normalization)?;
    Ok((pool, test))
}

fn summarize(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.len() >= 2 {
        return metrics::aggregate(reports);
    }
    let r = reports
        .first()
        .ok_or_else(|| Error::Empty("no runs to summarise".into()))?;
    let metrics = METRIC_NAMES
        .iter()
        .zip(r.values())
        .map(|(name, v)| MetricSummary {
            name: (*name).to_string(),
            mean: v,
            std: None,
            n_defined: usize::from(v.is_some()),
            n_excluded: usize::from(v.is_none()),
        })
        .collect();
    Ok(AggregateReport { n_runs: 1, metrics })
}

fn execute_run(config: &ExperimentConfig, run: usize) -> Result<RunRecord> {
    let started = Instant::now();
    let seed = config.base_seed.wrapping_add(run as u64);
    let (pool, test) = load_data(config, seed)?;
    let clean_test_labels = test.labels.clone();
    let c = pool.n_classes;

    let truth = config.noise.matrix(c)?;
    let (pool, n_flipped) = match &truth {
        Some(t) if config.noise != NoiseSource::None => {
            let (noisy, record) =
                noise::inject_noise(&pool.labels, t, rng::derive(seed, &[TAG_NOISE]))?;
            (
                pool.relabel(noisy, LabelQuality::Noisy)?,
                Some(record.n_flipped),
            )
        }
        _ => (pool, None),
    };
    let parts = data::split(
        &pool,
        1.0 - config.train.val_fraction,
        rng::derive(seed, &[TAG_SPLIT]),
    )?;
    let shape = pool.image_shape();

    let estimation = if config.needs_estimate() {
        let aux = Model::build(
            Architecture::SmallCnn,
            shape,
            c,
            rng::derive(seed, &[TAG_AUX, TAG_INIT]),
        )?;
        let aux_config = TrainConfig {
            max_epochs: config.train.max_epochs.min(config.estimator_max_epochs),
            seed: rng::derive(seed, &[TAG_AUX, TAG_TRAIN]),
            loss: LossKind::CrossEntropy,
            ..config.train.clone()
        };
        let (aux, _) = nn::train(
            aux,
            &parts.train,
            &parts.val,
            &LossSpec::cross_entropy(),
            &aux_config,
        )?;
        let report =
            estimation::estimate_transition(&aux, &parts.train.images, &parts.train.labels)?;
        Some(match (&truth, &config.noise) {
            (Some(t), noise) if *noise != NoiseSource::Estimate => report.with_truth(t)?,
            _ => report,
        })
    } else {
        None
    };
    let correction = match (&estimation, &truth) {
        (Some(report), _) => report.estimated.clone(),
        (None, Some(t)) => t.clone(),
        (None, None) => unreachable!("an unknown matrix is always estimated"),
    };
    let unbiased_loss = LossSpec::backward(correction.clone())?;
    let unbiased_error = CorrectedError::new(&correction)?;

    let mut methods = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let method_started = Instant::now();
        let model = Model::build_with(
            config.architecture,
            shape,
            c,
            config.filters.as_deref(),
            config.hidden,
            rng::derive(seed, &[TAG_INIT]),
        )?;
        let loss = method.loss(&correction)?;
        let monitor: &dyn ValidationScore = match (config.validation_loss, method) {
            (_, Method::CeBaseline) | (ValidationLoss::Matching, _) => &loss,
            (ValidationLoss::UnbiasedLoss, _) => &unbiased_loss,
            (ValidationLoss::UnbiasedError, _) => &unbiased_error,
        };
        let train_config = TrainConfig {
            seed: rng::derive(seed, &[TAG_TRAIN]),
            loss: method.loss_kind(),
            ..config.train.clone()
        };
        let (model, history) = nn::train_with_validation(
            model,
            &parts.train,
            &parts.val,
            &loss,
            monitor,
            &train_config,
        )?;
        if test.labels != clean_test_labels {
            return Err(Error::InvalidArgument("test labels were modified".into()));
        }
        let predictions = model.predict(&test.images)?;
        let cm = metrics::confusion(&clean_test_labels, &predictions, c)?;
        methods.push(MethodRun {
            method,
            metrics: metrics::compute_metrics(&cm)?,
            epochs_trained: history.epochs.len(),
            best_epoch: history.best_epoch,
            wall_clock_secs: method_started.elapsed().as_secs_f64(),
        });
    }
    Ok(RunRecord {
        run,
        seed,
        n_flipped,
        estimation,
        methods,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

fn finish(
    config: &ExperimentConfig,
    runs: Vec<RunRecord>,
    wall_clock_secs: f64,
) -> Result<ExperimentResult> {
    let mut summaries = Vec::new();
    for (idx, &method) in config.methods.iter().enumerate() {
        let reports: Vec<MetricsReport> = runs
            .iter()
            .map(|r| r.methods[idx].metrics.clone())
            .collect();
        summaries.push(MethodSummary {
            method,
            aggregate: summarize(&reports)?,
            growth_rates: None,
        });
    }
    if let Some(base) = summaries
        .iter()
        .find(|s| s.method == Method::CeBaseline)
        .cloned()
    {
        for s in summaries
            .iter_mut()
            .filter(|s| s.method != Method::CeBaseline)
        {
            let rates = METRIC_NAMES
                .iter()
                .map(
                    |name| match (base.aggregate.mean(name), s.aggregate.mean(name)) {
                        (Some(b), Some(v)) => metrics::growth_rate(b, v).ok(),
                        _ => None,
                    },
                )
                .collect();
            s.growth_rates = Some(rates);
        }
    }
    let estimates: Vec<&EstimationReport> =
        runs.iter().filter_map(|r| r.estimation.as_ref()).collect();
    let estimation = (!estimates.is_empty()).then(|| {
        let k = estimates.len() as f64;
        let c = estimates[0].estimated.n_classes();
        let mut mean_estimate = vec![vec![0.0; c]; c];
        for e in &estimates {
            for (i, row) in e.estimated.rows().iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    mean_estimate[i][j] += v / k;
                }
            }
        }
        let mses: Vec<f64> = estimates.iter().filter_map(|e| e.mse_vs_truth).collect();
        EstimationSummary {
            mean_estimate,
            mean_mse: (!mses.is_empty()).then(|| mses.iter().sum::<f64>() / mses.len() as f64),
            mean_condition_number: estimates.iter().map(|e| e.condition_number).sum::<f64>() / k,
        }
    });
    Ok(ExperimentResult {
        config: config.clone(),
        runs,
        summaries,
        estimation,
        wall_clock_secs,
    })
}

/// Runs the whole protocol. With an output directory, completed runs are
/// flushed to `partial.json` after every run, and a failing run leaves that
/// file behind.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentResult> {
    config.validate()?;
    let started = Instant::now();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut runs = Vec::with_capacity(config.n_runs);
    for run in 0..config.n_runs {
        match execute_run(config, run) {
            Ok(record) => runs.push(record),
            Err(source) => {
                if let Some(dir) = out_dir {
                    fs::write(
                        dir.join("partial.json"),
                        serde_json::to_string_pretty(&runs)?,
                    )?;
                }
                return Err(Error::Run {
                    run,
                    seed: config.base_seed.wrapping_add(run as u64),
                    source: Box::new(source),
                });
            }
        }
        if let Some(dir) = out_dir {
            fs::write(
                dir.join("partial.json"),
                serde_json::to_string_pretty(&runs)?,
            )?;
        }
    }
    let result = finish(config, runs, started.elapsed().as_secs_f64())?;
    if let Some(dir) = out_dir {
        write_outputs(&result, dir)?;
        fs::remove_file(dir.join("partial.json"))?;
    }
    Ok(result)
}

/// `method,metric,mean,std,n_defined,n_excluded,growth_rate`; timings are
/// left out so identical configs give identical files.
pub fn render_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("method,metric,mean,std,n_defined,n_excluded,growth_rate\n");
    for s in &result.summaries {
        for (idx, row) in s
            .aggregate
            .csv_rows(s.method.name())
            .into_iter()
            .enumerate()
        {
            let growth = s.growth_rates.as_ref().and_then(|g| g[idx]);
            out.push_str(&format!(
                "{row},{}\n",
                growth.map_or_else(String::new, |g| format!("{g:.2}"))
            ));
        }
    }
    out
}

/// One line per run and method with the raw scores.
pub fn render_runs_csv(result: &ExperimentResult) -> String {
    let mut out = format!(
        "run,seed,method,{},epochs,best_epoch\n",
        METRIC_NAMES.join(",")
    );
    for r in &result.runs {
        for m in &r.methods {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.run,
                r.seed,
                m.method.name(),
                m.metrics.csv_row(),
                m.epochs_trained,
                m.best_epoch
            ));
        }
    }
    out
}

fn noise_label(noise: &NoiseSource) -> String {
    match noise {
        NoiseSource::None => "none".into(),
        NoiseSource::Fashion05 => "fashion05".into(),
        NoiseSource::Fashion06 => "fashion06".into(),
        NoiseSource::Symmetric { rho } => format!("symmetric(ρ = {rho})"),
        NoiseSource::File { path } => format!("file {}", path.display()),
        NoiseSource::Estimate => "unknown (estimated)".into(),
    }
}

pub fn render_markdown(result: &ExperimentResult) -> String {
    let config = &result.config;
    let mut out = format!(
        "# Label-noise experiment\n\n- noise: {}\n- architecture: {}\n- normalization: {}\n- runs: {} (base seed {})\n\n",
        noise_label(&config.noise),
        config.architecture.name(),
        config.normalization,
        config.n_runs,
        config.base_seed
    );
    let columns: Vec<TableColumn<'_>> = result
        .summaries
        .iter()
        .map(|s| TableColumn {
            method: s.method.name(),
            report: &s.aggregate,
            growth_rates: s.growth_rates.clone(),
        })
        .collect();
    out.push_str(&metrics::markdown_table(&columns));
    if let Some(e) = &result.estimation {
        out.push_str("\n## Estimated transition matrix (mean over runs)\n\n");
        for row in &e.mean_estimate {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            out.push_str(&format!("    {}\n", cells.join("  ")));
        }
        out.push_str(&format!(
            "\n- condition number: {:.4}\n",
            e.mean_condition_number
        ));
        if let Some(mse) = e.mean_mse {
            out.push_str(&format!("- MSE vs truth: {mse:.6}\n"));
        }
    }
    out
}

/// Writes `result.json`, `result.csv`, `runs.csv` and `result.md`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("result.json"),
        serde_json::to_string_pretty(result)?,
    )?;
    fs::write(dir.join("result.csv"), render_csv(result))?;
    fs::write(dir.join("runs.csv"), render_runs_csv(result))?;
    fs::write(dir.join("result.md"), render_markdown(result))?;
    Ok(())
}

pub fn load_result(path: impl AsRef<Path>) -> Result<ExperimentResult> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
