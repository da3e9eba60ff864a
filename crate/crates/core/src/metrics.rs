//! Confusion-matrix metrics, multi-run aggregation and growth rates.
//!
//! Precision, recall and F1 are macro averages over the classes where they
//! are defined. A class that is never predicted has no precision; it is
//! listed in [`MetricsReport::undefined_classes`] rather than scored as 0.
//!
//! `top1_accuracy` is always equal to `accuracy`: for single-label
//! prediction both are the fraction of argmax hits. The field exists so
//! reports keep both column names.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[actual][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn true_positives(&self, k: usize) -> u64 {
        self.counts[k][k]
    }

    pub fn false_positives(&self, k: usize) -> u64 {
        self.counts.iter().map(|row| row[k]).sum::<u64>() - self.counts[k][k]
    }

    pub fn false_negatives(&self, k: usize) -> u64 {
        self.counts[k].iter().sum::<u64>() - self.counts[k][k]
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts
            .iter()
            .enumerate()
            .all(|(a, row)| row.iter().enumerate().all(|(p, &n)| a == p || n == 0))
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.is_empty() {
        return Err(Error::Empty("no samples to score".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&a, &p) in y_true.iter().zip(y_pred) {
        for label in [a, p] {
            if label >= n_classes {
                return Err(Error::LabelOutOfRange { label, n_classes });
            }
        }
        counts[a][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub top1_accuracy: f64,
    pub precision_macro: Option<f64>,
    pub recall_macro: Option<f64>,
    pub f1_macro: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    /// Classes with at least one undefined per-class metric.
    pub undefined_classes: Vec<usize>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 || cm.n_classes() == 0 {
        return Err(Error::Empty("confusion matrix has no counts".into()));
    }
    let accuracy = cm.trace() as f64 / total as f64;
    let per_class: Vec<ClassMetrics> = (0..cm.n_classes())
        .map(|k| {
            let tp = cm.true_positives(k);
            let precision = ratio(tp, tp + cm.false_positives(k));
            let recall = ratio(tp, tp + cm.false_negatives(k));
            let f1 = match (precision, recall) {
                (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                _ => None,
            };
            ClassMetrics {
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let undefined_classes = per_class
        .iter()
        .enumerate()
        .filter(|(_, m)| m.precision.is_none() || m.recall.is_none() || m.f1.is_none())
        .map(|(k, _)| k)
        .collect();
    Ok(MetricsReport {
        accuracy,
        top1_accuracy: accuracy,
        precision_macro: mean_defined(per_class.iter().map(|m| m.precision)),
        recall_macro: mean_defined(per_class.iter().map(|m| m.recall)),
        f1_macro: mean_defined(per_class.iter().map(|m| m.f1)),
        per_class,
        undefined_classes,
        confusion: cm.clone(),
    })
}

pub const METRIC_NAMES: [&str; 5] = ["accuracy", "top1_accuracy", "precision", "recall", "f1"];

impl MetricsReport {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 5] {
        [
            Some(self.accuracy),
            Some(self.top1_accuracy),
            self.precision_macro,
            self.recall_macro,
            self.f1_macro,
        ]
    }

    pub fn csv_header() -> String {
        METRIC_NAMES.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values()
            .iter()
            .map(|v| fmt_opt(*v))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: Option<f64>,
    /// Sample standard deviation; needs at least two defined values.
    pub std: Option<f64>,
    pub n_defined: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_runs: usize,
    pub metrics: Vec<MetricSummary>,
}

impl AggregateReport {
    pub fn get(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(|m| m.mean)
    }

    pub fn csv_rows(&self, method: &str) -> Vec<String> {
        self.metrics
            .iter()
            .map(|m| {
                format!(
                    "{method},{},{},{},{},{}",
                    m.name,
                    fmt_opt(m.mean),
                    fmt_opt(m.std),
                    m.n_defined,
                    m.n_excluded
                )
            })
            .collect()
    }
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "aggregation needs at least 2 runs, got {}",
            reports.len()
        )));
    }
    let metrics = METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(idx, name)| {
            let values: Vec<f64> = reports.iter().filter_map(|r| r.values()[idx]).collect();
            let n = values.len();
            let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
            let std = mean.filter(|_| n >= 2).map(|mu| {
                let ss: f64 = values.iter().map(|v| (v - mu) * (v - mu)).sum();
                (ss / (n - 1) as f64).sqrt()
            });
            MetricSummary {
                name: (*name).to_string(),
                mean,
                std,
                n_defined: n,
                n_excluded: reports.len() - n,
            }
        })
        .collect();
    Ok(AggregateReport {
        n_runs: reports.len(),
        metrics,
    })
}

/// Relative improvement in percent, rounded to two decimals.
pub fn growth_rate(baseline: f64, improved: f64) -> Result<f64> {
    if !(baseline > 0.0) || !improved.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "growth rate needs a positive baseline, got {baseline}"
        )));
    }
    Ok(((improved - baseline) / baseline * 100.0 * 100.0).round() / 100.0)
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:?}"))
}

fn fmt_mean_std(m: Option<&MetricSummary>) -> String {
    match m {
        Some(MetricSummary {
            mean: Some(mu),
            std,
            ..
        }) => match std {
            Some(s) => format!("{mu:.4} ± {s:.4}"),
            None => format!("{mu:.4}"),
        },
        _ => "nan".to_string(),
    }
}

/// One method column of a comparison table. Non-baseline columns carry
/// per-metric growth rates (in [`METRIC_NAMES`] order) and get a growth
/// column of their own.
pub struct TableColumn<'a> {
    pub method: &'a str,
    pub report: &'a AggregateReport,
    pub growth_rates: Option<Vec<Option<f64>>>,
}

const ROW_LABELS: [&str; 5] = ["Accuracy", "Top1 Acc", "Precision", "Recall", "F1 Score"];

/// Rows are metrics, columns are methods (mean ± std), each non-baseline
/// method followed by its growth rate in percent.
pub fn markdown_table(columns: &[TableColumn<'_>]) -> String {
    let mut header = vec!["Score".to_string()];
    for col in columns {
        header.push(col.method.to_string());
        if col.growth_rates.is_some() {
            header.push("Growth Rate (%)".to_string());
        }
    }
    let body: Vec<Vec<String>> = METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let mut cells = vec![ROW_LABELS[m].to_string()];
            for col in columns {
                cells.push(fmt_mean_std(col.report.get(name)));
                if let Some(rates) = &col.growth_rates {
                    cells.push(
                        rates
                            .get(m)
                            .copied()
                            .flatten()
                            .map_or_else(|| "nan".into(), |g| format!("{g:.2}")),
                    );
                }
            }
            cells
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            body.iter()
                .map(|r| r[c].chars().count())
                .chain([header[c].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(&header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
    for cells in &body {
        out.push_str(&line(cells));
    }
    out
}
