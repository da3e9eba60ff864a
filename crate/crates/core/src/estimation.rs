//! Transition-matrix estimation from a trained probabilistic classifier.
//!
//! Samples are grouped by their observed (noisy) label `j`; the classifier's
//! mean probability for class `i` over group `j` becomes `M[i][j]`, an
//! estimate of `P(true = i | noisy = j)`. With uniform class priors and a
//! doubly stochastic noise process this equals `P(noisy = j | true = i)`,
//! so `M` is read in the forward orientation after row normalisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::nn::Model;
use crate::noise::TransitionMatrix;
use crate::tensor::Tensor;

/// Anything that maps an image batch to per-class probabilities.
pub trait ProbabilisticClassifier {
    fn n_classes(&self) -> usize;
    fn predict_proba(&self, images: &Tensor) -> Result<Tensor>;
}

impl ProbabilisticClassifier for Model {
    fn n_classes(&self) -> usize {
        Model::n_classes(self)
    }

    fn predict_proba(&self, images: &Tensor) -> Result<Tensor> {
        Model::predict_proba(self, images)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub estimated: TransitionMatrix,
    /// Group means before row normalisation.
    pub raw: Matrix,
    /// `per_class_counts[j] = |S_j|`.
    pub per_class_counts: Vec<usize>,
    pub mse_vs_truth: Option<f64>,
    pub condition_number: f64,
}

impl EstimationReport {
    pub fn with_truth(mut self, truth: &TransitionMatrix) -> Result<Self> {
        self.mse_vs_truth = Some(mse(truth, &self.estimated)?);
        Ok(self)
    }

    /// One line: `mse=…,condition_number=…,counts=a;b;c`.
    pub fn summary(&self) -> String {
        let mse = self
            .mse_vs_truth
            .map_or_else(|| "na".to_string(), |v| format!("{v:?}"));
        let counts: Vec<String> = self
            .per_class_counts
            .iter()
            .map(ToString::to_string)
            .collect();
        format!(
            "mse={mse},condition_number={:?},counts={}",
            self.condition_number,
            counts.join(";")
        )
    }
}

pub fn estimate_transition(
    model: &dyn ProbabilisticClassifier,
    images: &Tensor,
    noisy_labels: &[usize],
) -> Result<EstimationReport> {
    let c = model.n_classes();
    if images.shape().is_empty() || images.batch() != noisy_labels.len() {
        return Err(Error::Dimension(format!(
            "{} labels for images of shape {:?}",
            noisy_labels.len(),
            images.shape()
        )));
    }
    if let Some(&label) = noisy_labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: c,
        });
    }
    let mut counts = vec![0usize; c];
    for &l in noisy_labels {
        counts[l] += 1;
    }
    if let Some(class) = counts.iter().position(|&k| k == 0) {
        return Err(Error::MissingClass { class });
    }
    let probs = model.predict_proba(images)?;
    if probs.shape() != [noisy_labels.len(), c] {
        return Err(Error::Shape {
            expected: vec![noisy_labels.len(), c],
            found: probs.shape().to_vec(),
        });
    }
    let mut sums = vec![vec![0.0; c]; c];
    for (x, &j) in noisy_labels.iter().enumerate() {
        for (i, &p) in probs.row(x).iter().enumerate() {
            sums[i][j] += p;
        }
    }
    let raw: Matrix = sums
        .iter()
        .map(|row| {
            row.iter()
                .zip(&counts)
                .map(|(s, &k)| s / k as f64)
                .collect()
        })
        .collect();
    let mut normalized = raw.clone();
    for (i, row) in normalized.iter_mut().enumerate() {
        let total: f64 = row.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "classifier never assigns probability to class {i}"
            )));
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    let estimated = TransitionMatrix::from_rows(normalized)?;
    let condition_number = linalg::condition_number(estimated.rows());
    Ok(EstimationReport {
        estimated,
        raw,
        per_class_counts: counts,
        mse_vs_truth: None,
        condition_number,
    })
}

/// Mean squared difference over all `C²` entries.
pub fn mse(truth: &TransitionMatrix, estimate: &TransitionMatrix) -> Result<f64> {
    mse_entries(truth.rows(), estimate.rows())
}

/// [`mse`] over plain square matrices, for estimates that are not
/// row-stochastic (e.g. truncated printouts or unnormalised group means).
pub fn mse_entries(a: &Matrix, b: &Matrix) -> Result<f64> {
    let c = a.len();
    let square = |m: &Matrix| m.iter().all(|row| row.len() == m.len());
    if c == 0 || b.len() != c || !square(a) || !square(b) {
        return Err(Error::Dimension(format!(
            "cannot compare {}-row matrix with {}-row matrix",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / (c * c) as f64)
}
