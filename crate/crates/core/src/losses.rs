//! Losses over softmax outputs and their label-noise corrections.
//!
//! Every loss reports its batch-mean value together with the gradient with
//! respect to the pre-softmax logits. Probabilities are floored at
//! [`PROB_FLOOR`] before any logarithm; gradients are those of the floored
//! loss, so a floored term contributes nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::noise::TransitionMatrix;
use crate::tensor::Tensor;

pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_EPSILON: f64 = 1e-7;
pub const DEFAULT_MIX_LAMBDA: f64 = 0.2;
pub const DEFAULT_COND_THRESHOLD: f64 = 1e4;

const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Nll,
    Reweighted,
    Backward,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Nll => "nll",
            LossKind::Reweighted => "reweighted",
            LossKind::Backward => "backward",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    /// Mean over the batch.
    pub value: f64,
    /// `(batch, C)` gradient of `value` w.r.t. the logits.
    pub grad_logits: Tensor,
    /// Per-sample importance weights (reweighted loss only).
    pub weights: Option<Vec<f64>>,
    pub per_sample: Vec<f64>,
}

/// Anything that scores softmax outputs against labels.
pub trait LossFn {
    fn evaluate(&self, probs: &Tensor, labels: &[usize]) -> Result<LossResult>;
}

/// Per-sample score watched on the validation split; lower is better.
pub trait ValidationScore {
    fn per_sample(&self, probs: &Tensor, labels: &[usize]) -> Result<Vec<f64>>;
}

impl<L: LossFn> ValidationScore for L {
    fn per_sample(&self, probs: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        Ok(self.evaluate(probs, labels)?.per_sample)
    }
}

fn floored_log(p: f64) -> (f64, bool) {
    if p >= PROB_FLOOR {
        (p.ln(), true)
    } else {
        (PROB_FLOOR.ln(), false)
    }
}

fn check_batch(probs: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    if probs.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "expected a (batch, classes) tensor, got {:?}",
            probs.shape()
        )));
    }
    let (n, c) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: c,
        });
    }
    Ok((n, c))
}

fn check_distributions(probs: &Tensor) -> Result<()> {
    for i in 0..probs.batch() {
        let sum: f64 = probs.row(i).iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE
            || probs.row(i).iter().any(|&p| !(0.0..=1.0).contains(&p))
        {
            return Err(Error::InvalidArgument(format!(
                "row {i} is not a probability distribution (sum {sum})"
            )));
        }
    }
    Ok(())
}

fn check_transition(t: &TransitionMatrix, c: usize) -> Result<()> {
    if t.n_classes() != c {
        return Err(Error::Dimension(format!(
            "transition matrix has {} classes, probabilities have {c}",
            t.n_classes()
        )));
    }
    Ok(())
}

/// Cross-entropy with per-sample weights held constant in the gradient.
pub fn weighted_ce(probs: &Tensor, labels: &[usize], weights: &[f64]) -> Result<LossResult> {
    let (n, c) = check_batch(probs, labels)?;
    if weights.len() != n {
        return Err(Error::Dimension(format!(
            "{} weights for a batch of {n}",
            weights.len()
        )));
    }
    check_distributions(probs)?;
    let mut grad = Tensor::zeros(&[n, c]);
    let mut per_sample = Vec::with_capacity(n);
    for (i, (&y, &w)) in labels.iter().zip(weights).enumerate() {
        let p = probs.row(i);
        let (logp, active) = floored_log(p[y]);
        per_sample.push(-w * logp);
        if active {
            let g = grad.row_mut(i);
            for j in 0..c {
                g[j] = w * (p[j] - if j == y { 1.0 } else { 0.0 }) / n as f64;
            }
        }
    }
    Ok(LossResult {
        value: per_sample.iter().sum::<f64>() / n as f64,
        grad_logits: grad,
        weights: None,
        per_sample,
    })
}

/// Mean of `−ln p[label]`.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<LossResult> {
    weighted_ce(probs, labels, &vec![1.0; labels.len()])
}

/// Mean of `−log_probs[label]`, with `log_probs` read as a log-softmax.
pub fn nll(log_probs: &Tensor, labels: &[usize]) -> Result<LossResult> {
    check_batch(log_probs, labels)?;
    if log_probs.data().iter().any(|&v| v > 1e-12 || v.is_nan()) {
        return Err(Error::InvalidArgument(
            "log-probabilities must be ≤ 0".into(),
        ));
    }
    cross_entropy(&log_probs.map(f64::exp), labels)
}

/// Importance weights `β = p[ỹ] / (p̃[ỹ] + ε)` where `p̃ = pᵀT` is the
/// noisy-label posterior implied by the clean posterior `p`.
pub fn beta_weight(
    probs: &Tensor,
    noisy_labels: &[usize],
    t: &TransitionMatrix,
    epsilon: f64,
) -> Result<Vec<f64>> {
    let (_, c) = check_batch(probs, noisy_labels)?;
    check_transition(t, c)?;
    check_distributions(probs)?;
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be non-negative, got {epsilon}"
        )));
    }
    Ok(noisy_labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let p = probs.row(i);
            let noisy: f64 = (0..c).map(|k| p[k] * t.get(k, y)).sum();
            p[y] / (noisy + epsilon)
        })
        .collect())
}

/// `β`-weighted cross-entropy; `β` is not differentiated.
pub fn reweighted_ce(
    probs: &Tensor,
    noisy_labels: &[usize],
    t: &TransitionMatrix,
    epsilon: f64,
) -> Result<LossResult> {
    let beta = beta_weight(probs, noisy_labels, t, epsilon)?;
    let mut result = weighted_ce(probs, noisy_labels, &beta)?;
    result.weights = Some(beta);
    Ok(result)
}

/// Inverse used by the backward correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizedInverse {
    pub inverse: Matrix,
    /// The matrix that was actually inverted.
    pub inverted: Matrix,
    /// Whether identity mixing was applied.
    pub mixed: bool,
    /// 1-norm condition number of the original matrix.
    pub condition_number: f64,
    /// `max |inverse · inverted − I|`
    pub residual: f64,
}

/// Inverts `t`, or `(1 − λ)·t + λ·I` when `t`'s condition number exceeds
/// `cond_threshold`.
pub fn stabilized_inverse(
    t: &TransitionMatrix,
    mix_lambda: f64,
    cond_threshold: f64,
) -> Result<StabilizedInverse> {
    if !(0.0..1.0).contains(&mix_lambda) {
        return Err(Error::InvalidArgument(format!(
            "mix_lambda must lie in [0, 1), got {mix_lambda}"
        )));
    }
    if !(cond_threshold >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cond_threshold must be ≥ 1, got {cond_threshold}"
        )));
    }
    let rows = t.rows();
    let condition_number = linalg::condition_number(rows);
    let (inverted, mixed) = if condition_number <= cond_threshold {
        (rows.clone(), false)
    } else {
        let n = rows.len();
        let mixed: Matrix = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        (1.0 - mix_lambda) * rows[i][j] + if i == j { mix_lambda } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        (mixed, true)
    };
    let inverse = linalg::invert(&inverted)?;
    let residual = linalg::identity_residual(&linalg::matmul(&inverse, &inverted));
    Ok(StabilizedInverse {
        inverse,
        inverted,
        mixed,
        condition_number,
        residual,
    })
}

/// Backward correction with a precomputed inverse: the per-class loss
/// vector `ℓ = −ln p` is replaced by `M·ℓ`, and sample `i` contributes
/// `(M·ℓ)[ỹ_i]`. `M` is held constant.
pub fn backward_corrected_with(
    probs: &Tensor,
    noisy_labels: &[usize],
    inverse: &Matrix,
) -> Result<LossResult> {
    let (n, c) = check_batch(probs, noisy_labels)?;
    if inverse.len() != c || inverse.iter().any(|r| r.len() != c) {
        return Err(Error::Dimension(format!("inverse is not {c}×{c}")));
    }
    check_distributions(probs)?;
    let mut grad = Tensor::zeros(&[n, c]);
    let mut per_sample = Vec::with_capacity(n);
    let mut losses = vec![0.0; c];
    let mut active = vec![false; c];
    for (i, &y) in noisy_labels.iter().enumerate() {
        let p = probs.row(i);
        for k in 0..c {
            let (logp, on) = floored_log(p[k]);
            losses[k] = -logp;
            active[k] = on;
        }
        let coeff = &inverse[y];
        per_sample.push((0..c).map(|k| coeff[k] * losses[k]).sum());
        let live_mass: f64 = (0..c).filter(|&k| active[k]).map(|k| coeff[k]).sum();
        let g = grad.row_mut(i);
        for j in 0..c {
            let own = if active[j] { coeff[j] } else { 0.0 };
            g[j] = (p[j] * live_mass - own) / n as f64;
        }
    }
    Ok(LossResult {
        value: per_sample.iter().sum::<f64>() / n as f64,
        grad_logits: grad,
        weights: None,
        per_sample,
    })
}

/// Backward-corrected loss using [`stabilized_inverse`] of `t`.
pub fn backward_corrected(
    probs: &Tensor,
    noisy_labels: &[usize],
    t: &TransitionMatrix,
    mix_lambda: f64,
    cond_threshold: f64,
) -> Result<LossResult> {
    check_transition(t, probs.shape().get(1).copied().unwrap_or(0))?;
    let inv = stabilized_inverse(t, mix_lambda, cond_threshold)?;
    backward_corrected_with(probs, noisy_labels, &inv.inverse)
}

/// Backward-corrected 0-1 loss: sample `i` scores `1 − M[ỹ_i][argmax p_i]`.
///
/// Its expectation over the noise equals the clean 0-1 loss, and unlike the
/// corrected cross-entropy it stays bounded when the model turns
/// overconfident. It has no gradient and only serves model selection.
pub fn corrected_error(
    probs: &Tensor,
    noisy_labels: &[usize],
    inverse: &Matrix,
) -> Result<Vec<f64>> {
    let (_, c) = check_batch(probs, noisy_labels)?;
    if inverse.len() != c || inverse.iter().any(|r| r.len() != c) {
        return Err(Error::Dimension(format!("inverse is not {c}×{c}")));
    }
    Ok(probs
        .argmax_rows()
        .into_iter()
        .zip(noisy_labels)
        .map(|(k, &y)| 1.0 - inverse[y][k])
        .collect())
}

/// [`corrected_error`] against the stabilised inverse of a transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedError {
    inverse: StabilizedInverse,
}

impl CorrectedError {
    pub fn new(t: &TransitionMatrix) -> Result<Self> {
        Self::with_stabilizer(t, DEFAULT_MIX_LAMBDA, DEFAULT_COND_THRESHOLD)
    }

    pub fn with_stabilizer(
        t: &TransitionMatrix,
        mix_lambda: f64,
        cond_threshold: f64,
    ) -> Result<Self> {
        Ok(Self {
            inverse: stabilized_inverse(t, mix_lambda, cond_threshold)?,
        })
    }

    pub fn inverse(&self) -> &StabilizedInverse {
        &self.inverse
    }
}

impl ValidationScore for CorrectedError {
    fn per_sample(&self, probs: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        corrected_error(probs, labels, &self.inverse.inverse)
    }
}

/// A configured loss, ready to hand to the trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    kind: LossKind,
    transition: Option<TransitionMatrix>,
    epsilon: f64,
    mix_lambda: f64,
    cond_threshold: f64,
    inverse: Option<StabilizedInverse>,
}

impl LossSpec {
    pub fn new(
        kind: LossKind,
        transition: Option<TransitionMatrix>,
        epsilon: f64,
        mix_lambda: f64,
        cond_threshold: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if !(0.0..1.0).contains(&mix_lambda) {
            return Err(Error::InvalidArgument(format!(
                "mix_lambda must lie in [0, 1), got {mix_lambda}"
            )));
        }
        let inverse = match (kind, &transition) {
            (LossKind::Reweighted | LossKind::Backward, None) => {
                return Err(Error::MissingTransition(kind.name()))
            }
            (LossKind::Backward, Some(t)) => {
                Some(stabilized_inverse(t, mix_lambda, cond_threshold)?)
            }
            _ => None,
        };
        Ok(Self {
            kind,
            transition,
            epsilon,
            mix_lambda,
            cond_threshold,
            inverse,
        })
    }

    pub fn cross_entropy() -> Self {
        Self::new(
            LossKind::CrossEntropy,
            None,
            DEFAULT_EPSILON,
            DEFAULT_MIX_LAMBDA,
            DEFAULT_COND_THRESHOLD,
        )
        .expect("defaults are valid")
    }

    pub fn nll() -> Self {
        Self::new(
            LossKind::Nll,
            None,
            DEFAULT_EPSILON,
            DEFAULT_MIX_LAMBDA,
            DEFAULT_COND_THRESHOLD,
        )
        .expect("defaults are valid")
    }

    pub fn reweighted(t: TransitionMatrix) -> Result<Self> {
        Self::new(
            LossKind::Reweighted,
            Some(t),
            DEFAULT_EPSILON,
            DEFAULT_MIX_LAMBDA,
            DEFAULT_COND_THRESHOLD,
        )
    }

    pub fn backward(t: TransitionMatrix) -> Result<Self> {
        Self::new(
            LossKind::Backward,
            Some(t),
            DEFAULT_EPSILON,
            DEFAULT_MIX_LAMBDA,
            DEFAULT_COND_THRESHOLD,
        )
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn transition(&self) -> Option<&TransitionMatrix> {
        self.transition.as_ref()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mix_lambda(&self) -> f64 {
        self.mix_lambda
    }

    pub fn cond_threshold(&self) -> f64 {
        self.cond_threshold
    }

    /// The inverse used by the backward correction, if this is one.
    pub fn inverse(&self) -> Option<&StabilizedInverse> {
        self.inverse.as_ref()
    }
}

impl LossFn for LossSpec {
    fn evaluate(&self, probs: &Tensor, labels: &[usize]) -> Result<LossResult> {
        match self.kind {
            LossKind::CrossEntropy => cross_entropy(probs, labels),
            LossKind::Nll => {
                let log_probs = probs.map(|p| floored_log(p).0);
                nll(&log_probs, labels)
            }
            LossKind::Reweighted => {
                let t = self
                    .transition
                    .as_ref()
                    .ok_or(Error::MissingTransition("reweighted"))?;
                reweighted_ce(probs, labels, t, self.epsilon)
            }
            LossKind::Backward => {
                let inv = self
                    .inverse
                    .as_ref()
                    .ok_or(Error::MissingTransition("backward"))?;
                backward_corrected_with(probs, labels, &inv.inverse)
            }
        }
    }
}
