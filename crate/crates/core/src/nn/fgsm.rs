//! Fast-gradient-sign adversarial inputs.

use super::model::Model;
use crate::error::{Error, Result};
use crate::losses::LossFn;
use crate::tensor::Tensor;

/// Moves `x` by `eps` in direction `dir` (−1, 0 or +1) without the rounded
/// result ever landing more than `eps` away.
fn step_within(x: f64, eps: f64, dir: f64) -> f64 {
    if dir == 0.0 || eps == 0.0 {
        return x;
    }
    let mut y = x + dir * eps;
    while (y - x).abs() > eps {
        y = if dir > 0.0 {
            y.next_down()
        } else {
            y.next_up()
        };
    }
    y
}

/// `clamp(x + eps·sign(∇ₓ loss), 0, 1)` for every sample of a batch.
///
/// Pixels whose gradient is exactly zero are left unchanged. Inputs are
/// expected in `[0, 1]`.
pub fn fgsm(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    loss_fn: &dyn LossFn,
    eps: f64,
) -> Result<Tensor> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "eps must be a non-negative number, got {eps}"
        )));
    }
    let (probs, cache) = model.forward(x, false, 0)?;
    let loss = loss_fn.evaluate(&probs, labels)?;
    let grads = model.backward_with_input(&cache, &loss.grad_logits)?;
    let g = grads.input.expect("input gradient requested");
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&xi, &gi)| {
            let dir = if gi > 0.0 {
                1.0
            } else if gi < 0.0 {
                -1.0
            } else {
                0.0
            };
            step_within(xi, eps, dir).clamp(0.0, 1.0)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Single-sample form of [`fgsm`]; `x` is `(H, W, C)` or `(1, H, W, C)`.
pub fn fgsm_example(
    model: &Model,
    x: &Tensor,
    y_true: usize,
    loss_fn: &dyn LossFn,
    eps: f64,
) -> Result<Tensor> {
    let original = x.shape().to_vec();
    let batched = if original.len() == 3 {
        x.clone().reshape([vec![1], original.clone()].concat())?
    } else {
        x.clone()
    };
    let adv = fgsm(model, &batched, &[y_true], loss_fn, eps)?;
    adv.reshape(original)
}
