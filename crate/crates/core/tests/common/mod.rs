//! Oracles shared by the integration tests. Nothing here calls back into the
//! code under test except to evaluate forward values.

#![allow(dead_code)]

use labelnoise::losses::{self, LossFn, LossResult};
use labelnoise::nn::layer::softmax_rows;
use labelnoise::nn::{Layer, LayerSpec, Model, Shape};
use labelnoise::rng;
use labelnoise::Tensor;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-6;
/// Below this magnitude gradients are compared absolutely; a central
/// difference with step 1e-5 cannot resolve smaller values to 1e-6
/// relative accuracy.
pub const GRAD_FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut r = rng::stream(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| r.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Central difference of `f` along every coordinate of `x`.
pub fn numeric_grad(x: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + FD_STEP;
            let up = f(&probe);
            probe.data_mut()[i] = orig - FD_STEP;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Checks one layer through the scalar objective `Σ r ⊙ layer(x)` with a
/// fixed random `r`. Returns the worst relative error over the input and
/// every parameter.
pub fn layer_gradcheck(
    spec: LayerSpec,
    input: Shape,
    batch: usize,
    seed: u64,
    x: Option<Tensor>,
) -> f64 {
    let (mut layer, out_shape) = Layer::from_spec(spec, input, &mut rng::stream(seed)).unwrap();
    // non-trivial biases so the check exercises them
    for p in layer.params_mut() {
        if p.shape().len() == 1 {
            *p = random_tensor(p.shape(), seed ^ 0xb1a5, -0.5, 0.5);
        }
    }
    let x = x.unwrap_or_else(|| random_tensor(&input.batched(batch), seed + 1, -1.0, 1.0));
    let r = random_tensor(&out_shape.batched(batch), seed + 2, -1.0, 1.0);
    let objective = |layer: &Layer, x: &Tensor| {
        let (y, _) = layer
            .forward(x, input, true, &mut rng::stream(seed + 3), false)
            .unwrap();
        y.data()
            .iter()
            .zip(r.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let (_, cache) = layer
        .forward(&x, input, true, &mut rng::stream(seed + 3), true)
        .unwrap();
    let (dx, dparams) = layer.backward(input, &cache.unwrap(), &r, true).unwrap();
    let mut worst = max_rel_err(
        dx.unwrap().data(),
        &numeric_grad(&x, |x| objective(&layer, x)),
    );
    for (k, dp) in dparams.iter().enumerate() {
        let base = layer.params()[k].clone();
        let numeric = numeric_grad(&base, |p| {
            let mut probe = layer.clone();
            *probe.params_mut()[k] = p.clone();
            objective(&probe, &x)
        });
        worst = worst.max(max_rel_err(dp.data(), &numeric));
    }
    worst
}

/// Full-model check of `loss(model(x))` against every parameter and the
/// input, in training mode with a fixed dropout seed.
pub fn model_gradcheck(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    loss: &dyn LossFn,
    seed: u64,
) -> f64 {
    let value = |m: &Model, x: &Tensor| {
        let (p, _) = m.forward(x, true, seed).unwrap();
        loss.evaluate(&p, labels).unwrap().value
    };
    let (probs, cache) = model.forward(x, true, seed).unwrap();
    let r = loss.evaluate(&probs, labels).unwrap();
    let grads = model.backward_with_input(&cache, &r.grad_logits).unwrap();
    let mut worst = max_rel_err(
        grads.input.unwrap().data(),
        &numeric_grad(x, |x| value(model, x)),
    );
    for (k, g) in grads.params.iter().enumerate() {
        let base = model.params()[k].clone();
        let numeric = numeric_grad(&base, |p| {
            let mut probe = model.clone();
            *probe.params_mut()[k] = p.clone();
            value(&probe, x)
        });
        worst = worst.max(max_rel_err(g.data(), &numeric));
    }
    worst
}

/// Gradient of a loss with respect to logits, checked through softmax.
/// `value` evaluates the loss from probabilities; for the reweighted loss
/// the caller freezes `β` inside it.
pub fn loss_gradcheck(
    logits: &Tensor,
    analytic: &LossResult,
    mut value: impl FnMut(&Tensor) -> f64,
) -> f64 {
    let numeric = numeric_grad(logits, |z| value(&softmax_rows(z)));
    max_rel_err(analytic.grad_logits.data(), &numeric)
}

pub fn loss_value(
    f: impl Fn(&Tensor) -> labelnoise::Result<LossResult>,
) -> impl Fn(&Tensor) -> f64 {
    move |p| f(p).unwrap().value
}

pub fn frozen_reweighted(beta: Vec<f64>, labels: Vec<usize>) -> impl Fn(&Tensor) -> f64 {
    move |p| losses::weighted_ce(p, &labels, &beta).unwrap().value
}

/// The reweighted loss with `β` held at fixed values, which is what the
/// trainer differentiates.
pub struct FrozenBeta(pub Vec<f64>);

impl LossFn for FrozenBeta {
    fn evaluate(&self, probs: &Tensor, labels: &[usize]) -> labelnoise::Result<LossResult> {
        losses::weighted_ce(probs, labels, &self.0)
    }
}

/// Random probability rows bounded away from zero.
pub fn random_probs(n: usize, c: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed);
    let mut data = Vec::with_capacity(n * c);
    for _ in 0..n {
        let row: Vec<f64> = (0..c).map(|_| r.random_range(0.05..1.0)).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.iter().map(|v| v / s));
    }
    Tensor::new(vec![n, c], data).unwrap()
}

fn separated_values(shape: &[usize], seed: u64) -> Tensor {
    // distinct values at least 0.01 apart, so no max-pool window is within
    // a finite-difference step of a tie
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed);
    for i in (1..n).rev() {
        order.swap(i, r.random_range(0..=i));
    }
    Tensor::new(
        shape.to_vec(),
        order.iter().map(|&k| k as f64 * 0.01 - 0.3).collect(),
    )
    .unwrap()
}

fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let t = random_tensor(shape, seed, 0.05, 1.0);
    let signs = random_tensor(shape, seed + 7, -1.0, 1.0);
    Tensor::new(
        shape.to_vec(),
        t.data()
            .iter()
            .zip(signs.data())
            .map(|(v, s)| v * s.signum())
            .collect(),
    )
    .unwrap()
}

/// Small network covering every layer kind, 4 classes.
pub fn toy_model(seed: u64) -> Model {
    use labelnoise::nn::Architecture;
    let specs = [
        LayerSpec::Conv(2),
        LayerSpec::Relu,
        LayerSpec::MaxPool,
        LayerSpec::Conv(3),
        LayerSpec::Relu,
        LayerSpec::Dropout(0.3),
        LayerSpec::Flatten,
        LayerSpec::Dense(5),
        LayerSpec::Relu,
        LayerSpec::Dense(4),
        LayerSpec::Softmax,
    ];
    Model::from_specs(Architecture::Custom, (4, 4, 1), &specs, 4, seed).unwrap()
}

/// Worst relative error of every gradient check, by name.
pub fn all_gradchecks() -> Vec<(String, f64)> {
    use labelnoise::losses::LossSpec;
    use labelnoise::noise::{KnownMatrix, TransitionMatrix};
    let spatial = Shape::Spatial { h: 4, w: 4, c: 2 };
    let mut out = vec![
        (
            "conv2d".to_string(),
            layer_gradcheck(LayerSpec::Conv(3), spatial, 2, 11, None),
        ),
        (
            "maxpool2x2".to_string(),
            layer_gradcheck(
                LayerSpec::MaxPool,
                spatial,
                2,
                12,
                Some(separated_values(&spatial.batched(2), 12)),
            ),
        ),
        (
            "relu".to_string(),
            layer_gradcheck(
                LayerSpec::Relu,
                spatial,
                2,
                13,
                Some(away_from_zero(&spatial.batched(2), 13)),
            ),
        ),
        (
            "dropout".to_string(),
            layer_gradcheck(LayerSpec::Dropout(0.3), spatial, 2, 14, None),
        ),
        (
            "flatten".to_string(),
            layer_gradcheck(LayerSpec::Flatten, spatial, 2, 15, None),
        ),
        (
            "dense".to_string(),
            layer_gradcheck(LayerSpec::Dense(4), Shape::Flat(6), 3, 16, None),
        ),
        (
            "softmax".to_string(),
            layer_gradcheck(LayerSpec::Softmax, Shape::Flat(4), 3, 17, None),
        ),
    ];

    let t3 = TransitionMatrix::known(KnownMatrix::Fashion05);
    let logits = random_tensor(&[5, 3], 21, -2.0, 2.0);
    let probs = softmax_rows(&logits);
    let labels = vec![0, 2, 1, 1, 0];
    let ce = losses::cross_entropy(&probs, &labels).unwrap();
    out.push((
        "loss cross_entropy".into(),
        loss_gradcheck(
            &logits,
            &ce,
            loss_value(|p| losses::cross_entropy(p, &labels)),
        ),
    ));
    let nll_spec = LossSpec::nll();
    let nll = nll_spec.evaluate(&probs, &labels).unwrap();
    out.push((
        "loss nll".into(),
        loss_gradcheck(&logits, &nll, loss_value(|p| nll_spec.evaluate(p, &labels))),
    ));
    let rw = losses::reweighted_ce(&probs, &labels, &t3, losses::DEFAULT_EPSILON).unwrap();
    let beta = rw.weights.clone().unwrap();
    out.push((
        "loss reweighted".into(),
        loss_gradcheck(&logits, &rw, frozen_reweighted(beta, labels.clone())),
    ));
    let bw_spec = LossSpec::backward(t3.clone()).unwrap();
    let bw = bw_spec.evaluate(&probs, &labels).unwrap();
    out.push((
        "loss backward".into(),
        loss_gradcheck(&logits, &bw, loss_value(|p| bw_spec.evaluate(p, &labels))),
    ));

    let t4 = TransitionMatrix::symmetric(4, 0.3).unwrap();
    let model = toy_model(31);
    let x = random_tensor(&[3, 4, 4, 1], 32, 0.0, 1.0);
    let y = vec![3, 0, 2];
    let model_losses: [(&str, Box<dyn LossFn>); 3] = [
        ("cross_entropy", Box::new(LossSpec::cross_entropy())),
        ("nll", Box::new(LossSpec::nll())),
        (
            "backward",
            Box::new(LossSpec::backward(t4.clone()).unwrap()),
        ),
    ];
    for (name, loss) in &model_losses {
        out.push((
            format!("model + {name}"),
            model_gradcheck(&model, &x, &y, loss.as_ref(), 33),
        ));
    }
    let (p, _) = model.forward(&x, true, 33).unwrap();
    let reweighted = LossSpec::reweighted(t4).unwrap().evaluate(&p, &y).unwrap();
    let frozen = FrozenBeta(reweighted.weights.clone().unwrap());
    assert_eq!(
        frozen.evaluate(&p, &y).unwrap().grad_logits,
        reweighted.grad_logits
    );
    out.push((
        "model + reweighted".into(),
        model_gradcheck(&model, &x, &y, &frozen, 33),
    ));
    out
}
