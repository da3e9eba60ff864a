//! Compare the analytic input gradient of a small network under each loss
//! with central finite differences.

use labelnoise::losses::{LossFn, LossSpec};
use labelnoise::nn::{Architecture, Model};
use labelnoise::noise::TransitionMatrix;
use labelnoise::Tensor;

fn main() -> labelnoise::Result<()> {
    let model = Model::build_with(
        Architecture::Custom,
        (8, 8, 1),
        3,
        Some(&[2, 4]),
        Some(6),
        5,
    )?;
    let n = 2 * 8 * 8;
    let x = Tensor::new(
        vec![2, 8, 8, 1],
        (0..n).map(|i| ((i * 37 % 101) as f64) / 101.0).collect(),
    )?;
    let labels = [0, 2];
    let t = TransitionMatrix::symmetric(3, 0.2)?;
    let losses: [(&str, LossSpec); 2] = [
        ("cross-entropy", LossSpec::cross_entropy()),
        ("backward", LossSpec::backward(t)?),
    ];
    let h = 1e-5;
    for (name, loss) in losses {
        let objective = |input: &Tensor| -> labelnoise::Result<f64> {
            let (probs, _) = model.forward(input, false, 0)?;
            Ok(loss.evaluate(&probs, &labels)?.value)
        };
        let (probs, cache) = model.forward(&x, false, 0)?;
        let grad =
            model.backward_with_input(&cache, &loss.evaluate(&probs, &labels)?.grad_logits)?;
        let analytic = grad.input.expect("input gradient requested");
        let mut worst = 0.0f64;
        let mut probe = x.clone();
        for i in 0..n {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = objective(&probe)?;
            probe.data_mut()[i] = orig - h;
            let down = objective(&probe)?;
            probe.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4));
        }
        println!("{name:<14} worst relative error over {n} inputs: {worst:.2e}");
    }
    Ok(())
}
