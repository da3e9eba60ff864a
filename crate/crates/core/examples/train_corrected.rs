//! Train the baseline and both loss corrections on the same noisy pool and
//! report clean test accuracy for each.

use labelnoise::data::{generate_synthetic, split, LabelQuality, SyntheticSpec};
use labelnoise::losses::{CorrectedError, LossFn, LossSpec, ValidationScore};
use labelnoise::nn::{train_with_validation, Architecture, Model, TrainConfig};
use labelnoise::noise::{inject_noise, KnownMatrix, TransitionMatrix};

fn main() -> labelnoise::Result<()> {
    let spec = SyntheticSpec::default();
    let t = TransitionMatrix::known(KnownMatrix::Fashion05);
    let clean = generate_synthetic(&spec, 10)?;
    let (noisy, record) = inject_noise(&clean.labels, &t, 11)?;
    println!(
        "{} of {} training labels flipped",
        record.n_flipped,
        noisy.len()
    );
    let pool = clean.relabel(noisy, LabelQuality::Noisy)?;
    let parts = split(&pool, 0.8, 12)?;
    let test = generate_synthetic(
        &SyntheticSpec {
            samples_per_class: 200,
            ..spec.clone()
        },
        13,
    )?;

    let unbiased = CorrectedError::new(&t)?;
    let ce = LossSpec::cross_entropy();
    let reweighted = LossSpec::reweighted(t.clone())?;
    let backward = LossSpec::backward(t.clone())?;
    let methods: [(&str, &dyn LossFn, &dyn ValidationScore); 3] = [
        ("ce_baseline", &ce, &ce),
        ("reweighted", &reweighted, &unbiased),
        ("backward", &backward, &unbiased),
    ];
    let config = TrainConfig {
        seed: 14,
        ..TrainConfig::default()
    };
    for (name, loss, monitor) in methods {
        let model = Model::build(Architecture::SmallCnn, spec.image_shape, spec.n_classes, 15)?;
        let (model, history) =
            train_with_validation(model, &parts.train, &parts.val, loss, monitor, &config)?;
        let pred = model.predict(&test.images)?;
        let hits = pred
            .iter()
            .zip(&test.labels)
            .filter(|(a, b)| a == b)
            .count();
        println!(
            "{name:<12} test accuracy {:.4} (best epoch {})",
            hits as f64 / test.len() as f64,
            history.best_epoch
        );
    }
    Ok(())
}
