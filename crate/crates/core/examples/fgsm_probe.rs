//! Perturb test images with a single signed-gradient step and watch accuracy
//! fall as the step grows.

use labelnoise::data::{generate_synthetic, split, SyntheticSpec};
use labelnoise::losses::LossSpec;
use labelnoise::nn::{fgsm, train, Architecture, Model, TrainConfig};

fn main() -> labelnoise::Result<()> {
    let spec = SyntheticSpec {
        samples_per_class: 300,
        ..SyntheticSpec::default()
    };
    let pool = generate_synthetic(&spec, 20)?;
    let test = generate_synthetic(
        &SyntheticSpec {
            samples_per_class: 100,
            ..spec.clone()
        },
        21,
    )?;
    let parts = split(&pool, 0.8, 22)?;
    let ce = LossSpec::cross_entropy();
    let model = Model::build(Architecture::SmallCnn, spec.image_shape, spec.n_classes, 23)?;
    let (model, _) = train(
        model,
        &parts.train,
        &parts.val,
        &ce,
        &TrainConfig::default(),
    )?;

    for eps in [0.0, 0.05, 0.1, 0.2, 0.4] {
        let adv = fgsm(&model, &test.images, &test.labels, &ce, eps)?;
        let pred = model.predict(&adv)?;
        let hits = pred
            .iter()
            .zip(&test.labels)
            .filter(|(a, b)| a == b)
            .count();
        println!(
            "eps {eps:.2}: max |Δx| {:.3}, accuracy {:.4}",
            adv.max_abs_diff(&test.images),
            hits as f64 / test.len() as f64
        );
    }
    Ok(())
}
