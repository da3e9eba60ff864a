//! Recover a transition matrix from noisy labels alone: train a plain
//! cross-entropy classifier on the noisy data, then average its posteriors
//! within each noisy-label group.

use labelnoise::data::{generate_synthetic, split, LabelQuality, SyntheticSpec};
use labelnoise::estimation::estimate_transition;
use labelnoise::losses::LossSpec;
use labelnoise::nn::{train, Architecture, Model, TrainConfig};
use labelnoise::noise::{inject_noise, KnownMatrix, TransitionMatrix};

fn main() -> labelnoise::Result<()> {
    let spec = SyntheticSpec {
        samples_per_class: 2000,
        ..SyntheticSpec::default()
    };
    let t = TransitionMatrix::known(KnownMatrix::Fashion05);
    let clean = generate_synthetic(&spec, 1)?;
    let (noisy, _) = inject_noise(&clean.labels, &t, 2)?;
    let pool = clean.relabel(noisy, LabelQuality::Noisy)?;
    let parts = split(&pool, 0.8, 3)?;

    let model = Model::build(Architecture::SmallCnn, spec.image_shape, spec.n_classes, 4)?;
    let config = TrainConfig {
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let (model, history) = train(
        model,
        &parts.train,
        &parts.val,
        &LossSpec::cross_entropy(),
        &config,
    )?;
    println!(
        "auxiliary classifier: best epoch {} of {}",
        history.best_epoch,
        history.epochs.len()
    );

    let report =
        estimate_transition(&model, &parts.train.images, &parts.train.labels)?.with_truth(&t)?;
    println!("true:\n{t}");
    println!("estimated:\n{}", report.estimated);
    println!("{}", report.summary());
    Ok(())
}
