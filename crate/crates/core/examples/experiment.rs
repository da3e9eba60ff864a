//! Run a small repeated-holdout experiment end to end and print the
//! markdown summary. Pass an output directory to also write the result files.

use labelnoise::data::SyntheticSpec;
use labelnoise::harness::{
    render_markdown, run_experiment, DatasetSource, ExperimentConfig, NoiseSource,
};
use labelnoise::nn::TrainConfig;

fn main() -> labelnoise::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let config = ExperimentConfig {
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            samples_per_class: 400,
            ..SyntheticSpec::default()
        }),
        noise: NoiseSource::Fashion05,
        estimate_t: true,
        n_runs: 2,
        train: TrainConfig {
            max_epochs: 15,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let result = run_experiment(&config, out.as_deref())?;
    println!("{}", render_markdown(&result));
    Ok(())
}
