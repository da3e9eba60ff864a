use std::path::Path;
use std::process::Command;

use labelnoise::data::{LabelQuality, LabeledDataset};
use labelnoise::harness::cli::cli_main;
use labelnoise::harness::{load_result, Method};
use labelnoise::noise::TransitionMatrix;

fn run(args: &[&str]) -> i32 {
    cli_main(std::iter::once("labelnoise").chain(args.iter().copied()))
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_labelnoise"))
}

#[test]
fn exit_codes() {
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(
        bin().arg("--version").output().unwrap().status.code(),
        Some(0)
    );
    assert_eq!(bin().output().unwrap().status.code(), Some(1));
    assert_eq!(
        bin().arg("frobnicate").output().unwrap().status.code(),
        Some(1)
    );
    assert_eq!(
        bin()
            .args(["generate", "--bogus"])
            .output()
            .unwrap()
            .status
            .code(),
        Some(1)
    );
    let missing = bin()
        .args([
            "evaluate",
            "--model",
            "/nonexistent/m.bin",
            "--data",
            "/nonexistent/d.nlds",
        ])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
}

#[test]
fn every_subcommand_has_help() {
    for sub in [
        "generate",
        "inject",
        "estimate-t",
        "train",
        "evaluate",
        "experiment",
        "report",
    ] {
        assert_eq!(run(&[sub, "--help"]), 0, "{sub}");
    }
}

#[test]
fn generate_then_inject_flips_about_half() {
    let dir = tempfile::tempdir().unwrap();
    let clean = path(dir.path(), "clean.nlds");
    let noisy = path(dir.path(), "noisy.nlds");
    assert_eq!(
        run(&[
            "generate",
            "--classes",
            "3",
            "--per-class",
            "500",
            "--seed",
            "4",
            "--out",
            &clean
        ]),
        0
    );
    assert_eq!(
        run(&[
            "inject",
            "--data",
            &clean,
            "--t",
            "fashion05",
            "--seed",
            "9",
            "--out",
            &noisy
        ]),
        0
    );
    let a = LabeledDataset::load(&clean).unwrap();
    let b = LabeledDataset::load(&noisy).unwrap();
    assert_eq!(a.label_quality, LabelQuality::Clean);
    assert_eq!(b.label_quality, LabelQuality::Noisy);
    assert_eq!(a.images, b.images);
    assert_eq!(a.class_histogram(), vec![500; 3]);
    // fashion05 is doubly stochastic: the noisy histogram stays uniform in expectation
    // and each label flips with probability 0.5
    let flipped = a
        .labels
        .iter()
        .zip(&b.labels)
        .filter(|(x, y)| x != y)
        .count() as f64
        / 1500.0;
    let sd = (0.25f64 / 1500.0).sqrt();
    assert!((flipped - 0.5).abs() < 4.0 * sd, "flip fraction {flipped}");
    for count in b.class_histogram() {
        let share = count as f64 / 1500.0;
        assert!(
            (share - 1.0 / 3.0).abs() < 4.0 * (2.0f64 / 9.0 / 1500.0).sqrt(),
            "share {share}"
        );
    }
}

#[test]
fn inject_accepts_every_matrix_form() {
    let dir = tempfile::tempdir().unwrap();
    let clean = path(dir.path(), "clean.nlds");
    let out = path(dir.path(), "out.nlds");
    let csv = path(dir.path(), "t.csv");
    TransitionMatrix::symmetric(3, 0.2)
        .unwrap()
        .save_csv(&csv)
        .unwrap();
    assert_eq!(run(&["generate", "--per-class", "20", "--out", &clean]), 0);
    for t in [
        "fashion05",
        "fashion06",
        "identity",
        "symmetric:0.1",
        csv.as_str(),
    ] {
        assert_eq!(
            run(&["inject", "--data", &clean, "--t", t, "--out", &out]),
            0,
            "{t}"
        );
    }
    assert_eq!(
        run(&[
            "inject",
            "--data",
            &clean,
            "--t",
            "symmetric:x",
            "--out",
            &out
        ]),
        2
    );
    assert_eq!(
        run(&["inject", "--data", &clean, "--t", "nonsense", "--out", &out]),
        2
    );
    let four = path(dir.path(), "four.csv");
    TransitionMatrix::identity(4)
        .unwrap()
        .save_csv(&four)
        .unwrap();
    assert_eq!(
        run(&["inject", "--data", &clean, "--t", &four, "--out", &out]),
        2
    );
}

#[test]
fn train_evaluate_and_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let clean = path(dir.path(), "clean.nlds");
    let noisy = path(dir.path(), "noisy.nlds");
    let test = path(dir.path(), "test.nlds");
    let model = path(dir.path(), "model.bin");
    let history = path(dir.path(), "history.csv");
    let estimate = path(dir.path(), "t.csv");
    assert_eq!(
        run(&[
            "generate",
            "--per-class",
            "120",
            "--seed",
            "1",
            "--out",
            &clean
        ]),
        0
    );
    assert_eq!(
        run(&[
            "generate",
            "--per-class",
            "40",
            "--seed",
            "2",
            "--out",
            &test
        ]),
        0
    );
    assert_eq!(
        run(&[
            "inject",
            "--data",
            &clean,
            "--t",
            "symmetric:0.2",
            "--seed",
            "3",
            "--out",
            &noisy
        ]),
        0
    );

    // corrected methods need a matrix
    assert_eq!(
        run(&["train", "--data", &noisy, "--method", "backward", "--out", &model]),
        2
    );
    assert_eq!(
        run(&["train", "--data", &noisy, "--method", "nope", "--out", &model]),
        2
    );
    assert_eq!(
        run(&[
            "train",
            "--data",
            &noisy,
            "--method",
            "reweighted",
            "--t",
            "symmetric:0.2",
            "--epochs",
            "3",
            "--filters",
            "4,8,8",
            "--hidden",
            "16",
            "--out",
            &model,
            "--history",
            &history,
        ]),
        0
    );
    let lines: Vec<String> = std::fs::read_to_string(&history)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss");
    assert!((2..=4).contains(&lines.len()));
    for format in ["md", "csv", "json"] {
        assert_eq!(
            run(&["evaluate", "--model", &model, "--data", &test, "--format", format]),
            0
        );
    }
    assert_eq!(
        run(&["evaluate", "--model", &model, "--data", &test, "--format", "xml"]),
        1
    );

    assert_eq!(
        run(&[
            "estimate-t",
            "--data",
            &noisy,
            "--truth",
            "symmetric:0.2",
            "--epochs",
            "2",
            "--out",
            &estimate
        ]),
        0
    );
    let t = TransitionMatrix::load_csv(&estimate).unwrap();
    assert_eq!(t.n_classes(), 3);
}

#[test]
fn experiment_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = path(dir.path(), "exp.json");
    std::fs::write(
        &config,
        r#"{
            "dataset": {"synthetic": {"n_classes": 3, "samples_per_class": 60, "image_shape": [8, 8, 1],
                                      "template_contrast": 0.6, "pixel_noise_sigma": 0.3}},
            "test_per_class": 20,
            "noise": "fashion05",
            "estimate_t": true,
            "filters": [4, 8, 8],
            "hidden": 16,
            "n_runs": 2,
            "train": {"max_epochs": 2}
        }"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "experiment",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap()
        ]),
        0
    );
    for file in ["result.json", "result.csv", "runs.csv", "result.md"] {
        assert!(out.join(file).exists(), "{file}");
    }
    assert!(!out.join("partial.json").exists());
    let result_path = path(&out, "result.json");
    let result = load_result(&result_path).unwrap();
    assert_eq!(result.runs.len(), 2);
    assert!(result.estimation.as_ref().unwrap().mean_mse.is_some());
    assert_eq!(
        result.summary(Method::Backward).unwrap().aggregate.n_runs,
        2
    );
    for format in ["md", "csv", "runs"] {
        assert_eq!(
            run(&["report", "--result", &result_path, "--format", format]),
            0
        );
    }

    std::fs::write(&config, r#"{"n_runs": 0}"#).unwrap();
    assert_eq!(
        run(&[
            "experiment",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap()
        ]),
        2
    );
    std::fs::write(&config, r#"{"surprise": 1}"#).unwrap();
    assert_eq!(
        run(&[
            "experiment",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap()
        ]),
        2
    );
}
