//! Acceptance suite. Runs as a plain binary (no libtest harness) and prints
//! one PASS/FAIL line per criterion. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 1 2 10`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use labelnoise::data::{self, generate_synthetic, LabelQuality, SyntheticSpec};
use labelnoise::estimation::{estimate_transition, mse_entries};
use labelnoise::harness::{cli, run_experiment, ExperimentConfig, Method, NoiseSource};
use labelnoise::losses::{self, LossFn, LossSpec};
use labelnoise::metrics::{self, ConfusionMatrix};
use labelnoise::nn::{self, fgsm_example, Architecture, LayerSpec, Model, TrainConfig};
use labelnoise::noise::{inject_noise, KnownMatrix, TransitionMatrix};
use labelnoise::{rng, Tensor};
use rand::Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const PRINTED_05: [[f64; 3]; 3] = [
    [0.50795323, 0.20026277, 0.3369517],
    [0.29097453, 0.51545948, 0.24141385],
    [0.20107204, 0.28427809, 0.42163846],
];
const PRINTED_06: [[f64; 3]; 3] = [
    [0.36052278, 0.29172212, 0.30938146],
    [0.30907449, 0.38835666, 0.29762521],
    [0.33040264, 0.31992134, 0.39299306],
];

fn mse_reproduction() -> Outcome {
    let mut detail = Vec::new();
    for (which, printed, expected) in [
        (KnownMatrix::Fashion05, PRINTED_05, 0.001094796813976767),
        (KnownMatrix::Fashion06, PRINTED_06, 0.00036764631834922286),
    ] {
        let truth = TransitionMatrix::known(which);
        let est: Vec<Vec<f64>> = printed.iter().map(|r| r.to_vec()).collect();
        let got = mse_entries(truth.rows(), &est).map_err(|e| e.to_string())?;
        ensure((got - expected).abs() < 1e-12, || {
            format!("{}: mse {got:e}, expected {expected:e}", which.name())
        })?;
        detail.push(format!("{} {got:.18}", which.name()));
    }
    Ok(detail.join(", "))
}

fn backward_unbiasedness() -> Outcome {
    let mut worst = 0.0f64;
    for which in [KnownMatrix::Fashion05, KnownMatrix::Fashion06] {
        let t = TransitionMatrix::known(which);
        let loss = LossSpec::backward(t.clone()).map_err(|e| e.to_string())?;
        let probs = common::random_probs(1000, 3, 0x00b1_a5ed);
        for i in 0..probs.batch() {
            let row = Tensor::new(vec![1, 3], probs.row(i).to_vec()).unwrap();
            // corrected loss when the observed label is j
            let corrected: Vec<f64> = (0..3)
                .map(|j| loss.evaluate(&row, &[j]).unwrap().value)
                .collect();
            for y in 0..3 {
                let expectation: f64 = (0..3).map(|j| t.get(y, j) * corrected[j]).sum();
                let clean = -probs.row(i)[y].ln();
                worst = worst.max((expectation - clean).abs());
            }
        }
    }
    ensure(worst < 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!(
        "max |E[corrected] − ℓ_y| = {worst:.2e} over 2×1000×3 cases"
    ))
}

fn beta_consistency() -> Outcome {
    let mut r = rng::stream(0x0be7a);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let rho_pos = r.random_range(0.0..0.45);
        let rho_neg = r.random_range(0.0..0.45);
        let t = TransitionMatrix::from_rows(vec![
            vec![1.0 - rho_pos, rho_pos],
            vec![rho_neg, 1.0 - rho_neg],
        ])
        .map_err(|e| e.to_string())?;
        let p0 = r.random_range(0.01..0.99);
        let p = [p0, 1.0 - p0];
        let y = r.random_range(0..2usize);
        let probs = Tensor::new(vec![1, 2], p.to_vec()).unwrap();
        let beta = losses::beta_weight(&probs, &[y], &t, 0.0).map_err(|e| e.to_string())?[0];
        // closed form in terms of the noisy posterior and the flip rates
        let rho = [rho_pos, rho_neg];
        let (rho_y, rho_other) = (rho[y], rho[1 - y]);
        let noisy_y = p[y] * (1.0 - rho_y) + p[1 - y] * rho_other;
        let closed = (noisy_y - rho_other) / ((1.0 - rho_pos - rho_neg) * noisy_y);
        worst = worst.max((beta - closed).abs() / closed.abs().max(1.0));
    }
    ensure(worst < 1e-9, || {
        format!("binary closed form deviates by {worst:e}")
    })?;

    let identity = TransitionMatrix::identity(3).unwrap();
    let probs = common::random_probs(2000, 3, 0x1d);
    let labels: Vec<usize> = (0..2000).map(|i| i % 3).collect();
    let betas = losses::beta_weight(&probs, &labels, &identity, losses::DEFAULT_EPSILON).unwrap();
    let mut worst_identity = 0.0f64;
    for (i, (&b, &y)) in betas.iter().zip(&labels).enumerate() {
        let p = probs.row(i)[y];
        let bound = losses::DEFAULT_EPSILON / (p + losses::DEFAULT_EPSILON);
        ensure((b - 1.0).abs() <= bound + 1e-15, || {
            format!("identity β {b} exceeds ε/(p+ε) at p = {p}")
        })?;
        if p >= 0.1 {
            worst_identity = worst_identity.max((b - 1.0).abs());
        }
    }
    ensure(worst_identity <= 1e-6, || {
        format!("identity β off by {worst_identity:e}")
    })?;
    Ok(format!(
        "binary max rel dev {worst:.2e}; identity |β−1| ≤ {worst_identity:.2e} for p ≥ 0.1"
    ))
}

fn gradient_checks() -> Outcome {
    let results = common::all_gradchecks();
    let worst = results.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let failing: Vec<String> = results
        .iter()
        .filter(|(_, e)| !(*e < common::GRAD_REL_TOL))
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    ensure(failing.is_empty(), || failing.join("; "))?;
    Ok(format!(
        "{} checks, worst relative error {worst:.2e}",
        results.len()
    ))
}

fn estimator_recovery() -> Outcome {
    let t = TransitionMatrix::known(KnownMatrix::Fashion05);
    let spec = SyntheticSpec {
        samples_per_class: 5000,
        ..SyntheticSpec::default()
    };
    let mut mses = Vec::new();
    for seed in 0..3u64 {
        let pool = generate_synthetic(&spec, rng::derive(seed, &[1])).map_err(|e| e.to_string())?;
        let (noisy, _) = inject_noise(&pool.labels, &t, rng::derive(seed, &[2])).unwrap();
        let pool = pool.relabel(noisy, LabelQuality::Noisy).unwrap();
        let parts = data::split(&pool, 0.8, rng::derive(seed, &[3])).unwrap();
        let aux = Model::build(
            Architecture::SmallCnn,
            spec.image_shape,
            3,
            rng::derive(seed, &[4]),
        )
        .unwrap();
        let config = TrainConfig {
            max_epochs: labelnoise::harness::ESTIMATOR_MAX_EPOCHS,
            seed: rng::derive(seed, &[5]),
            ..TrainConfig::default()
        };
        let (aux, _) = nn::train(
            aux,
            &parts.train,
            &parts.val,
            &LossSpec::cross_entropy(),
            &config,
        )
        .map_err(|e| e.to_string())?;
        let report = estimate_transition(&aux, &parts.train.images, &parts.train.labels)
            .and_then(|r| r.with_truth(&t))
            .map_err(|e| e.to_string())?;
        mses.push(report.mse_vs_truth.unwrap());
    }
    let mean = mses.iter().sum::<f64>() / mses.len() as f64;
    let detail = format!("per-seed MSE {mses:.4?}, mean {mean:.5}");
    ensure(mean < 0.01, || detail.clone())?;
    Ok(detail)
}

fn correction_efficacy() -> Outcome {
    let mut detail = Vec::new();
    let mut failures = Vec::new();
    for (noise, margin) in [
        (NoiseSource::Fashion05, 0.03),
        (NoiseSource::Fashion06, 0.02),
    ] {
        let config = ExperimentConfig {
            noise: noise.clone(),
            n_runs: 5,
            ..ExperimentConfig::default()
        };
        let result = run_experiment(&config, None).map_err(|e| e.to_string())?;
        let acc = |m| result.mean_accuracy(m).unwrap();
        let (base, rw, bw) = (
            acc(Method::CeBaseline),
            acc(Method::Reweighted),
            acc(Method::Backward),
        );
        let line = format!("{noise:?}: baseline {base:.4}, reweighted {rw:.4}, backward {bw:.4}");
        if rw < base + margin || bw < base + margin {
            failures.push(format!("{line} (needs +{margin})"));
        }
        detail.push(line);
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(detail.join("; "))
}

fn injection_statistics() -> Outcome {
    let t = TransitionMatrix::known(KnownMatrix::Fashion05);
    let labels: Vec<usize> = (0..90_000).map(|i| i % 3).collect();
    let (_, record) = inject_noise(&labels, &t, 0x5eed).unwrap();
    let worst = record
        .empirical_matrix
        .iter()
        .zip(t.rows())
        .flat_map(|(e, r)| e.iter().zip(r).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    ensure(worst < 0.015, || format!("max deviation {worst}"))?;
    Ok(format!(
        "30,000 labels per class, max entry deviation {worst:.4}"
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = ExperimentConfig {
        n_runs: 2,
        train: TrainConfig {
            max_epochs: 6,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let config_path = dir.path().join("exp.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let code = cli::cli_main([
            "labelnoise",
            "experiment",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        ensure(code == 0, || format!("experiment exited with {code}"))?;
        let files: Vec<Vec<u8>> = ["result.csv", "runs.csv"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    ensure(outputs[0] == outputs[1], || {
        "CSV outputs differ between runs".into()
    })?;
    Ok(format!(
        "result.csv ({} bytes) and runs.csv ({} bytes) identical",
        outputs[0][0].len(),
        outputs[0][1].len()
    ))
}

fn fgsm_probe() -> Outcome {
    let eps = 0.05;
    let cnn = common::toy_model(7);
    let ce = LossSpec::cross_entropy();
    let mut r = rng::stream(0xf65);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let x = common::random_tensor(&[1, 4, 4, 1], 1000 + i, 0.0, 1.0);
        let y = r.random_range(0..4usize);
        let adv = fgsm_example(&cnn, &x, y, &ce, eps).map_err(|e| e.to_string())?;
        let d = adv.max_abs_diff(&x);
        ensure(d <= eps, || format!("perturbation {d} exceeds {eps}"))?;
        worst = worst.max(d);
    }

    let linear = Model::from_specs(
        Architecture::Custom,
        (4, 4, 1),
        &[LayerSpec::Flatten, LayerSpec::Dense(3), LayerSpec::Softmax],
        3,
        11,
    )
    .unwrap();
    let loss_at = |x: &Tensor, y: usize| {
        ce.evaluate(&linear.predict_proba(x).unwrap(), &[y])
            .unwrap()
            .value
    };
    let mut min_gain = f64::INFINITY;
    for i in 0..1000 {
        let x = common::random_tensor(&[1, 4, 4, 1], 5000 + i, 0.0, 1.0);
        let y = (i % 3) as usize;
        let adv = fgsm_example(&linear, &x, y, &ce, eps).map_err(|e| e.to_string())?;
        let gain = loss_at(&adv, y) - loss_at(&x, y);
        ensure(gain >= 0.0, || {
            format!("adversarial loss fell by {}", -gain)
        })?;
        min_gain = min_gain.min(gain);
    }
    Ok(format!(
        "max |Δx| = {worst} ≤ {eps}; linear-model loss gain ≥ {min_gain:.3e}"
    ))
}

/// Per-class counts straight from the label lists.
fn oracle_scores(
    y_true: &[usize],
    y_pred: &[usize],
    c: usize,
) -> Vec<(Option<f64>, Option<f64>, Option<f64>)> {
    (0..c)
        .map(|k| {
            let tp = y_true
                .iter()
                .zip(y_pred)
                .filter(|&(&a, &p)| a == k && p == k)
                .count() as u64;
            let fp = y_true
                .iter()
                .zip(y_pred)
                .filter(|&(&a, &p)| a != k && p == k)
                .count() as u64;
            let fn_ = y_true
                .iter()
                .zip(y_pred)
                .filter(|&(&a, &p)| a == k && p != k)
                .count() as u64;
            let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
            let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
            let f1 = match (precision, recall) {
                (Some(p), Some(r)) if p + r > 0.0 => {
                    let f = 2.0 * p * r / (p + r);
                    let alt = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
                    assert!((f - alt).abs() < 1e-12);
                    Some(f)
                }
                _ => None,
            };
            (precision, recall, f1)
        })
        .collect()
}

fn metrics_fidelity() -> Outcome {
    let mut r = rng::stream(0x3e7);
    for case in 0..20 {
        let c = r.random_range(2..6usize);
        let n = r.random_range(5..60usize);
        let y_true: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let y_pred: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let cm: ConfusionMatrix =
            metrics::confusion(&y_true, &y_pred, c).map_err(|e| e.to_string())?;
        let report = metrics::compute_metrics(&cm).map_err(|e| e.to_string())?;
        let oracle = oracle_scores(&y_true, &y_pred, c);
        for (k, (p, rc, f)) in oracle.iter().enumerate() {
            let got = report.per_class[k];
            ensure(
                got.precision == *p && got.recall == *rc && got.f1 == *f,
                || {
                    format!(
                        "case {case} class {k}: got {got:?}, oracle {:?}",
                        (p, rc, f)
                    )
                },
            )?;
        }
        let hits = y_true.iter().zip(&y_pred).filter(|(a, b)| a == b).count();
        ensure(report.accuracy == hits as f64 / n as f64, || {
            format!("case {case}: accuracy")
        })?;
    }
    let g = metrics::growth_rate(0.835, 0.892).map_err(|e| e.to_string())?;
    ensure((6.72..=6.92).contains(&g), || format!("growth rate {g}"))?;
    Ok(format!(
        "20 random matrices match the counting oracle; growth rate {g:.2}%"
    ))
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "MSE reproduction",
            budget: Duration::from_millis(1),
            run: mse_reproduction,
        },
        Criterion {
            id: 2,
            name: "backward unbiasedness",
            budget: Duration::from_secs(1),
            run: backward_unbiasedness,
        },
        Criterion {
            id: 3,
            name: "β consistency",
            budget: Duration::from_secs(1),
            run: beta_consistency,
        },
        Criterion {
            id: 4,
            name: "gradient checks",
            budget: Duration::from_secs(30),
            run: gradient_checks,
        },
        Criterion {
            id: 5,
            name: "estimator recovery",
            budget: Duration::from_secs(300),
            run: estimator_recovery,
        },
        Criterion {
            id: 6,
            name: "correction efficacy",
            budget: Duration::from_secs(900),
            run: correction_efficacy,
        },
        Criterion {
            id: 7,
            name: "noise-injection statistics",
            budget: Duration::from_secs(1),
            run: injection_statistics,
        },
        Criterion {
            id: 8,
            name: "determinism",
            budget: Duration::from_secs(600),
            run: determinism,
        },
        Criterion {
            id: 9,
            name: "FGSM probe",
            budget: Duration::from_secs(5),
            run: fgsm_probe,
        },
        Criterion {
            id: 10,
            name: "metrics fidelity",
            budget: Duration::from_secs(1),
            run: metrics_fidelity,
        },
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.id))
    {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = started.elapsed();
        let over_budget = elapsed > c.budget;
        let (status, detail) = match (&outcome, over_budget) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; over the {:?} budget", c.budget)),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "[{status}] {:>2}. {:<28} {:>8.2?}  {detail}",
            c.id, c.name, elapsed
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
