//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssse::cli::{fisher_for, run_boundary_demo, run_experiment, ExperimentConfig};
use ssse::data::{make_separable_binary, make_separable_subspace};
use ssse::erasure::{ssse_update, ErasureRequest, GradientSource};
use ssse::eval::{
    confusion_distance, epsilon_sweep, normalized_confusion_distance, normalized_param_distance,
    performance_similarity, roc_auc, similarity_ratio, Criterion,
};
use ssse::fisher::{build_inverse_fisher, BlockSpec};
use ssse::linalg::Matrix;
use ssse::models::{
    fisher_hessian_deviation, grad, Dataset, Labels, LossConfig, ModelParams, Shape,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_path(name)).expect("shipped config parses")
}

fn random_linear_problem(
    rng: &mut ChaCha8Rng,
    n: usize,
    classes: usize,
    features: usize,
) -> (ModelParams<f64>, Dataset<f64>) {
    let shape = Shape::MultinomialLinear { classes, features };
    let x = Matrix::from_fn(n, features, |_, _| rng.random_range(-1.5..1.5));
    let labels = Labels::Classes {
        classes,
        values: (0..n).map(|_| rng.random_range(0..classes)).collect(),
    };
    let ds = Dataset::with_sequential_ids(x, labels).unwrap();
    let values = (0..shape.num_params())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    (ModelParams::new(values, shape, 0).unwrap(), ds)
}

fn to_nalgebra(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// `λI + (1/n) Σ g gᵀ` assembled and inverted with nalgebra.
fn dense_inverse_fisher(grads: &[Vec<f64>], dampening: f64) -> DMatrix<f64> {
    let d = grads[0].len();
    let mut f = DMatrix::<f64>::identity(d, d) * dampening;
    for g in grads {
        let v = nalgebra::DVector::from_column_slice(g);
        f += &v * v.transpose() / grads.len() as f64;
    }
    f.try_inverse().expect("dampened Fisher is invertible")
}

fn sherman_morrison_matches_dense() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let lambdas = [1e-4, 1e-2, 1.0];
    let mut worst: f64 = 0.0;
    for inst in 0..50 {
        let classes = rng.random_range(2..=4);
        let features = rng.random_range(1..=20 / classes);
        let n = rng.random_range(1..=50);
        let lambda = lambdas[inst % 3];
        let (theta, ds) = random_linear_problem(&mut rng, n, classes, features);
        let cfg = LossConfig::new(0.01).unwrap();
        let d = theta.len();
        let finv = build_inverse_fisher(&theta, &ds, &cfg, lambda, &BlockSpec::single(d), 1).unwrap();
        let grads: Vec<Vec<f64>> = (0..n).map(|r| grad(&theta, &ds, r, &cfg).unwrap()).collect();
        let want = dense_inverse_fisher(&grads, lambda);
        let got = to_nalgebra(&finv.to_dense());
        worst = worst.max((&got - &want).norm() / want.norm());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-9 && elapsed < Duration::from_secs(1),
        format!("worst relative Frobenius error {worst:.2e} (<= 1e-9), {elapsed:.2?} (< 1 s)"),
    )
}

fn curvature_matches_scaled_fisher() -> Outcome {
    let mut all_ok = true;
    let mut parts = Vec::new();
    for &c in &[3usize, 10, 50] {
        for &eps in &[1e-3, 1e-4] {
            let per_class = if c == 50 { 2 } else { 6 };
            let (ds, theta) = make_separable_subspace::<f64>(c, c + 10, eps, per_class, 17).unwrap();
            let scale = 1.0 / (eps * (c as f64 - 1.0));
            let check = fisher_hessian_deviation(&theta, &ds, scale).unwrap();
            let bound = 5.0 * c as f64 * eps;
            let ok = check.max_rel_dev <= bound;
            all_ok &= ok;
            parts.push(format!(
                "c={c} eps={eps:e}: {:.3e} {} {:.1e}",
                check.max_rel_dev,
                if ok { "<=" } else { ">" },
                bound
            ));
        }
    }
    let eps = 0.05;
    let (ds, theta) = make_separable_binary::<f64>(6, eps, 10, 5).unwrap();
    let check = fisher_hessian_deviation(&theta, &ds, eps / (1.0 - eps)).unwrap();
    let ok = check.max_rel_dev <= 1e-10;
    all_ok &= ok;
    parts.push(format!(
        "binary H = eps/(1-eps) F at eps={eps}: deviation {:.3e} (<= 1e-10)",
        check.max_rel_dev
    ));
    outcome(all_ok, parts.join("; "))
}

fn ssse_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = Vec::new();
    let mut worst_linear: f64 = 0.0;
    let mut worst_dense: f64 = 0.0;
    for _ in 0..20 {
        let (theta, ds) = random_linear_problem(&mut rng, 25, 2, 3);
        let cfg = LossConfig::new(0.05).unwrap();
        let lambda = 0.1;
        let finv = build_inverse_fisher(&theta, &ds, &cfg, lambda, &BlockSpec::single(6), 1).unwrap();
        let removed: Vec<u64> = vec![1, 4, 9, 16];
        let run = |eps: f64| {
            ssse_update(&theta, &finv, &ds, &cfg, &ErasureRequest::new(removed.clone(), eps)).unwrap()
        };
        let zero = run(0.0);
        if zero.values().iter().zip(theta.values()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            failures.push("eps = 0 changed the parameters".to_string());
        }
        let (one, three) = (run(0.7), run(2.1));
        for ((a, b), t) in one.values().iter().zip(three.values()).zip(theta.values()) {
            worst_linear = worst_linear.max(((b - t) - 3.0 * (a - t)).abs());
        }
        // dense oracle: θ + ε/(n-k) (λI + mean g gᵀ)⁻¹ Σ_S g
        let grads: Vec<Vec<f64>> = (0..ds.len()).map(|r| grad(&theta, &ds, r, &cfg).unwrap()).collect();
        let inv = dense_inverse_fisher(&grads, lambda);
        let mut s = nalgebra::DVector::<f64>::zeros(6);
        for &id in &removed {
            s += nalgebra::DVector::from_column_slice(&grads[id as usize]);
        }
        let step = inv * s * (0.7 / (25.0 - 4.0));
        for j in 0..6 {
            let want = theta.values()[j] + step[j];
            worst_dense = worst_dense.max((one.values()[j] - want).abs() / want.abs().max(1.0));
        }
    }
    let pass = failures.is_empty() && worst_linear <= 1e-12 && worst_dense <= 1e-10;
    outcome(
        pass,
        format!(
            "eps=0 bitwise: {}; linearity error {worst_linear:.2e} (<= 1e-12); dense oracle error {worst_dense:.2e} (<= 1e-10)",
            if failures.is_empty() { "ok" } else { "broken" }
        ),
    )
}

fn boundary_demo() -> Outcome {
    let start = Instant::now();
    let cfg = load_config("demo.conf");
    let demo = run_boundary_demo(&cfg).unwrap();
    let s = &demo.summary;
    let elapsed = start.elapsed();
    let n = demo.original.len();
    let pass = s.ssse < s.original
        && s.influence_lko <= s.influence_full
        && s.removed == 10
        && elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "{} params, removed {}: disagreement with retrain original {:.4}, ssse(eps={}) {:.4}, influence full {:.4}, lko {:.4}; {elapsed:.2?} (< 30 s)",
            n, s.removed, s.original, s.best_epsilon, s.ssse, s.influence_full, s.influence_lko
        ),
    )
}

fn multinomial_class_removal() -> Outcome {
    let start = Instant::now();
    let cfg = load_config("multinomial.conf");
    let exp = run_experiment(&cfg).unwrap();
    let sweep = epsilon_sweep(
        &exp.evaluator,
        &exp.finv,
        &cfg.sweep.grid,
        Criterion::MinDelta,
        GradientSource::Removed,
    )
    .unwrap();
    let retrain = exp.evaluator.evaluate(&exp.theta_retrain, 0.0).unwrap();
    let best = sweep.best();
    let any_below = sweep.records.iter().any(|r| r.delta.unwrap() < 0.5);
    let d_train = (best.lko_train.accuracy - retrain.lko_train.accuracy).abs();
    let d_test = (best.lko_test.as_ref().unwrap().accuracy
        - retrain.lko_test.as_ref().unwrap().accuracy)
        .abs();
    let elapsed = start.elapsed();
    let pass = any_below && d_train <= 0.02 && d_test <= 0.02 && elapsed < Duration::from_secs(120);
    outcome(
        pass,
        format!(
            "n={} d={}: best eps {} with delta {:.3}; |dacc| lko_train {:.2} pp, lko_test {:.2} pp (<= 2 pp); {elapsed:.2?} (< 120 s)",
            exp.prepared.train.len(),
            exp.theta_star.len(),
            sweep.best_epsilon,
            best.delta.unwrap(),
            100.0 * d_train,
            100.0 * d_test
        ),
    )
}

fn multi_attribute_removal() -> Outcome {
    let cfg = load_config("multi_attribute.conf");
    let exp = run_experiment(&cfg).unwrap();
    let sweep = epsilon_sweep(
        &exp.evaluator,
        &exp.finv,
        &cfg.sweep.grid,
        Criterion::MaxGamma,
        GradientSource::Removed,
    )
    .unwrap();
    let best = sweep.best().gamma.unwrap();
    outcome(
        best > 0.5,
        format!(
            "{} attributes, removed {}: max gamma {:.3} at eps {} (> 0.5)",
            exp.prepared.train.labels().outputs(),
            exp.prepared.splits.removed().len(),
            best,
            sweep.best_epsilon
        ),
    )
}

fn mlp_class_removal() -> Outcome {
    let start = Instant::now();
    let mut cfg = load_config("mlp.conf");
    let exp = run_experiment(&cfg).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for batch in [1usize, 10] {
        cfg.fisher.batch_size = batch;
        let finv = fisher_for(&cfg, &exp.theta_star, &cfg.loss, &exp.prepared.train).unwrap();
        let sweep = epsilon_sweep(
            &exp.evaluator,
            &finv,
            &cfg.sweep.grid,
            Criterion::MinDelta,
            GradientSource::Removed,
        )
        .unwrap();
        let best = sweep.best().delta.unwrap();
        pass &= best < 0.5;
        parts.push(format!("batch {batch}: min delta {best:.3} at eps {}", sweep.best_epsilon));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    outcome(
        pass,
        format!("{} params; {}; {elapsed:.2?} (< 120 s)", exp.theta_star.len(), parts.join(", ")),
    )
}

fn random_model(seed: u64, shape: Shape) -> ModelParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..shape.num_params()).map(|_| rng.random_range(-1.5..1.5)).collect();
    ModelParams::new(v, shape, seed).unwrap()
}

fn random_dataset(seed: u64, n: usize, binary: bool) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(n, 3, |_, _| rng.random_range(-2.0..2.0));
    let labels = if binary {
        Labels::Binary {
            attributes: 3,
            values: (0..3 * n).map(|_| rng.random_range(0..2)).collect(),
        }
    } else {
        Labels::Classes {
            classes: 4,
            values: (0..n).map(|_| rng.random_range(0..4)).collect(),
        }
    };
    Dataset::with_sequential_ids(x, labels).unwrap()
}

fn relabeled(ds: &Dataset<f64>, seed: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<u64> = (0..ds.len() as u64).map(|i| 1000 + 13 * i).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    Dataset::new(ds.features().clone(), ds.labels().clone(), ids).unwrap()
}

fn metric_properties() -> Outcome {
    const BIN: Shape = Shape::MultiAttrLinear {
        attributes: 3,
        features: 3,
    };
    const MUL: Shape = Shape::MultinomialLinear {
        classes: 4,
        features: 3,
    };
    let mut results: Vec<(&str, Result<(), String>)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn(u64, usize) -> Result<(), TestCaseError>| {
        let mut runner = TestRunner::new(PropConfig {
            cases: 200,
            failure_persistence: None,
            ..PropConfig::default()
        });
        let r = runner
            .run(&(any::<u64>(), 4usize..40), |(seed, n)| f(seed, n))
            .map_err(|e| e.to_string());
        results.push((name, r));
    };
    run("gamma complement + relabeling", &|seed, n| {
        let ds = random_dataset(seed, n, true);
        let (h, s, r) = (random_model(seed ^ 1, BIN), random_model(seed ^ 2, BIN), random_model(seed ^ 3, BIN));
        let g = similarity_ratio(&h, &s, &r, &ds).unwrap();
        let swapped = similarity_ratio(&h, &r, &s, &ds).unwrap();
        prop_assert!((0.0..=1.0).contains(&g));
        if performance_similarity(&h, &s, &ds).unwrap() > 0.0 && performance_similarity(&h, &r, &ds).unwrap() > 0.0 {
            prop_assert!((g + swapped - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(similarity_ratio(&h, &s, &r, &relabeled(&ds, seed)).unwrap(), g);
        Ok(())
    });
    run("delta complement + relabeling", &|seed, n| {
        let ds = random_dataset(seed, n, false);
        let (h, s, r) = (random_model(seed ^ 1, MUL), random_model(seed ^ 2, MUL), random_model(seed ^ 3, MUL));
        let d = normalized_confusion_distance(&h, &s, &r, &ds).unwrap();
        let swapped = normalized_confusion_distance(&h, &r, &s, &ds).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        if confusion_distance(&h, &s, &ds).unwrap() > 0 && confusion_distance(&h, &r, &ds).unwrap() > 0 {
            prop_assert!((d + swapped - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(normalized_confusion_distance(&h, &s, &r, &relabeled(&ds, seed)).unwrap(), d);
        Ok(())
    });
    run("parameter distance complement", &|seed, _| {
        let (h, s, r) = (random_model(seed ^ 1, MUL), random_model(seed ^ 2, MUL), random_model(seed ^ 3, MUL));
        let p = normalized_param_distance(&h, &s, &r).unwrap();
        let q = normalized_param_distance(&h, &r, &s).unwrap();
        prop_assert!((p + q - 1.0).abs() < 1e-12);
        Ok(())
    });
    run("AUC under increasing maps", &|seed, n| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-12i32..12) as f64 / 4.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let base = roc_auc(&scores, &labels).unwrap();
        let a = rng.random_range(0.1..10.0);
        let b = rng.random_range(-5.0..5.0);
        for mapped in [
            scores.iter().map(|s| a * s + b).collect::<Vec<_>>(),
            scores.iter().map(|s| s.powi(3)).collect(),
            scores.iter().map(|s| s.exp()).collect(),
        ] {
            prop_assert_eq!(roc_auc(&mapped, &labels).unwrap(), base);
        }
        Ok(())
    });
    run("confusion triangle inequality", &|seed, n| {
        let ds = random_dataset(seed, n, false);
        let (a, b, c) = (random_model(seed ^ 5, MUL), random_model(seed ^ 6, MUL), random_model(seed ^ 7, MUL));
        let ab = confusion_distance(&a, &b, &ds).unwrap();
        let bc = confusion_distance(&b, &c, &ds).unwrap();
        let ac = confusion_distance(&a, &c, &ds).unwrap();
        prop_assert!(ac <= ab + bc);
        Ok(())
    });
    let failed: Vec<String> = results
        .iter()
        .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} properties x 200 cases hold", results.len())
        } else {
            failed.join("; ")
        },
    )
}

const SMALL_MULTINOMIAL: &str = "\
[data]
source = blobs
seed = 3
centers = -1 0.5; 1 -0.5; 0 1.5
spread = 0.8
n_per_class = 30
test_n_per_class = 20

[loss]
l2 = 0.01

[train]
lr = 0.2
epochs = 300
batch_size = 16
seed = 9

[fisher]
batch_size = 3

[removal]
target = class:1
fraction = 0.5
seed = 4

[sweep]
grid = 0 0.5 1 2

[baselines]
ga_lr = 0.05
scrub_noise = 0.01
scrub_seed = 8

[demo]
resolution = 41
";

const SMALL_BINARY: &str = "\
[data]
source = multi_attribute
seed = 5
features = 6
n = 120
test_n = 60
rates = 0.5 0.3 0.1

[loss]
l2 = 0.01

[train]
lr = 0.3
epochs = 200
batch_size = 120

[removal]
target = attribute:2

[sweep]
grid = 0 1 2
";

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ssse"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`ssse {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut checked = 0;
    let mut problems = Vec::new();
    for (name, text, commands) in [
        (
            "multinomial",
            SMALL_MULTINOMIAL,
            &["train", "fisher", "erase", "sweep", "demo-boundary", "compare-baselines"][..],
        ),
        ("binary", SMALL_BINARY, &["train", "fisher", "erase", "sweep", "compare-baselines"][..]),
    ] {
        let cfg = tmp.path().join(format!("{name}.conf"));
        std::fs::write(&cfg, text).unwrap();
        let mut runs = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("{name}-{rep}"));
            let (cfg_s, out_s) = (cfg.to_str().unwrap(), out.to_str().unwrap());
            for cmd in commands {
                if let Err(e) = run_cli(&[cmd, "--config", cfg_s, "--out", out_s]) {
                    problems.push(e);
                }
            }
            runs.push(snapshot(&out));
        }
        if runs[0].keys().ne(runs[1].keys()) {
            problems.push(format!("{name}: different file sets"));
        }
        for (file, bytes) in &runs[0] {
            checked += 1;
            if runs[1].get(file) != Some(bytes) {
                problems.push(format!("{name}/{file} differs between runs"));
            }
        }
    }
    outcome(
        problems.is_empty() && checked > 0,
        if problems.is_empty() {
            format!("{checked} output files byte-identical across reruns")
        } else {
            problems.join("; ")
        },
    )
}

type Check = fn() -> Outcome;

fn main() {
    let criteria: [(u32, &str, Check); 9] = [
        (1, "Sherman-Morrison inverse vs dense inversion", sherman_morrison_matches_dense),
        (2, "Hessian as a scaled empirical Fisher", curvature_matches_scaled_fisher),
        (3, "erasure update identities", ssse_identities),
        (4, "2D decision-boundary demo", boundary_demo),
        (5, "multinomial full-class removal", multinomial_class_removal),
        (6, "multi-attribute rare-attribute removal", multi_attribute_removal),
        (7, "MLP full-class removal, FIM batch 1 and 10", mlp_class_removal),
        (8, "metric invariants", metric_properties),
        (9, "CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {id} [{}] {name} ({:.1?}): {}",
            if result.pass { "PASS" } else { "FAIL" },
            start.elapsed(),
            result.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
