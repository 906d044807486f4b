mod common;

use attrleak_core::explain::{ExplainContext, ExplainerKind, ExplainerParams};
use attrleak_core::par::Execution;
use attrleak_core::utility::{dataset_sensitivity, sensitivity, SensitivityEstimator};
use attrleak_core::Tensor;
use common::*;

const SAL: ExplainerKind = ExplainerKind::Saliency;

#[test]
fn linear_saliency_is_insensitive() {
    let m = linear_model();
    let ctx = ExplainContext::new(&m);
    for r in [0.01, 1.0, 50.0] {
        let s = sensitivity(
            &ctx,
            SAL,
            &ExplainerParams::new(),
            &linear_x(),
            0,
            r,
            SensitivityEstimator::default(),
            3,
        )
        .unwrap();
        assert_eq!(s.value, 0.0);
    }
}

#[test]
fn zero_radius_is_zero() {
    let m = mlp(4, &[8], 3, 1);
    let ctx = ExplainContext::new(&m);
    let s = sensitivity(
        &ctx,
        SAL,
        &ExplainerParams::new(),
        &random_input(&[4], 2),
        1,
        0.0,
        SensitivityEstimator::default(),
        0,
    )
    .unwrap();
    assert_eq!(s.value, 0.0);
}

#[test]
fn dense_grid_bounds_monte_carlo() {
    let m = mlp(2, &[6, 6], 2, 4);
    let ctx = ExplainContext::new(&m);
    let p = ExplainerParams::new();
    for seed in 0..3 {
        let x = random_input(&[2], 10 + seed);
        let grid = sensitivity(
            &ctx,
            SAL,
            &p,
            &x,
            0,
            0.5,
            SensitivityEstimator::Grid { points: 401 },
            seed,
        )
        .unwrap();
        let mc = sensitivity(
            &ctx,
            SAL,
            &p,
            &x,
            0,
            0.5,
            SensitivityEstimator::MonteCarlo { k: 4096 },
            seed,
        )
        .unwrap();
        assert!(grid.value >= mc.value - 1e-9, "grid {} < mc {}", grid.value, mc.value);
        assert!(mc.value > 0.0);
    }
}

#[test]
fn nested_estimator_is_monotone_in_radius() {
    let m = mlp(5, &[16], 3, 8);
    let ctx = ExplainContext::new(&m);
    let x = random_input(&[5], 3);
    let est = SensitivityEstimator::Nested {
        samples: 200,
        max_radius: 2.0,
    };
    let mut prev = 0.0;
    for r in [0.05, 0.1, 0.3, 0.6, 1.0, 2.0] {
        let v = sensitivity(&ctx, SAL, &ExplainerParams::new(), &x, 2, r, est, 17)
            .unwrap()
            .value;
        assert!(v >= prev, "S({r}) = {v} < {prev}");
        prev = v;
    }
    assert!(prev > 0.0);
}

#[test]
fn stochastic_explainer_uses_fixed_internal_seed() {
    let m = linear_model();
    let ctx = ExplainContext::new(&m);
    let p = ExplainerParams::defaults(ExplainerKind::Smoothgrad);
    let s = sensitivity(
        &ctx,
        ExplainerKind::Smoothgrad,
        &p,
        &linear_x(),
        0,
        0.5,
        SensitivityEstimator::default(),
        1,
    )
    .unwrap();
    assert_eq!(s.value, 0.0);
}

#[test]
fn dataset_mean_and_order_invariance() {
    let m = mlp(3, &[10], 2, 6);
    let ctx = ExplainContext::new(&m);
    let p = ExplainerParams::new();
    let est = SensitivityEstimator::MonteCarlo { k: 32 };
    let xs: Vec<Tensor> = (0..5).map(|i| random_input(&[3], 40 + i)).collect();
    let cls = vec![0, 1, 0, 1, 1];
    let single = dataset_sensitivity(&ctx, SAL, &p, &xs[..1], &cls[..1], 0.4, est, 9, Execution::Sequential).unwrap();
    let direct = sensitivity(&ctx, SAL, &p, &xs[0], cls[0], 0.4, est, 9).unwrap();
    assert_eq!(single.mean, direct.value);

    let two = dataset_sensitivity(&ctx, SAL, &p, &xs[..2], &cls[..2], 0.4, est, 9, Execution::Sequential).unwrap();
    let b = sensitivity(&ctx, SAL, &p, &xs[1], cls[1], 0.4, est, 9).unwrap().value;
    assert_close(&[two.mean], &[(direct.value + b) / 2.0], 1e-15);

    let all = dataset_sensitivity(&ctx, SAL, &p, &xs, &cls, 0.4, est, 9, Execution::Parallel).unwrap();
    let order = [3, 0, 4, 2, 1];
    let xs2: Vec<Tensor> = order.iter().map(|&i| xs[i].clone()).collect();
    let cls2: Vec<usize> = order.iter().map(|&i| cls[i]).collect();
    let permuted = dataset_sensitivity(&ctx, SAL, &p, &xs2, &cls2, 0.4, est, 9, Execution::Sequential).unwrap();
    assert_eq!(all.mean, permuted.mean);
    assert!(all.per_sample.iter().all(|s| s.value >= 0.0));

    let again = dataset_sensitivity(&ctx, SAL, &p, &xs, &cls, 0.4, est, 9, Execution::Sequential).unwrap();
    assert_eq!(all, again);
}

#[test]
fn outputs_written() {
    let m = mlp(3, &[4], 2, 1);
    let ctx = ExplainContext::new(&m);
    let xs = vec![random_input(&[3], 1), random_input(&[3], 2)];
    let d = dataset_sensitivity(
        &ctx,
        SAL,
        &ExplainerParams::new(),
        &xs,
        &[0, 1],
        0.2,
        SensitivityEstimator::default(),
        0,
        Execution::Sequential,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    d.write_csv(dir.path().join("s.csv")).unwrap();
    d.write_json(dir.path().join("s.json")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("sample,value"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(json["samples"], 2);
}
