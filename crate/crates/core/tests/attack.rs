mod common;

use attrleak_core::attack::{
    build_attack_dataset, compute_attribution_set, mls, run_on_attributions, AttackConfig, AttackDataset, AttackModel,
    AttackModelSpec, AttackTraining, AttributionRows, AttributionSet, RocCurve,
};
use attrleak_core::data::{make_synthetic, split, NonmemberSource, SplitMode, SplitSpec};
use attrleak_core::explain::{ExplainerKind, ExplainerParams};
use attrleak_core::par::Execution;
use attrleak_core::rng::rng_from_seed;
use attrleak_core::zoo::{train_architecture, Architecture, TrainConfig};
use attrleak_core::Error;
use rand::Rng;

/// Every distinct score plus `+inf`, highest first, with counts of scores at
/// or above it.
fn enumerate_thresholds(m: &[f64], n: &[f64]) -> Vec<(f64, usize, usize)> {
    let mut ts: Vec<f64> = m.iter().chain(n).copied().collect();
    ts.push(f64::INFINITY);
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    ts.into_iter()
        .map(|t| {
            (
                t,
                m.iter().filter(|&&s| s >= t).count(),
                n.iter().filter(|&&s| s >= t).count(),
            )
        })
        .collect()
}

fn pairwise_auc(m: &[f64], n: &[f64]) -> f64 {
    let mut twice = 0usize;
    for a in m {
        for b in n {
            twice += if a > b {
                2
            } else if a == b {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * m.len() * n.len()) as f64
}

fn enumerated_mls(m: &[f64], n: &[f64], eps: f64) -> f64 {
    enumerate_thresholds(m, n)
        .into_iter()
        .filter(|&(_, _, fp)| fp as f64 / n.len() as f64 <= eps)
        .map(|(_, tp, _)| tp)
        .max()
        .unwrap() as f64
        / m.len() as f64
}

fn random_scores(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_from_seed(seed);
    let total = rng.gen_range(2..=200);
    let p = rng.gen_range(1..total);
    let levels = rng.gen_range(2..40);
    let mut draw = || (rng.gen_range(0..levels) as f64) / levels as f64;
    let m: Vec<f64> = (0..p).map(|_| draw()).collect();
    let n: Vec<f64> = (0..total - p).map(|_| draw()).collect();
    (m, n)
}

#[test]
fn roc_matches_threshold_enumeration() {
    for seed in 0..50 {
        let (m, n) = random_scores(seed);
        let roc = RocCurve::new(&m, &n).unwrap();
        let pts: Vec<(f64, usize, usize)> = roc.points.iter().map(|p| (p.threshold, p.tp, p.fp)).collect();
        assert_eq!(pts, enumerate_thresholds(&m, &n), "seed {seed}");
        assert_eq!(roc.auc(), pairwise_auc(&m, &n), "seed {seed}");
        let mut prev = 0.0;
        for eps in [0.0, 0.001, 0.01, 0.05, 0.1, 0.3, 0.5, 0.99] {
            let v = mls(&roc, eps).unwrap();
            assert_eq!(v, enumerated_mls(&m, &n, eps), "seed {seed} eps {eps}");
            assert!(v >= prev);
            prev = v;
        }
        let (f, t) = (roc.fpr(), roc.tpr());
        assert!(f.windows(2).all(|w| w[0] <= w[1]) && t.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!((f[0], t[0]), (0.0, 0.0));
        assert_eq!((*f.last().unwrap(), *t.last().unwrap()), (1.0, 1.0));
    }
}

#[test]
fn six_mixed_scores() {
    let m = [0.9, 0.4, 0.4];
    let n = [0.4, 0.2, 0.95];
    let roc = RocCurve::new(&m, &n).unwrap();
    assert_eq!(roc.points.len(), 5);
    assert_eq!(roc.auc(), pairwise_auc(&m, &n));
    assert_eq!(mls(&roc, 0.0).unwrap(), 0.0);
    assert_eq!(mls(&roc, 0.34).unwrap(), 1.0 / 3.0);
}

#[test]
fn one_false_positive_in_a_thousand() {
    let mut rng = rng_from_seed(11);
    let m: Vec<f64> = (0..500).map(|_| rng.gen::<f64>() + 0.3).collect();
    let n: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
    let roc = RocCurve::new(&m, &n).unwrap();
    let v = mls(&roc, 0.001).unwrap();
    assert_eq!(v, enumerated_mls(&m, &n, 0.001));
    let mut sorted = n.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let expected = m.iter().filter(|&&s| s >= sorted[0] || s > sorted[1]).count();
    assert_eq!(v, expected as f64 / 500.0);
}

#[test]
fn untrained_attack_is_calibrated() {
    let eps = 0.01;
    for r in 0..20u64 {
        let mut rng = rng_from_seed(100 + r);
        let mut rows = |k: usize| -> Vec<Vec<f64>> {
            (0..k)
                .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        };
        let (m, n) = (rows(1000), rows(1000));
        let model = AttackModel::untrained(8, 500 + r);
        let roc = RocCurve::new(&model.scores(&m).unwrap(), &model.scores(&n).unwrap()).unwrap();
        assert!(mls(&roc, eps).unwrap() <= 5.0 * eps, "resample {r}");
    }
}

fn rows(n: usize, d: usize, seed: u64, f: impl Fn(f64) -> f64) -> AttributionRows {
    let mut rng = rng_from_seed(seed);
    AttributionRows {
        rows: (0..n)
            .map(|_| (0..d).map(|_| f(rng.gen_range(0.0..1.0))).collect())
            .collect(),
        classes: vec![0; n],
        sources: (0..n).collect(),
    }
}

fn synthetic_set(sep: impl Fn(f64) -> f64 + Copy, n: usize) -> AttributionSet {
    AttributionSet {
        shape: vec![4],
        shadow_members: rows(n, 4, 1, sep),
        shadow_nonmembers: rows(n, 4, 2, |v| -sep(v)),
        target_members: rows(n, 4, 3, sep),
        target_nonmembers: rows(n, 4, 4, |v| -sep(v)),
    }
}

fn quick_config(k: usize) -> AttackConfig {
    AttackConfig {
        k_seeds: k,
        epsilon: 0.01,
        training: AttackTraining {
            epochs: 100,
            ..AttackTraining::default()
        },
        ..AttackConfig::default()
    }
}

#[test]
fn separable_attributions_are_perfectly_attacked() {
    let set = synthetic_set(|v| 0.1 + v, 40);
    let r = run_on_attributions(&set, &quick_config(3)).unwrap();
    for s in &r.seeds {
        assert_eq!(s.validation_accuracy, 1.0);
    }
    assert_eq!((r.auc, r.mls), (1.0, 1.0));
    assert_eq!(r.attack_input_dim, set.dim());
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let mut rng = rng_from_seed(9);
    let pool: Vec<Vec<f64>> = (0..400)
        .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let take = |range: std::ops::Range<usize>| AttributionRows {
        rows: pool[range.clone()].to_vec(),
        classes: vec![0; range.len()],
        sources: range.collect(),
    };
    let set = AttributionSet {
        shape: vec![6],
        shadow_members: take(0..100),
        shadow_nonmembers: take(100..200),
        target_members: take(200..300),
        target_nonmembers: take(300..400),
    };
    let r = run_on_attributions(&set, &quick_config(10)).unwrap();
    let mean = r.seeds.iter().map(|s| s.validation_accuracy).sum::<f64>() / r.seeds.len() as f64;
    assert!((mean - 0.5).abs() <= 0.1, "mean validation accuracy {mean}");
}

#[test]
fn training_is_seed_deterministic() {
    let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i % 3) as f64]).collect();
    let y: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
    for spec in [AttackModelSpec::Logistic, AttackModelSpec::Mlp { hidden: 4 }] {
        let a = AttackModel::train(&x, &y, spec, &AttackTraining::default(), 5).unwrap();
        let b = AttackModel::train(&x, &y, spec, &AttackTraining::default(), 5).unwrap();
        assert_eq!(a, b);
        assert!(a.scores(&x).unwrap().iter().all(|s| (0.0..=1.0).contains(s)));
    }
    assert!(matches!(
        AttackModel::train(
            &x,
            &[true; 20],
            AttackModelSpec::Logistic,
            &AttackTraining::default(),
            0
        ),
        Err(Error::SingleClass)
    ));
}

#[test]
fn selection_uses_validation_only_and_flags_better_seeds() {
    let set = synthetic_set(|v| v - 0.35, 60);
    let r = run_on_attributions(&set, &quick_config(6)).unwrap();
    let best = &r.seeds[r.best_seed];
    for s in &r.seeds {
        assert!(
            (s.validation_tpr_at_eps, s.validation_accuracy) <= (best.validation_tpr_at_eps, best.validation_accuracy)
        );
        assert_eq!(r.sanity_flagged_seeds.contains(&s.seed_index), s.mls > best.mls);
    }
    let single = run_on_attributions(&set, &quick_config(1)).unwrap();
    assert_eq!(single.best_seed, 0);
    assert_eq!(single.seeds.len(), 1);
    assert_eq!(single.mls, single.seeds[0].mls);
}

#[test]
fn parallel_and_sequential_reports_agree() {
    let set = synthetic_set(|v| v - 0.3, 30);
    let par = run_on_attributions(
        &set,
        &AttackConfig {
            execution: Execution::Parallel,
            ..quick_config(4)
        },
    )
    .unwrap();
    let seq = run_on_attributions(
        &set,
        &AttackConfig {
            execution: Execution::Sequential,
            ..quick_config(4)
        },
    )
    .unwrap();
    assert_eq!(par, seq);
}

#[test]
fn empty_eval_set_is_rejected() {
    let mut set = synthetic_set(|v| v, 10);
    set.target_nonmembers = AttributionRows::default();
    assert!(matches!(
        run_on_attributions(&set, &quick_config(1)),
        Err(Error::Empty(_))
    ));
}

#[test]
fn attack_dataset_from_shadow_model() {
    let ds = make_synthetic(3, 5, 600, 3.0, 1).unwrap();
    let spec = SplitSpec {
        target_train: 100,
        target_test: 100,
        shadow_train: 100,
        shadow_test: 100,
        mode: SplitMode::Disjoint,
        nonmember_source: NonmemberSource::HoldoutInDistribution,
        seed: 2,
    };
    let bundle = split(&ds, &spec).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let shadow = train_architecture(Architecture::MlpB, &bundle.shadow_train, &bundle.shadow_test, &cfg).unwrap();
    let attack = AttackConfig::default();
    let params = ExplainerParams::new();
    let ads = build_attack_dataset(
        &shadow.network,
        "shadow",
        ExplainerKind::Saliency,
        &params,
        &bundle,
        &[],
        &attack,
    )
    .unwrap();
    assert_eq!(ads.rows.len(), 200);
    assert_eq!(ads.labels.iter().filter(|&&y| y).count(), 100);
    assert!(ads.rows.iter().all(|r| r.len() == 5));
    let back: AttackDataset = serde_json::from_str(&serde_json::to_string(&ads).unwrap()).unwrap();
    assert_eq!(back.provenance, ads.provenance);

    let set = compute_attribution_set(
        &shadow.network,
        &shadow.network,
        ExplainerKind::Saliency,
        &params,
        &bundle,
        &[],
        &attack,
    )
    .unwrap();
    assert_eq!(set.shadow_members.rows, ads.rows[..100].to_vec());
    assert_eq!(set.dim(), 5);
    let gradcam = compute_attribution_set(
        &shadow.network,
        &shadow.network,
        ExplainerKind::Gradcam,
        &params,
        &bundle,
        &[],
        &attack,
    );
    assert!(matches!(gradcam, Err(Error::UnsupportedArchitecture(_))));
}
