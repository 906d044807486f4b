mod common;

use attrleak_core::explain::anchors::{anchors, AnchorConfig};
use attrleak_core::explain::gradcam::{gradcam, CamVariant, Interpolation};
use attrleak_core::explain::gradient::{
    deeplift, grad_explain, integrated_gradients, noise_aggregate_explain, IgMethod, NoiseAggregator,
};
use attrleak_core::explain::perturb::{
    kernel_shap, kernel_shap_segments, lime, lime_distance, lime_segments, occlusion, segment_grid, LimeConfig,
    Segmentation,
};
use attrleak_core::explain::protodash::{protodash, ProtoKernel};
use attrleak_core::explain::{explain, ExplainContext, ExplainerKind, ExplainerParams, ParamValue};
use attrleak_core::nn::{LayerSpec, Network, ReluRule, Target};
use attrleak_core::{Error, Tensor};
use common::*;

const W_X: [f64; 3] = [2.0, -2.0, 2.0];

#[test]
fn saliency_and_input_x_gradient_on_linear_model() {
    let m = linear_model();
    let t = Target::logit(0);
    let s = grad_explain(&m, &linear_x(), t, ReluRule::Standard, false, true).unwrap();
    assert_eq!(s.data(), &[1.0, 2.0, 0.5]);
    let ixg = grad_explain(&m, &linear_x(), t, ReluRule::Standard, true, false).unwrap();
    assert_eq!(ixg.data(), &W_X);
}

#[test]
fn deconv_guided_raw_agree_without_relu() {
    let m = Network::from_parts(
        &[3],
        vec![
            LayerSpec::Dense { input: 3, output: 2 },
            LayerSpec::Dense { input: 2, output: 2 },
        ],
        vec![vec![0.3, -0.2, 0.5, 1.0, 0.1, -0.7], vec![1.0, -1.0, 0.5, 2.0]],
        vec![vec![0.1, 0.0], vec![0.0, 0.3]],
    )
    .unwrap();
    let x = linear_x();
    let raw = grad_explain(&m, &x, Target::logit(1), ReluRule::Standard, false, false).unwrap();
    for rule in [ReluRule::Deconv, ReluRule::Guided] {
        assert_eq!(grad_explain(&m, &x, Target::logit(1), rule, false, false).unwrap(), raw);
    }
}

#[test]
fn linear_concordance_all_methods() {
    let m = linear_model();
    let x = linear_x();
    let t = Target::logit(0);
    let zero = Tensor::zeros(&[3]);
    for method in [
        IgMethod::Gausslegendre,
        IgMethod::RiemannLeft,
        IgMethod::RiemannRight,
        IgMethod::RiemannMiddle,
        IgMethod::RiemannTrapezoid,
    ] {
        let ig = integrated_gradients(&m, &x, t, &zero, 1, method, true).unwrap();
        assert_close(ig.data(), &W_X, 1e-12);
        assert!((ig.sum() - 2.0).abs() < 1e-12);
    }
    assert_close(deeplift(&m, &x, &zero, t).unwrap().data(), &W_X, 1e-12);
    let seg = Segmentation::identity(&[3]);
    assert_close(kernel_shap(&m, &x, t, &seg, 0, 0.0, 0).unwrap().data(), &W_X, 1e-9);
    assert_close(occlusion(&m, &x, t, &[1], &[1], 0.0).unwrap().data(), &W_X, 1e-12);
}

#[test]
fn smoothgrad_vargrad_degenerate_cases() {
    let net = mlp(4, &[8], 3, 2);
    let x = random_input(&[4], 1);
    let t = Target::logit(1);
    let sal = grad_explain(&net, &x, t, ReluRule::Standard, false, true).unwrap();
    let sg = noise_aggregate_explain(&net, &x, t, 1, 0.0, NoiseAggregator::MeanAbsGrad, None, 9).unwrap();
    assert_eq!(sg, sal);
    let vg = noise_aggregate_explain(&net, &x, t, 7, 0.0, NoiseAggregator::VarianceGrad, None, 9).unwrap();
    assert!(vg.data().iter().all(|&v| v == 0.0));
    let lin = noise_aggregate_explain(
        &linear_model(),
        &linear_x(),
        Target::logit(0),
        6,
        2.0,
        NoiseAggregator::MeanAbsGrad,
        None,
        3,
    )
    .unwrap();
    assert_close(lin.data(), &[1.0, 2.0, 0.5], 1e-15);
    assert!(matches!(
        noise_aggregate_explain(&net, &x, t, 0, 1.0, NoiseAggregator::MeanAbsGrad, None, 0),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn ig_completeness_trapezoid_512() {
    for seed in 0..5 {
        let net = mlp(6, &[16], 3, seed);
        let x = random_input(&[6], seed);
        let base = Tensor::zeros(&[6]);
        let t = Target::logit(2);
        let ig = integrated_gradients(&net, &x, t, &base, 512, IgMethod::RiemannTrapezoid, true).unwrap();
        let delta = net.score(&x, t).unwrap() - net.score(&base, t).unwrap();
        assert!((ig.sum() - delta).abs() < 1e-3, "seed {seed}: {} vs {delta}", ig.sum());
    }
}

#[test]
fn ig_left_right_gap_shrinks() {
    let net = mlp(5, &[12, 8], 2, 11);
    let x = random_input(&[5], 3);
    let base = Tensor::zeros(&[5]);
    let t = Target::logit(0);
    let gap = |n| {
        let l = integrated_gradients(&net, &x, t, &base, n, IgMethod::RiemannLeft, true).unwrap();
        let r = integrated_gradients(&net, &x, t, &base, n, IgMethod::RiemannRight, true).unwrap();
        l.sub(&r).unwrap().max_abs()
    };
    assert!(gap(256) < gap(16));
}

#[test]
fn ig_without_multiply_returns_average_gradient() {
    let m = linear_model();
    let ig = integrated_gradients(
        &m,
        &linear_x(),
        Target::logit(0),
        &Tensor::zeros(&[3]),
        4,
        IgMethod::RiemannMiddle,
        false,
    )
    .unwrap();
    assert_close(ig.data(), &[1.0, -2.0, 0.5], 1e-12);
}

#[test]
fn deeplift_summation_to_delta_and_zero_delta() {
    for seed in 0..5 {
        let net = mlp(6, &[10, 6], 3, seed + 100);
        let x = random_input(&[6], seed);
        let base = random_input(&[6], seed + 50);
        let t = Target::logit(1);
        let dl = deeplift(&net, &x, &base, t).unwrap();
        let delta = net.score(&x, t).unwrap() - net.score(&base, t).unwrap();
        assert!((dl.sum() - delta).abs() < 1e-9);
        let same = deeplift(&net, &x, &x, t).unwrap();
        assert!(same.data().iter().all(|&v| v == 0.0));
    }
}

/// Shapley values by direct enumeration of
/// `sum_S |S|!(k-|S|-1)!/k! * (v(S+i) - v(S))`.
fn shapley_oracle(net: &Network, x: &Tensor, t: Target, seg: &Segmentation) -> Vec<f64> {
    let k = seg.count();
    let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
    let value = |mask: u32| {
        let keep: Vec<bool> = (0..k).map(|j| mask >> j & 1 == 1).collect();
        net.score(&seg.apply(x, &keep, 0.0), t).unwrap()
    };
    (0..k)
        .map(|i| {
            let mut phi = 0.0;
            for s in 0u32..1 << k {
                if s >> i & 1 == 1 {
                    continue;
                }
                let size = s.count_ones() as usize;
                let w = fact(size) * fact(k - size - 1) / fact(k);
                phi += w * (value(s | 1 << i) - value(s));
            }
            phi
        })
        .collect()
}

#[test]
fn exact_shap_matches_enumeration_and_is_efficient() {
    for (k, seed) in [(2, 1u64), (3, 2), (4, 3), (5, 4)] {
        let net = mlp(10, &[8], 2, seed);
        let x = random_input(&[10], seed);
        let t = Target::logit(1);
        let seg = segment_grid(&[10], k, 20.0).unwrap();
        let phi = kernel_shap_segments(&net, &x, t, &seg, 0, 0.0, 0).unwrap();
        assert_close(&phi, &shapley_oracle(&net, &x, t, &seg), 1e-9);
        let delta = net.score(&x, t).unwrap() - net.score(&Tensor::zeros(&[10]), t).unwrap();
        assert!((phi.iter().sum::<f64>() - delta).abs() < 1e-9);
    }
}

#[test]
fn sampled_shap_is_efficient_and_needs_samples() {
    let net = mlp(20, &[8], 2, 5);
    let x = random_input(&[20], 5);
    let t = Target::logit(0);
    let seg = Segmentation::identity(&[20]);
    let phi = kernel_shap_segments(&net, &x, t, &seg, 500, 0.0, 1).unwrap();
    let delta = net.score(&x, t).unwrap() - net.score(&Tensor::zeros(&[20]), t).unwrap();
    assert!((phi.iter().sum::<f64>() - delta).abs() < 1e-9);
    assert_eq!(phi, kernel_shap_segments(&net, &x, t, &seg, 500, 0.0, 1).unwrap());
    assert!(matches!(
        kernel_shap_segments(&net, &x, t, &seg, 10, 0.0, 1),
        Err(Error::TooFewSamples { required: 22, .. })
    ));
}

/// Weighted least squares with intercept by Gaussian elimination.
fn wls_oracle(rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for ((r, yi), wi) in rows.iter().zip(y).zip(w) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += wi * r[i] * r[j];
            }
            a[i][p] += wi * r[i] * yi;
        }
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = a[r][c] / a[c][c];
                let pivot = a[c].clone();
                for (dst, src) in a[r][c..=p].iter_mut().zip(&pivot[c..=p]) {
                    *dst -= f * src;
                }
            }
        }
    }
    (0..p).map(|i| a[i][p] / a[i][i]).collect()
}

#[test]
fn lime_exhaustive_linear_matches_hand_solve() {
    let m = linear_model();
    let x = linear_x();
    let t = Target::logit(0);
    let seg = Segmentation::identity(&[3]);
    let cfg = LimeConfig {
        ridge_lambda: 0.0,
        exhaustive: true,
        ..Default::default()
    };
    let coef = lime_segments(&m, &x, t, &seg, &cfg, 0).unwrap();
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for mask in 0u32..8 {
        let z: Vec<bool> = (0..3).map(|j| mask >> j & 1 == 1).collect();
        rows.push(
            std::iter::once(1.0)
                .chain(z.iter().map(|&b| f64::from(u8::from(b))))
                .collect::<Vec<_>>(),
        );
        ys.push(m.score(&seg.apply(&x, &z, 0.0), t).unwrap());
        let d = lime_distance(&z);
        ws.push((-d * d / (0.25f64 * 0.25)).exp());
    }
    let oracle = wls_oracle(&rows, &ys, &ws);
    assert_close(&coef, &oracle[1..], 1e-9);
    assert_close(&coef, &W_X, 1e-9);
}

#[test]
fn lime_constant_model_and_determinism() {
    let zero = Network::from_parts(
        &[4],
        vec![LayerSpec::Dense { input: 4, output: 2 }],
        vec![vec![0.0; 8]],
        vec![vec![0.5, -0.5]],
    )
    .unwrap();
    let x = random_input(&[4], 0);
    let seg = Segmentation::identity(&[4]);
    let cfg = LimeConfig {
        n_samples: 200,
        ..Default::default()
    };
    let c = lime(&zero, &x, Target::logit(0), &seg, &cfg, 4).unwrap();
    assert!(c.data().iter().all(|v| v.abs() < 1e-9));
    let net = mlp(4, &[6], 2, 1);
    let a = lime(&net, &x, Target::logit(0), &seg, &cfg, 4).unwrap();
    assert_eq!(a, lime(&net, &x, Target::logit(0), &seg, &cfg, 4).unwrap());
    let few = LimeConfig {
        n_samples: 5,
        ..Default::default()
    };
    assert!(lime(&net, &x, Target::logit(0), &seg, &few, 4).is_err());
}

#[test]
fn occlusion_window_cases() {
    let m = linear_model();
    let x = linear_x();
    let t = Target::logit(0);
    let whole = occlusion(&m, &x, t, &[3], &[1], 0.0).unwrap();
    assert_close(whole.data(), &[2.0; 3], 1e-12);
    // windows {0,1} and {1,2}: drops are 2-2=0 and -2+2=0; coordinate 1 averages both
    let two = occlusion(&m, &x, t, &[2], &[1], 0.0).unwrap();
    let w01 = 2.0 + -2.0;
    let w12 = -2.0 + 2.0;
    assert_close(two.data(), &[w01, (w01 + w12) / 2.0, w12], 1e-12);
    assert!(occlusion(&m, &x, t, &[4], &[1], 0.0).is_err());
}

#[test]
fn gradcam_hand_computed() {
    // conv 1->1 with a 2x2 all-ones kernel on a 3x3 input, then dense to one logit
    let net = Network::from_parts(
        &[1, 3, 3],
        vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 1,
                kernel: 2,
                stride: 1,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense { input: 4, output: 1 },
        ],
        vec![vec![1.0; 4], vec![], vec![1.0, 2.0, 3.0, 4.0]],
        vec![vec![0.0], vec![], vec![0.0]],
    )
    .unwrap();
    let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
    // A = [[12, 16], [24, 28]], dA = [[1, 2], [3, 4]], mean grad 2.5
    let a = [12.0, 16.0, 24.0, 28.0];
    let cam = gradcam(
        &net,
        &x,
        Target::logit(0),
        None,
        CamVariant::Gradcam,
        Interpolation::Nearest,
        false,
    )
    .unwrap();
    assert_eq!(cam.shape(), &[3, 3]);
    let expected: Vec<f64> = [0, 0, 1, 0, 0, 1, 2, 2, 3].iter().map(|&i| 2.5 * a[i]).collect();
    assert_close(cam.data(), &expected, 1e-12);

    let pp = gradcam(
        &net,
        &x,
        Target::logit(0),
        None,
        CamVariant::GradcamPp,
        Interpolation::Bilinear,
        false,
    )
    .unwrap();
    assert!(pp.data().iter().all(|&v| v >= 0.0));

    let mlp = linear_model();
    assert!(matches!(
        gradcam(
            &mlp,
            &linear_x(),
            Target::logit(0),
            None,
            CamVariant::Gradcam,
            Interpolation::Nearest,
            false
        ),
        Err(Error::UnsupportedArchitecture(_))
    ));
}

#[test]
fn gradcam_nonnegative_on_random_cnn() {
    use attrleak_core::zoo::Architecture;
    let layers = Architecture::TinyCnn.layers(&[2, 8, 8], 3).unwrap();
    for seed in 0..5 {
        let net = Network::init(&[2, 8, 8], layers.clone(), &mut attrleak_core::rng::rng_from_seed(seed)).unwrap();
        let x = random_input(&[2, 8, 8], seed);
        for v in [CamVariant::Gradcam, CamVariant::GradcamPp] {
            for interp in [Interpolation::Nearest, Interpolation::Bilinear] {
                let m = gradcam(&net, &x, Target::logit(1), None, v, interp, false).unwrap();
                assert_eq!(m.shape(), &[8, 8]);
                assert!(m.data().iter().all(|&x| x >= 0.0));
            }
        }
        let at_input = gradcam(
            &net,
            &x,
            Target::logit(0),
            None,
            CamVariant::Gradcam,
            Interpolation::Nearest,
            true,
        )
        .unwrap();
        assert_eq!(at_input.shape(), &[8, 8]);
    }
}

#[test]
fn gradcam_zero_gradients_give_zero_map() {
    let layers = attrleak_core::zoo::Architecture::TinyCnn.layers(&[1, 8, 8], 2).unwrap();
    let net = Network::init(&[1, 8, 8], layers, &mut attrleak_core::rng::rng_from_seed(0)).unwrap();
    let mut w = net.weights().to_vec();
    let last = w.len() - 1;
    w[last].iter_mut().for_each(|v| *v = 0.0);
    let net = Network::from_parts(&[1, 8, 8], net.layers().to_vec(), w, net.biases().to_vec()).unwrap();
    let m = gradcam(
        &net,
        &random_input(&[1, 8, 8], 1),
        Target::logit(0),
        None,
        CamVariant::GradcamPp,
        Interpolation::Nearest,
        false,
    )
    .unwrap();
    assert!(m.data().iter().all(|&v| v == 0.0));
}

#[test]
fn anchors_constant_model_and_zero_threshold() {
    let constant = Network::from_parts(
        &[4],
        vec![LayerSpec::Dense { input: 4, output: 2 }],
        vec![vec![0.0; 8]],
        vec![vec![1.0, 0.0]],
    )
    .unwrap();
    let seg = Segmentation::identity(&[4]);
    let x = Tensor::filled(&[4], 1.0);
    let r = anchors(&constant, &x, &seg, &AnchorConfig::default(), 1).unwrap();
    assert!(r.anchor.is_empty() && r.found);
    assert_eq!((r.precision, r.coverage), (1.0, 1.0));
    let net = mlp(4, &[6], 2, 3);
    let cfg = AnchorConfig {
        threshold: 0.0,
        ..Default::default()
    };
    assert!(anchors(&net, &x, &seg, &cfg, 1).unwrap().anchor.is_empty());
}

#[test]
fn anchors_indicator_model_picks_segment_zero() {
    // class 1 iff coordinate 0 keeps its value 1
    let net = Network::from_parts(
        &[4],
        vec![LayerSpec::Dense { input: 4, output: 2 }],
        vec![vec![0.0, 0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0]],
        vec![vec![0.0, -5.0]],
    )
    .unwrap();
    let seg = Segmentation::identity(&[4]);
    let x = Tensor::filled(&[4], 1.0);
    // exact precision of each single-segment anchor: P(pred == 1 | segment j kept)
    let exact: Vec<f64> = (0..4)
        .map(|j| {
            let mut hits = 0.0;
            for mask in 0u32..16 {
                let keep: Vec<bool> = (0..4).map(|i| i == j || mask >> i & 1 == 1).collect();
                if net.predict(&seg.apply(&x, &keep, 0.0)).unwrap() == 1 {
                    hits += 1.0;
                }
            }
            hits / 16.0
        })
        .collect();
    assert_eq!(exact, vec![1.0, 0.5, 0.5, 0.5]);
    let r = anchors(&net, &x, &seg, &AnchorConfig::default(), 7).unwrap();
    assert_eq!(r.anchor, vec![0]);
    assert!(r.found);
    assert_eq!(r.mask.data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn protodash_picks_exact_mean_first() {
    let targets = vec![vec![1.0, 2.0, 0.0], vec![3.0, 0.0, 1.0], vec![2.0, 1.0, 2.0]];
    let mean = vec![2.0, 1.0, 1.0];
    let cands = vec![
        vec![0.0, 3.0, 0.0],
        vec![1.0, 1.0, -1.0],
        mean.clone(),
        vec![-2.0, 0.0, 4.0],
        vec![0.5, 0.5, 0.5],
    ];
    let r = protodash(&targets, &cands, 3, ProtoKernel::Linear).unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let first_scores: Vec<f64> = cands
        .iter()
        .map(|c| {
            let m = targets.iter().map(|t| dot(c, t)).sum::<f64>() / 3.0;
            m.max(0.0).powi(2) / (2.0 * dot(c, c))
        })
        .collect();
    let best = (0..cands.len())
        .max_by(|&a, &b| first_scores[a].total_cmp(&first_scores[b]))
        .unwrap();
    assert_eq!(best, 2);
    assert_eq!(r.prototypes[0], 2);
    assert!(r.weights.iter().all(|&w| w >= 0.0));
    assert!(protodash(&targets, &cands, 0, ProtoKernel::Linear).is_err());
    assert!(protodash(&targets, &[], 2, ProtoKernel::Linear).is_err());
}

#[test]
fn dispatcher_runs_all_methods_on_tiny_cnn() {
    use attrleak_core::zoo::Architecture;
    let layers = Architecture::TinyCnn.layers(&[1, 8, 8], 3).unwrap();
    let net = Network::init(&[1, 8, 8], layers, &mut attrleak_core::rng::rng_from_seed(4)).unwrap();
    let pool: Vec<Tensor> = (0..40).map(|i| random_input(&[1, 8, 8], 100 + i)).collect();
    let ctx = ExplainContext::new(&net).with_reference(&pool);
    let x = random_input(&[1, 8, 8], 0);
    for kind in ExplainerKind::ALL {
        let mut params = ExplainerParams::new();
        if kind == ExplainerKind::Anchors {
            params.set("coverage_samples", ParamValue::Int(500));
        }
        if matches!(kind, ExplainerKind::KernelShap | ExplainerKind::Lime) {
            params.set("n_samples", ParamValue::Int(200));
        }
        let a = explain(&ctx, kind, &params, &x, 1, 3).unwrap();
        let b = explain(&ctx, kind, &params, &x, 1, 3).unwrap();
        assert_eq!(a.values, b.values, "{kind} not deterministic");
        assert!(a.wall_time_seconds >= 0.0);
        match kind {
            ExplainerKind::Gradcam | ExplainerKind::GradcamPp => assert_eq!(a.values.shape(), &[8, 8]),
            ExplainerKind::Protodash => assert_eq!(a.values.shape(), &[32]),
            _ => assert_eq!(a.values.shape(), &[1, 8, 8]),
        }
    }
}

#[test]
fn dispatcher_rejects_gradcam_on_mlp() {
    let net = mlp(4, &[4], 2, 0);
    let ctx = ExplainContext::new(&net);
    let x = random_input(&[4], 0);
    assert!(matches!(
        explain(&ctx, ExplainerKind::Gradcam, &ExplainerParams::new(), &x, 0, 0),
        Err(Error::UnsupportedArchitecture(_))
    ));
    assert!(explain(&ctx, ExplainerKind::Protodash, &ExplainerParams::new(), &x, 0, 0).is_err());
}
