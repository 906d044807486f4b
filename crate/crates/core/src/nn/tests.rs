use rand::Rng as _;

use super::*;
use crate::rng::rng_from_seed;

fn linear_model() -> Network {
    Network::from_parts(
        &[3],
        vec![LayerSpec::Dense { input: 3, output: 1 }],
        vec![vec![1.0, -2.0, 0.5]],
        vec![vec![0.0]],
    )
    .unwrap()
}

fn mlp(seed: u64, d: usize, h: usize, c: usize) -> Network {
    let mut rng = rng_from_seed(seed);
    Network::init(
        &[d],
        vec![
            LayerSpec::Dense { input: d, output: h },
            LayerSpec::Relu,
            LayerSpec::Dense { input: h, output: c },
        ],
        &mut rng,
    )
    .unwrap()
}

fn v(data: &[f64]) -> Tensor {
    Tensor::vector(data.to_vec()).unwrap()
}

fn kink_free_point(net: &Network, rng: &mut Rng, d: usize) -> Tensor {
    loop {
        let x = v(&(0..d).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>());
        let (_, trace) = net.forward(&x).unwrap();
        let ok = net
            .layers()
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Relu))
            .all(|(i, _)| trace.inputs[i].data().iter().all(|p| p.abs() > 1e-3));
        if ok {
            return x;
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[test]
fn linear_forward() {
    let (z, trace) = linear_model().forward(&v(&[2.0, 1.0, 4.0])).unwrap();
    assert_eq!(z.data(), &[2.0]);
    assert_eq!(trace.inputs.len(), 1);
}

#[test]
fn zero_input_bias_free_gives_zero_preactivations() {
    let mut net = mlp(3, 4, 5, 2);
    for b in net.params_mut().1.iter_mut() {
        b.iter_mut().for_each(|v| *v = 0.0);
    }
    let (_, trace) = net.forward(&Tensor::zeros(&[4])).unwrap();
    assert!(trace.outputs[0].data().iter().all(|&p| p == 0.0));
}

#[test]
fn forward_matches_straight_line_oracle() {
    let net = mlp(11, 3, 4, 2);
    let x = [0.3, -1.2, 0.7];
    let (w1, b1) = (&net.weights()[0], &net.biases()[0]);
    let (w2, b2) = (&net.weights()[2], &net.biases()[2]);
    let mut hidden = [0.0; 4];
    for o in 0..4 {
        let mut acc = b1[o];
        acc += w1[o * 3] * x[0];
        acc += w1[o * 3 + 1] * x[1];
        acc += w1[o * 3 + 2] * x[2];
        hidden[o] = if acc > 0.0 { acc } else { 0.0 };
    }
    let mut expect = [0.0; 2];
    for o in 0..2 {
        let mut acc = b2[o];
        for j in 0..4 {
            acc += w2[o * 4 + j] * hidden[j];
        }
        expect[o] = acc;
    }
    let z = net.logits(&v(&x)).unwrap();
    for (got, want) in z.data().iter().zip(expect) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn shape_mismatch_is_reported() {
    let err = linear_model().forward(&v(&[1.0, 2.0])).unwrap_err();
    assert!(matches!(err, Error::InputShape { .. }));
}

#[test]
fn linear_gradient_is_weight_row() {
    let net = linear_model();
    for rule in [ReluRule::Standard, ReluRule::Deconv, ReluRule::Guided] {
        let g = net
            .input_gradient(&v(&[5.0, -3.0, 0.1]), Target::logit(0), rule)
            .unwrap();
        assert_eq!(g.data(), &[1.0, -2.0, 0.5]);
    }
}

#[test]
fn class_out_of_range() {
    let err = linear_model()
        .input_gradient(&v(&[1.0, 1.0, 1.0]), Target::logit(1), ReluRule::Standard)
        .unwrap_err();
    assert!(matches!(err, Error::ClassOutOfRange { index: 1, classes: 1 }));
}

#[test]
fn rules_agree_without_relu() {
    let mut rng = rng_from_seed(5);
    let net = Network::init(
        &[4],
        vec![
            LayerSpec::Dense { input: 4, output: 6 },
            LayerSpec::Dense { input: 6, output: 3 },
        ],
        &mut rng,
    )
    .unwrap();
    let x = v(&[0.5, -1.0, 2.0, 0.25]);
    for c in 0..3 {
        let s = net.input_gradient(&x, Target::logit(c), ReluRule::Standard).unwrap();
        let d = net.input_gradient(&x, Target::logit(c), ReluRule::Deconv).unwrap();
        let g = net.input_gradient(&x, Target::logit(c), ReluRule::Guided).unwrap();
        assert_eq!(s, d);
        assert_eq!(s, g);
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let h = 1e-4;
    for seed in 0..5 {
        let net = mlp(100 + seed, 5, 8, 3);
        let mut rng = rng_from_seed(seed);
        let x = kink_free_point(&net, &mut rng, 5);
        for c in 0..3 {
            let g = net.input_gradient(&x, Target::logit(c), ReluRule::Standard).unwrap();
            for i in 0..5 {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let fd =
                    (net.score(&xp, Target::logit(c)).unwrap() - net.score(&xm, Target::logit(c)).unwrap()) / (2.0 * h);
                assert!(rel_err(g.data()[i], fd) < 1e-4, "seed {seed} class {c} coord {i}");
            }
        }
    }
}

#[test]
fn probability_gradient_matches_finite_differences() {
    let net = mlp(42, 4, 6, 3);
    let mut rng = rng_from_seed(9);
    let x = kink_free_point(&net, &mut rng, 4);
    let t = Target {
        class: 1,
        score: ScoreKind::Probability,
    };
    let g = net.input_gradient(&x, t, ReluRule::Standard).unwrap();
    let h = 1e-5;
    for i in 0..4 {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let fd = (net.score(&xp, t).unwrap() - net.score(&xm, t).unwrap()) / (2.0 * h);
        assert!((g.data()[i] - fd).abs() < 1e-7);
    }
}

#[test]
fn guided_equals_deconv_masked_by_forward_sign() {
    let net = mlp(8, 4, 7, 3);
    let x = v(&[0.4, -0.9, 1.3, 0.2]);
    let (z, trace) = net.forward(&x).unwrap();
    let seed = net.score_seed(&z, Target::logit(2));
    let deconv = net.backward(&trace, seed.clone(), ReluBackward::Rule(ReluRule::Deconv), None);
    let guided = net.backward(&trace, seed, ReluBackward::Rule(ReluRule::Guided), None);
    // index 1 is the ReLU layer; its input gradient is the rule output there
    let pre = trace.inputs[1].data();
    for j in 0..7 {
        let expect = deconv[1][j] * if pre[j] > 0.0 { 1.0 } else { 0.0 };
        assert_eq!(guided[1][j], expect);
    }
}

#[test]
fn param_gradient_matches_finite_differences_squared_error() {
    let mut rng = rng_from_seed(77);
    let net = Network::init(&[3], vec![LayerSpec::Dense { input: 3, output: 2 }], &mut rng).unwrap();
    let xs = [v(&[0.5, -1.0, 2.0]), v(&[1.5, 0.3, -0.7])];
    let batch: Vec<&Tensor> = xs.iter().collect();
    let labels = [0, 1];
    let (_, grads) = net.param_gradient(&batch, &labels, Loss::SquaredError).unwrap();
    let h = 1e-5;
    for k in 0..6 {
        let mut p = net.clone();
        p.params_mut().0[0][k] += h;
        let mut m = net.clone();
        m.params_mut().0[0][k] -= h;
        let fd = (p.loss(&batch, &labels, Loss::SquaredError).unwrap()
            - m.loss(&batch, &labels, Loss::SquaredError).unwrap())
            / (2.0 * h);
        assert!(rel_err(grads.weights[0][k], fd) < 1e-4);
    }
    for k in 0..2 {
        let mut p = net.clone();
        p.params_mut().1[0][k] += h;
        let mut m = net.clone();
        m.params_mut().1[0][k] -= h;
        let fd = (p.loss(&batch, &labels, Loss::SquaredError).unwrap()
            - m.loss(&batch, &labels, Loss::SquaredError).unwrap())
            / (2.0 * h);
        assert!(rel_err(grads.biases[0][k], fd) < 1e-4);
    }
}

fn tiny_cnn(seed: u64) -> Network {
    let mut rng = rng_from_seed(seed);
    Network::init(
        &[2, 6, 6],
        vec![
            LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 3,
                kernel: 3,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::AvgPool2d { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { input: 12, output: 2 },
        ],
        &mut rng,
    )
    .unwrap()
}

#[test]
fn conv_param_gradient_matches_finite_differences() {
    let net = tiny_cnn(3);
    let mut rng = rng_from_seed(4);
    let xs: Vec<Tensor> = (0..2)
        .map(|_| Tensor::new(vec![2, 6, 6], (0..72).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let batch: Vec<&Tensor> = xs.iter().collect();
    let labels = [1, 0];
    let (_, grads) = net.param_gradient(&batch, &labels, Loss::CrossEntropy).unwrap();
    let h = 1e-6;
    for k in [0usize, 7, 20, 53] {
        let mut p = net.clone();
        p.params_mut().0[0][k] += h;
        let mut m = net.clone();
        m.params_mut().0[0][k] -= h;
        let fd = (p.loss(&batch, &labels, Loss::CrossEntropy).unwrap()
            - m.loss(&batch, &labels, Loss::CrossEntropy).unwrap())
            / (2.0 * h);
        assert!((grads.weights[0][k] - fd).abs() < 1e-6, "weight {k}");
    }
}

#[test]
fn one_by_one_identity_conv_activation_is_input_channel() {
    let net = Network::from_parts(
        &[1, 2, 2],
        vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 1,
                kernel: 1,
                stride: 1,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense { input: 4, output: 1 },
        ],
        vec![vec![1.0], vec![], vec![1.0, 2.0, 3.0, 4.0]],
        vec![vec![0.0], vec![], vec![0.0]],
    )
    .unwrap();
    let x = Tensor::new(vec![1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let (a, g) = net.layer_activation_gradient(&x, Target::logit(0), 0, false).unwrap();
    assert_eq!(a.data(), x.data());
    assert_eq!(a.shape(), g.shape());
    assert_eq!(g.data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn non_conv_layer_rejected() {
    let err = tiny_cnn(1)
        .layer_activation_gradient(&Tensor::zeros(&[2, 6, 6]), Target::logit(0), 1, false)
        .unwrap_err();
    assert!(matches!(err, Error::UnsupportedLayer { index: 1 }));
}

#[test]
fn avgpool_gradient_is_uniform_over_window() {
    let net = Network::from_parts(
        &[1, 2, 2],
        vec![
            LayerSpec::AvgPool2d { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { input: 1, output: 1 },
        ],
        vec![vec![], vec![], vec![3.0]],
        vec![vec![], vec![], vec![0.0]],
    )
    .unwrap();
    let g = net
        .input_gradient(
            &Tensor::new(vec![1, 2, 2], vec![1.0, 5.0, -2.0, 0.0]).unwrap(),
            Target::logit(0),
            ReluRule::Standard,
        )
        .unwrap();
    assert_eq!(g.data(), &[0.75; 4]);
}

#[test]
fn gradients_are_deterministic() {
    let net = tiny_cnn(12);
    let x = Tensor::filled(&[2, 6, 6], 0.3);
    for rule in [ReluRule::Standard, ReluRule::Deconv, ReluRule::Guided] {
        let a = net.input_gradient(&x, Target::logit(1), rule).unwrap();
        let b = net.input_gradient(&x, Target::logit(1), rule).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn rescale_multipliers_sum_to_delta() {
    let net = mlp(21, 6, 10, 3);
    let x = v(&[0.3, -0.5, 1.1, 0.9, -1.4, 0.2]);
    let base = Tensor::zeros(&[6]);
    let m = net.rescale_multipliers(&x, &base, Target::logit(2)).unwrap();
    let contrib: f64 = m.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
    let delta = net.score(&x, Target::logit(2)).unwrap() - net.score(&base, Target::logit(2)).unwrap();
    assert!((contrib - delta).abs() < 1e-12);
}

#[test]
fn model_format_round_trip() {
    let net = tiny_cnn(17);
    let mut buf = Vec::new();
    write_network(&net, &mut buf).unwrap();
    assert_eq!(&buf[..4], b"XLK1");
    let back = read_network(&mut buf.as_slice()).unwrap();
    assert_eq!(back, net);
    let mut bad = buf.clone();
    bad[0] = b'Y';
    assert!(read_network(&mut bad.as_slice()).is_err());
}
