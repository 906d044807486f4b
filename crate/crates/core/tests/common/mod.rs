#![allow(dead_code)]

use attrleak_core::nn::{LayerSpec, Network};
use attrleak_core::rng::rng_from_seed;
use attrleak_core::Tensor;
use rand::Rng;

/// Bias-free `1 x 3` linear model with weight row `[1, -2, 0.5]`.
pub fn linear_model() -> Network {
    Network::from_parts(
        &[3],
        vec![LayerSpec::Dense { input: 3, output: 1 }],
        vec![vec![1.0, -2.0, 0.5]],
        vec![vec![0.0]],
    )
    .unwrap()
}

pub fn linear_x() -> Tensor {
    Tensor::vector(vec![2.0, 1.0, 4.0]).unwrap()
}

pub fn mlp(d: usize, hidden: &[usize], classes: usize, seed: u64) -> Network {
    let mut layers = Vec::new();
    let mut prev = d;
    for &h in hidden {
        layers.push(LayerSpec::Dense { input: prev, output: h });
        layers.push(LayerSpec::Relu);
        prev = h;
    }
    layers.push(LayerSpec::Dense {
        input: prev,
        output: classes,
    });
    Network::init(&[d], layers, &mut rng_from_seed(seed)).unwrap()
}

pub fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed ^ 0xABCD);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len(), "length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y} (tol {tol})");
    }
}
