//! Gradient-based attributions: saliency and friends, SmoothGrad/VarGrad,
//! integrated gradients and DeepLIFT.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Network, ReluRule, Target};
use crate::rng;
use crate::tensor::Tensor;

/// `multiply_by_input` takes precedence over `absolute`.
pub fn grad_explain(
    model: &Network,
    x: &Tensor,
    target: Target,
    rule: ReluRule,
    multiply_by_input: bool,
    absolute: bool,
) -> Result<Tensor> {
    let g = model.input_gradient(x, target, rule)?;
    Ok(if multiply_by_input {
        g.mul(x)?
    } else if absolute {
        g.abs()
    } else {
        g
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseAggregator {
    /// SmoothGrad: mean of absolute noisy gradients.
    MeanAbsGrad,
    /// VarGrad: elementwise population variance of noisy gradients.
    VarianceGrad,
}

/// Averages gradients at `base + stdevs * N(0, I)`, where `base` is `x` or,
/// with a non-empty `baseline_pool`, a sample drawn uniformly from it.
#[allow(clippy::too_many_arguments)]
pub fn noise_aggregate_explain(
    model: &Network,
    x: &Tensor,
    target: Target,
    n: usize,
    stdevs: f64,
    aggregator: NoiseAggregator,
    baseline_pool: Option<&[Tensor]>,
    seed: u64,
) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::InvalidArgument("noise sample count must be >= 1".into()));
    }
    if !(stdevs >= 0.0 && stdevs.is_finite()) {
        return Err(Error::InvalidArgument("stdevs must be finite and >= 0".into()));
    }
    if let Some(pool) = baseline_pool {
        if pool.is_empty() {
            return Err(Error::Empty("baseline distribution has no samples".into()));
        }
    }
    let mut rng = rng::rng_from_seed(seed);
    let len = x.len();
    // running mean and Welford sum of squares
    let mut sum = vec![0.0; len];
    let mut mean = vec![0.0; len];
    let mut m2 = vec![0.0; len];
    for step in 0..n {
        let base = match baseline_pool {
            Some(pool) => {
                let b = &pool[rng.gen_range(0..pool.len())];
                x.check_same_shape(b)?;
                b
            }
            None => x,
        };
        let noisy = if stdevs == 0.0 {
            base.clone()
        } else {
            let data = base
                .data()
                .iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + stdevs * z
                })
                .collect();
            Tensor::new(base.shape().to_vec(), data)?
        };
        let g = model.input_gradient(&noisy, target, ReluRule::Standard)?;
        for (i, &gi) in g.data().iter().enumerate() {
            match aggregator {
                NoiseAggregator::MeanAbsGrad => sum[i] += gi.abs(),
                NoiseAggregator::VarianceGrad => {
                    let d = gi - mean[i];
                    mean[i] += d / (step + 1) as f64;
                    m2[i] += d * (gi - mean[i]);
                }
            }
        }
    }
    let nf = n as f64;
    let data = match aggregator {
        NoiseAggregator::MeanAbsGrad => sum.iter().map(|s| s / nf).collect(),
        NoiseAggregator::VarianceGrad => m2.iter().map(|q| (q / nf).max(0.0)).collect(),
    };
    Tensor::new(x.shape().to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IgMethod {
    Gausslegendre,
    RiemannLeft,
    RiemannRight,
    RiemannMiddle,
    RiemannTrapezoid,
}

impl std::str::FromStr for IgMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gausslegendre" => IgMethod::Gausslegendre,
            "riemann_left" => IgMethod::RiemannLeft,
            "riemann_right" => IgMethod::RiemannRight,
            "riemann_middle" => IgMethod::RiemannMiddle,
            "riemann_trapezoid" => IgMethod::RiemannTrapezoid,
            _ => return Err(Error::InvalidArgument(format!("unknown integration method {s:?}"))),
        })
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let step = p1 / dp;
            z -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Path positions `alpha` in `[0, 1]` and weights summing to 1.
pub fn path_quadrature(method: IgMethod, n_steps: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
    }
    let n = n_steps as f64;
    Ok(match method {
        IgMethod::RiemannLeft => ((0..n_steps).map(|i| i as f64 / n).collect(), vec![1.0 / n; n_steps]),
        IgMethod::RiemannRight => ((1..=n_steps).map(|i| i as f64 / n).collect(), vec![1.0 / n; n_steps]),
        IgMethod::RiemannMiddle => (
            (0..n_steps).map(|i| (i as f64 + 0.5) / n).collect(),
            vec![1.0 / n; n_steps],
        ),
        IgMethod::RiemannTrapezoid => {
            let alphas = (0..=n_steps).map(|i| i as f64 / n).collect();
            let mut w = vec![1.0 / n; n_steps + 1];
            w[0] *= 0.5;
            w[n_steps] *= 0.5;
            (alphas, w)
        }
        IgMethod::Gausslegendre => {
            let (z, w) = gauss_legendre(n_steps);
            (
                z.iter().map(|v| 0.5 * (v + 1.0)).collect(),
                w.iter().map(|v| 0.5 * v).collect(),
            )
        }
    })
}

pub fn integrated_gradients(
    model: &Network,
    x: &Tensor,
    target: Target,
    baseline: &Tensor,
    n_steps: usize,
    method: IgMethod,
    multiply_by_inputs: bool,
) -> Result<Tensor> {
    x.check_same_shape(baseline)?;
    let (alphas, weights) = path_quadrature(method, n_steps)?;
    let diff = x.sub(baseline)?;
    let mut avg = vec![0.0; x.len()];
    for (&a, &w) in alphas.iter().zip(&weights) {
        let point = baseline.zip_map(&diff, |b, d| b + a * d)?;
        let g = model.input_gradient(&point, target, ReluRule::Standard)?;
        for (acc, gi) in avg.iter_mut().zip(g.data()) {
            *acc += w * gi;
        }
    }
    let avg = Tensor::new(x.shape().to_vec(), avg)?;
    if multiply_by_inputs {
        diff.mul(&avg)
    } else {
        Ok(avg)
    }
}

/// Rescale-rule contributions; they sum to `f_c(x) - f_c(baseline)`.
pub fn deeplift(model: &Network, x: &Tensor, baseline: &Tensor, target: Target) -> Result<Tensor> {
    let m = model.rescale_multipliers(x, baseline, target)?;
    m.mul(&x.sub(baseline)?)
}
