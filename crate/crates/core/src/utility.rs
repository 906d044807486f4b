//! Explanation sensitivity: the largest L2 change of an attribution map when
//! the input moves inside an L-infinity ball of radius `r`.
//!
//! The maximum is not computable in general, so every estimator returns a
//! lower bound built from a finite perturbation set.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{explain, ExplainContext, ExplainerKind, ExplainerParams};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SensitivityEstimator {
    /// `k` uniform draws from the ball.
    MonteCarlo { k: usize },
    /// `samples` draws `rho * u` with `u` uniform in the unit cube and `rho`
    /// uniform in `[0, max_radius]`; only draws with `rho <= r` count, so the
    /// estimate is non-decreasing in `r`.
    Nested { samples: usize, max_radius: f64 },
    /// Regular grid with `points` per axis, for inputs with at most two
    /// features.
    Grid { points: usize },
}

impl Default for SensitivityEstimator {
    fn default() -> Self {
        SensitivityEstimator::MonteCarlo { k: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEstimate {
    pub value: f64,
    pub radius: f64,
    pub estimator: SensitivityEstimator,
    pub seed: u64,
}

/// Offsets `delta` with `|delta|_inf <= r` at which the explanation is
/// re-evaluated.
pub fn perturbation_offsets(estimator: SensitivityEstimator, d: usize, r: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("radius {r} must be finite and >= 0")));
    }
    if r == 0.0 {
        return Ok(Vec::new());
    }
    let mut rng = stream(seed, &[0]);
    Ok(match estimator {
        SensitivityEstimator::MonteCarlo { k } => {
            if k == 0 {
                return Err(Error::InvalidArgument("monte carlo needs k >= 1".into()));
            }
            (0..k)
                .map(|_| (0..d).map(|_| rng.gen_range(-r..=r)).collect())
                .collect()
        }
        SensitivityEstimator::Nested { samples, max_radius } => {
            if samples == 0 || !(max_radius > 0.0) {
                return Err(Error::InvalidArgument(
                    "nested estimator needs samples >= 1 and max_radius > 0".into(),
                ));
            }
            let mut out = Vec::new();
            for _ in 0..samples {
                let rho: f64 = rng.gen_range(0.0..=max_radius);
                let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                if rho <= r {
                    out.push(u.into_iter().map(|v| rho * v).collect());
                }
            }
            out
        }
        SensitivityEstimator::Grid { points } => {
            if d > 2 {
                return Err(Error::InvalidArgument(format!(
                    "grid estimator supports d <= 2, got {d}"
                )));
            }
            if points < 2 {
                return Err(Error::InvalidArgument("grid needs at least 2 points per axis".into()));
            }
            let axis: Vec<f64> = (0..points)
                .map(|i| -r + 2.0 * r * i as f64 / (points - 1) as f64)
                .collect();
            match d {
                0 => Vec::new(),
                1 => axis.iter().map(|&a| vec![a]).collect(),
                _ => axis
                    .iter()
                    .flat_map(|&a| axis.iter().map(move |&b| vec![a, b]))
                    .collect(),
            }
        }
    })
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Largest distance of any perturbed attribution from the base one.
pub fn max_deviation(base: &[f64], perturbed: &[Vec<f64>]) -> f64 {
    perturbed.iter().map(|p| l2_distance(base, p)).fold(0.0, f64::max)
}

/// Attribution of one sample and of its perturbed copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedAttributions {
    pub source: usize,
    pub base: Vec<f64>,
    pub perturbed: Vec<Vec<f64>>,
}

/// Explains `x` and every `x + delta`. The class is fixed to `class_index`
/// and stochastic explainers reuse one internal seed throughout.
#[allow(clippy::too_many_arguments)]
pub fn perturbed_attributions(
    ctx: &ExplainContext<'_>,
    kind: ExplainerKind,
    params: &ExplainerParams,
    x: &Tensor,
    class_index: usize,
    offsets: &[Vec<f64>],
    seed: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let explain_seed = derive_seed(seed, &[1]);
    let base = explain(ctx, kind, params, x, class_index, explain_seed)?
        .values
        .into_data();
    let perturbed = offsets
        .iter()
        .map(|delta| {
            let data: Vec<f64> = x.data().iter().zip(delta).map(|(a, b)| a + b).collect();
            let xp = Tensor::new(x.shape().to_vec(), data)?;
            Ok(explain(ctx, kind, params, &xp, class_index, explain_seed)?
                .values
                .into_data())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((base, perturbed))
}

/// Sensitivity of one explanation at radius `r`.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity(
    ctx: &ExplainContext<'_>,
    kind: ExplainerKind,
    params: &ExplainerParams,
    x: &Tensor,
    class_index: usize,
    r: f64,
    estimator: SensitivityEstimator,
    seed: u64,
) -> Result<SensitivityEstimate> {
    let offsets = perturbation_offsets(estimator, x.len(), r, seed)?;
    let (base, perturbed) = perturbed_attributions(ctx, kind, params, x, class_index, &offsets, seed)?;
    Ok(SensitivityEstimate {
        value: max_deviation(&base, &perturbed),
        radius: r,
        estimator,
        seed,
    })
}

/// Order-independent mean: values are sorted before summation.
pub fn stable_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSensitivity {
    pub mean: f64,
    pub radius: f64,
    pub estimator: SensitivityEstimator,
    pub seed: u64,
    pub per_sample: Vec<SampleSensitivity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSensitivity {
    pub sample: usize,
    pub value: f64,
}

impl DatasetSensitivity {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample", "value"])?;
        for s in &self.per_sample {
            w.write_record([s.sample.to_string(), s.value.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            mean: f64,
            radius: f64,
            estimator: &'a SensitivityEstimator,
            seed: u64,
            samples: usize,
        }
        let s = Summary {
            mean: self.mean,
            radius: self.radius,
            estimator: &self.estimator,
            seed: self.seed,
            samples: self.per_sample.len(),
        };
        std::fs::write(path, serde_json::to_vec_pretty(&s)?)?;
        Ok(())
    }
}

/// Mean sensitivity over a sample set. Every sample shares the same
/// perturbation offsets and seed, so the result does not depend on order.
#[allow(clippy::too_many_arguments)]
pub fn dataset_sensitivity(
    ctx: &ExplainContext<'_>,
    kind: ExplainerKind,
    params: &ExplainerParams,
    xs: &[Tensor],
    classes: &[usize],
    r: f64,
    estimator: SensitivityEstimator,
    seed: u64,
    exec: Execution,
) -> Result<DatasetSensitivity> {
    if xs.is_empty() {
        return Err(Error::Empty("sensitivity sample set".into()));
    }
    if xs.len() != classes.len() {
        return Err(Error::InvalidArgument("one class index per input required".into()));
    }
    let values = par::try_map(xs.len(), exec, |i| {
        sensitivity(ctx, kind, params, &xs[i], classes[i], r, estimator, seed).map(|s| s.value)
    })?;
    Ok(DatasetSensitivity {
        mean: stable_mean(&values),
        radius: r,
        estimator,
        seed,
        per_sample: values
            .into_iter()
            .enumerate()
            .map(|(sample, value)| SampleSensitivity { sample, value })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    UtilityGain,
    UtilityLoss,
    Unchanged,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::UtilityGain => "utility_gain",
            Direction::UtilityLoss => "utility_loss",
            Direction::Unchanged => "unchanged",
        }
    }
}

/// Percentage change in sensitivity. Lower sensitivity is a utility gain.
pub fn delta_s(pre: f64, post: f64) -> Result<(f64, Direction)> {
    if pre == 0.0 {
        return Err(Error::UndefinedBaseline);
    }
    if !(pre > 0.0) || !(post >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sensitivities must be >= 0, got {pre} and {post}"
        )));
    }
    let dir = if post < pre {
        Direction::UtilityGain
    } else if post > pre {
        Direction::UtilityLoss
    } else {
        Direction::Unchanged
    };
    Ok(((pre - post).abs() / pre * 100.0, dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_s_examples() {
        assert_eq!(delta_s(2.0, 0.5).unwrap(), (75.0, Direction::UtilityGain));
        assert_eq!(delta_s(1.5, 1.5).unwrap(), (0.0, Direction::Unchanged));
        let (p, d) = delta_s(1.0, 1.1).unwrap();
        assert!((p - 10.0).abs() < 1e-12);
        assert_eq!(d, Direction::UtilityLoss);
        assert!(matches!(delta_s(0.0, 1.0), Err(Error::UndefinedBaseline)));
    }

    #[test]
    fn offsets_stay_in_ball() {
        for est in [
            SensitivityEstimator::MonteCarlo { k: 50 },
            SensitivityEstimator::Nested {
                samples: 50,
                max_radius: 1.0,
            },
        ] {
            for d in perturbation_offsets(est, 5, 0.3, 7).unwrap() {
                assert!(d.iter().all(|v| v.abs() <= 0.3));
            }
        }
        assert_eq!(
            perturbation_offsets(SensitivityEstimator::Grid { points: 3 }, 2, 1.0, 0)
                .unwrap()
                .len(),
            9
        );
        assert!(perturbation_offsets(SensitivityEstimator::Grid { points: 3 }, 3, 1.0, 0).is_err());
        assert!(perturbation_offsets(SensitivityEstimator::default(), 3, 0.0, 0)
            .unwrap()
            .is_empty());
    }
}
