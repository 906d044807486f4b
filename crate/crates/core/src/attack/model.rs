//! Attack classifiers over flattened attribution vectors.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax, LayerSpec, Loss, Network};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[derive(Default)]
pub enum AttackModelSpec {
    #[default]
    Logistic,
    Mlp {
        hidden: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackTraining {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for AttackTraining {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-3,
        }
    }
}

/// Per-feature standardization fitted on the attack training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let v = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                let s = v.sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttackClassifier {
    Logistic { weights: Vec<f64>, bias: f64 },
    Mlp { network: Network },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackModel {
    pub standardizer: Standardizer,
    pub classifier: AttackClassifier,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl AttackModel {
    pub fn input_dim(&self) -> usize {
        self.standardizer.mean.len()
    }

    /// Membership score in `[0, 1]`.
    pub fn score(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: vec![self.input_dim()],
                actual: vec![features.len()],
            });
        }
        let z = self.standardizer.apply(features);
        Ok(match &self.classifier {
            AttackClassifier::Logistic { weights, bias } => {
                sigmoid(weights.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>() + bias)
            }
            AttackClassifier::Mlp { network } => {
                let logits = network.logits(&Tensor::vector(z)?)?;
                softmax(logits.data())[1]
            }
        })
    }

    pub fn scores(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.score(r)).collect()
    }

    /// Random logistic weights with identity standardization; a guessing
    /// baseline that never saw data.
    pub fn untrained(dim: usize, seed: u64) -> Self {
        let mut r = rng::rng_from_seed(seed);
        Self {
            standardizer: Standardizer {
                mean: vec![0.0; dim],
                std: vec![1.0; dim],
            },
            classifier: AttackClassifier::Logistic {
                weights: (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect(),
                bias: r.gen_range(-1.0..1.0),
            },
        }
    }

    /// Full-batch gradient descent on the mean log loss with L2 penalty.
    pub fn train(
        rows: &[Vec<f64>],
        labels: &[bool],
        spec: AttackModelSpec,
        training: &AttackTraining,
        seed: u64,
    ) -> Result<Self> {
        if rows.is_empty() || rows.len() != labels.len() {
            return Err(Error::InvalidArgument(
                "attack rows and labels must be non-empty and aligned".into(),
            ));
        }
        let pos = labels.iter().filter(|&&y| y).count();
        if pos == 0 || pos == labels.len() {
            return Err(Error::SingleClass);
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("ragged attack rows".into()));
        }
        let standardizer = Standardizer::fit(rows);
        let z: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(r)).collect();
        let mut rng = rng::rng_from_seed(seed);
        let classifier = match spec {
            AttackModelSpec::Logistic => {
                let mut w: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.01..0.01)).collect();
                let mut b = 0.0;
                let n = z.len() as f64;
                let mut gw = vec![0.0; d];
                for _ in 0..training.epochs {
                    gw.iter_mut().for_each(|g| *g = 0.0);
                    let mut gb = 0.0;
                    for (row, &y) in z.iter().zip(labels) {
                        let p = sigmoid(w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + b);
                        let err = p - f64::from(u8::from(y));
                        for (g, v) in gw.iter_mut().zip(row) {
                            *g += err * v;
                        }
                        gb += err;
                    }
                    for (wj, g) in w.iter_mut().zip(&gw) {
                        *wj -= training.learning_rate * (g / n + training.l2 * *wj);
                    }
                    b -= training.learning_rate * gb / n;
                }
                AttackClassifier::Logistic { weights: w, bias: b }
            }
            AttackModelSpec::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::InvalidArgument("attack MLP needs a hidden layer".into()));
                }
                let layers = vec![
                    LayerSpec::Dense {
                        input: d,
                        output: hidden,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Dense {
                        input: hidden,
                        output: 2,
                    },
                ];
                let mut net = Network::init(&[d], layers, &mut rng)?;
                let xs = z
                    .iter()
                    .map(|r| Tensor::vector(r.clone()))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&Tensor> = xs.iter().collect();
                let ys: Vec<usize> = labels.iter().map(|&y| usize::from(y)).collect();
                for _ in 0..training.epochs {
                    let (_, g) = net.param_gradient(&refs, &ys, Loss::CrossEntropy)?;
                    let (ws, bs) = net.params_mut();
                    for (p, gp) in ws.iter_mut().zip(&g.weights) {
                        for (v, gv) in p.iter_mut().zip(gp) {
                            *v -= training.learning_rate * (gv + training.l2 * *v);
                        }
                    }
                    for (p, gp) in bs.iter_mut().zip(&g.biases) {
                        for (v, gv) in p.iter_mut().zip(gp) {
                            *v -= training.learning_rate * gv;
                        }
                    }
                }
                if !net.params_finite() {
                    return Err(Error::TrainingDiverged { epoch: training.epochs });
                }
                AttackClassifier::Mlp { network: net }
            }
        };
        Ok(Self {
            standardizer,
            classifier,
        })
    }
}
