//! Target and shadow model architectures plus a deterministic SGD trainer.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, LayerSpec, Loss, Network};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Single dense layer, `d -> C`.
    Linear,
    /// `d -> 64 -> 32 -> C` with ReLU.
    MlpA,
    /// `d -> 128 -> C` with ReLU.
    MlpB,
    /// `c x 8 x 8 -> conv 3x3x8 -> relu -> avgpool 2 -> flatten -> dense -> C`.
    TinyCnn,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Linear,
        Architecture::MlpA,
        Architecture::MlpB,
        Architecture::TinyCnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Linear => "linear",
            Architecture::MlpA => "mlp_a",
            Architecture::MlpB => "mlp_b",
            Architecture::TinyCnn => "tiny_cnn",
        }
    }

    /// Layer sequence for samples of `input_shape`. Dense architectures
    /// flatten image-shaped input first.
    pub fn layers(self, input_shape: &[usize], num_classes: usize) -> Result<Vec<LayerSpec>> {
        let d: usize = input_shape.iter().product();
        let mut layers = Vec::new();
        if self != Architecture::TinyCnn && input_shape.len() > 1 {
            layers.push(LayerSpec::Flatten);
        }
        match self {
            Architecture::Linear => layers.push(LayerSpec::Dense {
                input: d,
                output: num_classes,
            }),
            Architecture::MlpA => layers.extend([
                LayerSpec::Dense { input: d, output: 64 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 64, output: 32 },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: 32,
                    output: num_classes,
                },
            ]),
            Architecture::MlpB => layers.extend([
                LayerSpec::Dense { input: d, output: 128 },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: 128,
                    output: num_classes,
                },
            ]),
            Architecture::TinyCnn => {
                let &[c, h, w] = input_shape else {
                    return Err(Error::UnsupportedArchitecture(format!(
                        "tiny_cnn needs (channels, height, width) input, got {input_shape:?}"
                    )));
                };
                if h < 4 || w < 4 {
                    return Err(Error::UnsupportedArchitecture(format!(
                        "tiny_cnn input {h}x{w} too small"
                    )));
                }
                let flat = 8 * ((h - 2) / 2) * ((w - 2) / 2);
                layers.extend([
                    LayerSpec::Conv2d {
                        in_channels: c,
                        out_channels: 8,
                        kernel: 3,
                        stride: 1,
                    },
                    LayerSpec::Relu,
                    LayerSpec::AvgPool2d { size: 2 },
                    LayerSpec::Flatten,
                    LayerSpec::Dense {
                        input: flat,
                        output: num_classes,
                    },
                ]);
            }
        }
        Ok(layers)
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    #[default]
    CosineAnnealing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: Schedule,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once test accuracy reaches this value (generalization-gap runs).
    #[serde(default)]
    pub target_test_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.1,
            weight_decay: 1e-4,
            schedule: Schedule::CosineAnnealing,
            batch_size: 32,
            seed: 0,
            target_test_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument("weight decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if let Some(t) = self.target_test_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidArgument("target_test_accuracy must be in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::CosineAnnealing => {
                let span = self.epochs.saturating_sub(1).max(1) as f64;
                let t = (epoch as f64 / span).min(1.0);
                self.learning_rate * 0.5 * (1.0 + (PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub architecture: String,
    pub network: Network,
    pub config: TrainConfig,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub log: Vec<EpochLog>,
}

/// Sidecar metadata written next to the binary model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub architecture: String,
    pub config: TrainConfig,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub epochs_run: usize,
    pub parameter_count: usize,
}

pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("accuracy of an empty dataset".into()));
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        if net.predict(&data.sample(i))? == data.labels()[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

pub fn train_architecture(
    arch: Architecture,
    data: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let layers = arch.layers(data.sample_shape(), data.num_classes())?;
    train(arch.name(), layers, data, test, cfg)
}

/// Mini-batch SGD on cross-entropy with coupled L2 weight decay
/// (`w -= lr * (g + wd * w)`), reshuffled every epoch.
pub fn train(
    name: &str,
    layers: Vec<LayerSpec>,
    data: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if data.is_empty() || test.is_empty() {
        return Err(Error::Empty("training and test sets must be non-empty".into()));
    }
    if data.sample_shape() != test.sample_shape() {
        return Err(Error::InputShape {
            expected: data.sample_shape().to_vec(),
            actual: test.sample_shape().to_vec(),
        });
    }
    let mut net = Network::init(data.sample_shape(), layers, &mut rng::stream(cfg.seed, &[0]))?;
    if net.num_classes() < data.num_classes() {
        return Err(Error::InvalidArchitecture(format!(
            "network has {} outputs for {} classes",
            net.num_classes(),
            data.num_classes()
        )));
    }
    let samples = data.samples();
    let labels = data.labels();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng::stream(cfg.seed, &[1, epoch as u64]));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&_> = chunk.iter().map(|&i| &samples[i]).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = net.param_gradient(&batch, &ys, Loss::CrossEntropy)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;
            let (ws, bs) = net.params_mut();
            for (p, g) in ws
                .iter_mut()
                .zip(&grads.weights)
                .chain(bs.iter_mut().zip(&grads.biases))
            {
                for (pv, gv) in p.iter_mut().zip(g) {
                    *pv -= lr * (gv + cfg.weight_decay * *pv);
                }
            }
        }
        if !net.params_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        let train_accuracy = accuracy(&net, data)?;
        let test_accuracy = accuracy(&net, test)?;
        log.push(EpochLog {
            epoch,
            lr,
            loss: epoch_loss / data.len() as f64,
            train_accuracy,
            test_accuracy,
        });
        if cfg.target_test_accuracy.is_some_and(|t| test_accuracy >= t) {
            break;
        }
    }
    let last = log.last().expect("at least one epoch");
    Ok(TrainedModel {
        architecture: name.to_string(),
        train_accuracy: last.train_accuracy,
        test_accuracy: last.test_accuracy,
        config: cfg.clone(),
        network: net,
        log,
    })
}

impl TrainedModel {
    pub fn metadata(&self) -> ModelMetadata {
        ModelMetadata {
            architecture: self.architecture.clone(),
            config: self.config.clone(),
            train_accuracy: self.train_accuracy,
            test_accuracy: self.test_accuracy,
            epochs_run: self.log.len(),
            parameter_count: self.network.parameter_count(),
        }
    }

    /// Writes `<stem>.xlk`, `<stem>.json` and `<stem>_train_log.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(format!("{stem}.xlk")))?);
        nn::write_network(&self.network, &mut w)?;
        serde_json::to_writer_pretty(File::create(dir.join(format!("{stem}.json")))?, &self.metadata())?;
        write_training_log(&self.log, dir.join(format!("{stem}_train_log.csv")))
    }
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    nn::read_network(&mut BufReader::new(File::open(path)?))
}

pub fn write_training_log(log: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
