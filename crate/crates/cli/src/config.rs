use std::path::{Path, PathBuf};

use attrleak_core::attack::{AttackConfig, AttackModelSpec};
use attrleak_core::data::{self, CsvSchema, Dataset, NonmemberSource, SplitMode, SplitSpec};
use attrleak_core::explain::{ExplainerKind, ExplainerParams};
use attrleak_core::harden::{Adversary, MaskMode, Order, TransformParams, UtilityConfig};
use attrleak_core::nn::ScoreKind;
use attrleak_core::rng::derive_seed;
use attrleak_core::zoo::{Architecture, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic {
        num_classes: usize,
        dim: usize,
        n: usize,
        class_separation: f64,
        seed: u64,
        /// Reshape each flat sample, e.g. `[1, 4, 4]` for the conv model.
        #[serde(default)]
        sample_shape: Option<Vec<usize>>,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
}

impl DatasetConfig {
    pub fn load(&self) -> Result<Dataset, CliError> {
        match self {
            DatasetConfig::Synthetic {
                num_classes,
                dim,
                n,
                class_separation,
                seed,
                sample_shape,
            } => {
                let ds = data::make_synthetic(*num_classes, *dim, *n, *class_separation, *seed)?;
                match sample_shape {
                    Some(s) => Ok(ds.reshape_samples(s)?),
                    None => Ok(ds),
                }
            }
            DatasetConfig::Csv { path, schema } => {
                if !path.is_file() {
                    return Err(CliError::Config(format!(
                        "dataset file {} does not exist",
                        path.display()
                    )));
                }
                Ok(data::load_csv(path, schema)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardeningConfig {
    pub trials: usize,
    pub n_explore: usize,
    pub order: Order,
    pub mask_mode: MaskMode,
    pub adversary: Adversary,
    pub seed: u64,
}

impl Default for HardeningConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            n_explore: 5,
            order: Order::recommended(),
            mask_mode: MaskMode::Signed,
            adversary: Adversary::Adaptive,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Transform points evaluated under every order; empty means a grid
    /// derived from the attribution statistics.
    pub ordering_grid: Vec<TransformParams>,
    /// Early-stop test accuracies of the two generalization-gap targets.
    pub gap_targets: [f64; 2],
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            ordering_grid: Vec::new(),
            gap_targets: [0.4, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Only used by `reseed`; each stage keeps its own seed.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub split: SplitSpec,
    pub target: ModelConfig,
    pub shadow: ModelConfig,
    pub explainer: ExplainerKind,
    #[serde(default)]
    pub params: ExplainerParams,
    #[serde(default = "all_explainers")]
    pub audit_explainers: Vec<ExplainerKind>,
    /// Shadow-train samples used as SmoothGrad baselines and ProtoDash pool.
    #[serde(default = "default_reference_size")]
    pub reference_size: usize,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub utility: UtilityConfig,
    #[serde(default)]
    pub hardening: HardeningConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn all_explainers() -> Vec<ExplainerKind> {
    ExplainerKind::ALL.to_vec()
}

fn default_reference_size() -> usize {
    attrleak_core::explain::PROTODASH_POOL
}

impl Default for RunConfig {
    /// The desk-scale overfit scenario: 4-class Gaussian blobs in 16
    /// dimensions, disjoint 200-sample subsets and an over-trained MLP-A.
    fn default() -> Self {
        let train = TrainConfig {
            epochs: 500,
            learning_rate: 0.05,
            weight_decay: 0.0,
            batch_size: 16,
            seed: 3,
            ..TrainConfig::default()
        };
        Self {
            seed: 0,
            dataset: DatasetConfig::Synthetic {
                num_classes: 4,
                dim: 16,
                n: 1000,
                class_separation: 1.0,
                seed: 7,
                sample_shape: None,
            },
            split: SplitSpec {
                target_train: 200,
                target_test: 200,
                shadow_train: 200,
                shadow_test: 200,
                mode: SplitMode::Disjoint,
                nonmember_source: NonmemberSource::HoldoutInDistribution,
                seed: 1,
            },
            target: ModelConfig {
                architecture: Architecture::MlpA,
                train: train.clone(),
            },
            shadow: ModelConfig {
                architecture: Architecture::MlpA,
                train: TrainConfig { seed: 4, ..train },
            },
            explainer: ExplainerKind::Saliency,
            params: ExplainerParams::new(),
            audit_explainers: all_explainers(),
            reference_size: default_reference_size(),
            attack: AttackConfig {
                epsilon: 0.01,
                model: AttackModelSpec::Mlp { hidden: 32 },
                score: ScoreKind::Probability,
                ..AttackConfig::default()
            },
            utility: UtilityConfig::default(),
            hardening: HardeningConfig::default(),
            ablation: AblationConfig::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key.path=value` overrides. Values are parsed as JSON and fall
    /// back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, CliError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = serde_json::to_value(self).map_err(|e| CliError::Config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {item:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut root, key, value)?;
        }
        Self::from_value(root)
    }

    /// Derives every stage seed from `master`.
    pub fn reseed(&mut self, master: u64) {
        self.seed = master;
        let seeds = |k: u64| derive_seed(master, &[k]);
        if let DatasetConfig::Synthetic { seed, .. } = &mut self.dataset {
            *seed = seeds(1);
        }
        self.split.seed = seeds(2);
        self.target.train.seed = seeds(3);
        self.shadow.train.seed = seeds(4);
        self.attack.seed = seeds(5);
        self.utility.seed = seeds(6);
        self.hardening.seed = seeds(7);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.attack
            .validate()
            .map_err(|e| CliError::Config(format!("attack: {e}")))?;
        self.target
            .train
            .validate()
            .map_err(|e| CliError::Config(format!("target.train: {e}")))?;
        self.shadow
            .train
            .validate()
            .map_err(|e| CliError::Config(format!("shadow.train: {e}")))?;
        if self.audit_explainers.is_empty() {
            return bad("audit_explainers is empty".into());
        }
        if self.hardening.n_explore == 0 || self.hardening.trials < self.hardening.n_explore {
            return bad("hardening needs trials >= n_explore >= 1".into());
        }
        if self.utility.samples == 0 || !(self.utility.radius >= 0.0) {
            return bad("utility needs samples >= 1 and radius >= 0".into());
        }
        if self.ablation.gap_targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("ablation.gap_targets must lie in [0, 1]".into());
        }
        if let DatasetConfig::Csv { path, .. } = &self.dataset {
            if !path.is_file() {
                return bad(format!("dataset file {} does not exist", path.display()));
            }
        }
        Ok(())
    }

    /// Per-stage seeds, as recorded in run manifests.
    pub fn stage_seeds(&self) -> Vec<(String, u64)> {
        let mut out = vec![("master".to_string(), self.seed)];
        if let DatasetConfig::Synthetic { seed, .. } = &self.dataset {
            out.push(("dataset".into(), *seed));
        }
        out.extend([
            ("split".into(), self.split.seed),
            ("target_train".into(), self.target.train.seed),
            ("shadow_train".into(), self.shadow.train.seed),
            ("attack".into(), self.attack.seed),
            ("utility".into(), self.utility.seed),
            ("hardening".into(), self.hardening.seed),
        ]);
        out
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {part:?} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Ordering grid used when the config leaves it empty: moderate clip, mask
/// and noise levels taken from the attribution value distribution.
pub fn default_ordering_grid(values: &[f64], mask_mode: MaskMode, seed: u64) -> Vec<TransformParams> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut mags: Vec<f64> = sorted.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let q = |v: &[f64], p: f64| {
        if v.is_empty() {
            0.0
        } else {
            v[((v.len() - 1) as f64 * p).round() as usize]
        }
    };
    let n = sorted.len().max(1) as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let std = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut grid = Vec::new();
    for (clip, tau, sigma) in [(0.1, 0.5, 0.25), (0.2, 0.7, 0.5), (0.05, 0.9, 1.0)] {
        grid.push(TransformParams {
            sigma: sigma * std,
            c_min: q(&sorted, clip).min(0.0),
            c_max: q(&sorted, 1.0 - clip).max(0.0),
            tau: q(&mags, tau),
            order: Order::recommended(),
            mask_mode,
            seed,
        });
    }
    grid
}
