//! Explanation-only shadow-model membership inference.
//!
//! The adversary explains its own shadow model on known members and
//! non-members, trains a classifier on those attribution vectors and then
//! scores attributions released by the target model. Nothing but the
//! attribution vector enters the classifier.

pub mod model;
pub mod roc;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use model::{AttackModel, AttackModelSpec, AttackTraining};
pub use roc::{auc, balanced_accuracy, mls, RocCurve};

use crate::data::{sample_without_replacement, Dataset, SplitBundle};
use crate::error::{Error, Result};
use crate::explain::xatt::{RecordGroup, XattRecord};
use crate::explain::{explain_many, ExplainContext, ExplainerKind, ExplainerParams};
use crate::nn::{Network, ScoreKind};
use crate::par::{self, Execution};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

const STREAM_EVAL: u64 = 0xE7A1;
const STREAM_EXPLAIN: u64 = 0xE8;
const STREAM_ATTACK: u64 = 0xA7;

/// Which class the explanation is taken for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassChoice {
    /// The sample's ground-truth label.
    #[default]
    Label,
    /// The model's own prediction.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub k_seeds: usize,
    pub epsilon: f64,
    pub validation_fraction: f64,
    pub model: AttackModelSpec,
    pub training: AttackTraining,
    /// Cap on evaluation samples per membership class (default 1000).
    pub eval_per_class: usize,
    /// Cap on shadow attack-training samples per membership class.
    pub shadow_per_class: Option<usize>,
    pub class_choice: ClassChoice,
    pub score: ScoreKind,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            k_seeds: 20,
            epsilon: 0.001,
            validation_fraction: 0.3,
            model: AttackModelSpec::Logistic,
            training: AttackTraining::default(),
            eval_per_class: 1000,
            shadow_per_class: None,
            class_choice: ClassChoice::Label,
            score: ScoreKind::Logit,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_seeds == 0 {
            return Err(Error::InvalidArgument("k_seeds must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::InvalidArgument("epsilon must lie in [0, 1)".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidArgument("validation_fraction must lie in (0, 1)".into()));
        }
        if self.eval_per_class == 0 {
            return Err(Error::InvalidArgument("eval_per_class must be >= 1".into()));
        }
        Ok(())
    }
}

/// Attributions of one sample group with the class each was taken for and
/// the row index of its source sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributionRows {
    pub rows: Vec<Vec<f64>>,
    pub classes: Vec<usize>,
    pub sources: Vec<usize>,
}

impl AttributionRows {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn map_rows(&self, f: impl Fn(usize, &[f64]) -> Vec<f64>) -> Self {
        Self {
            rows: self.rows.iter().enumerate().map(|(i, r)| f(i, r)).collect(),
            classes: self.classes.clone(),
            sources: self.sources.clone(),
        }
    }
}

/// Everything the attack consumes: shadow-model attributions for training
/// and target-model attributions for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSet {
    /// Shape of one attribution map.
    pub shape: Vec<usize>,
    pub shadow_members: AttributionRows,
    pub shadow_nonmembers: AttributionRows,
    pub target_members: AttributionRows,
    pub target_nonmembers: AttributionRows,
}

impl AttributionSet {
    pub fn groups(&self) -> [(RecordGroup, &AttributionRows); 4] {
        [
            (RecordGroup::ShadowMember, &self.shadow_members),
            (RecordGroup::ShadowNonmember, &self.shadow_nonmembers),
            (RecordGroup::TargetMember, &self.target_members),
            (RecordGroup::TargetNonmember, &self.target_nonmembers),
        ]
    }

    /// Applies `f(group, row index, row)` to every attribution.
    pub fn map(&self, f: impl Fn(RecordGroup, usize, &[f64]) -> Vec<f64>) -> Self {
        Self {
            shape: self.shape.clone(),
            shadow_members: self.shadow_members.map_rows(|i, r| f(RecordGroup::ShadowMember, i, r)),
            shadow_nonmembers: self
                .shadow_nonmembers
                .map_rows(|i, r| f(RecordGroup::ShadowNonmember, i, r)),
            target_members: self.target_members.map_rows(|i, r| f(RecordGroup::TargetMember, i, r)),
            target_nonmembers: self
                .target_nonmembers
                .map_rows(|i, r| f(RecordGroup::TargetNonmember, i, r)),
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn to_records(&self, method: ExplainerKind, params: &ExplainerParams) -> Result<Vec<XattRecord>> {
        let mut out = Vec::new();
        for (group, rows) in self.groups() {
            for i in 0..rows.len() {
                out.push(XattRecord {
                    method,
                    params: params.clone(),
                    class_index: rows.classes[i],
                    group,
                    source: rows.sources[i],
                    values: Tensor::new(self.shape.clone(), rows.rows[i].clone())?,
                });
            }
        }
        Ok(out)
    }

    /// Rebuilds a set from dump records; records of other groups are ignored.
    pub fn from_records(records: &[XattRecord]) -> Result<Self> {
        let shape = records
            .first()
            .ok_or_else(|| Error::Empty("no attribution records".into()))?
            .values
            .shape()
            .to_vec();
        let mut groups: [AttributionRows; 4] = Default::default();
        for r in records {
            let slot = match r.group {
                RecordGroup::ShadowMember => 0,
                RecordGroup::ShadowNonmember => 1,
                RecordGroup::TargetMember => 2,
                RecordGroup::TargetNonmember => 3,
                _ => continue,
            };
            if r.values.shape() != shape.as_slice() {
                return Err(Error::InputShape {
                    expected: shape.clone(),
                    actual: r.values.shape().to_vec(),
                });
            }
            groups[slot].rows.push(r.values.data().to_vec());
            groups[slot].classes.push(r.class_index);
            groups[slot].sources.push(r.source);
        }
        let [shadow_members, shadow_nonmembers, target_members, target_nonmembers] = groups;
        Ok(Self {
            shape,
            shadow_members,
            shadow_nonmembers,
            target_members,
            target_nonmembers,
        })
    }
}

/// Labeled attack training data: members `true`, non-members `false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackDataset {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub explainer: ExplainerKind,
    pub params: ExplainerParams,
    pub shadow_model: String,
}

fn class_for(model: &Network, x: &Tensor, label: usize, choice: ClassChoice) -> Result<usize> {
    match choice {
        ClassChoice::Label => Ok(label),
        ClassChoice::Predicted => model.predict(x),
    }
}

/// Explains the rows `indices` of `data` on `model`.
#[allow(clippy::too_many_arguments)]
pub fn explain_rows(
    model: &Network,
    data: &Dataset,
    indices: &[usize],
    explainer: ExplainerKind,
    params: &ExplainerParams,
    reference: &[Tensor],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttributionRows> {
    let xs: Vec<Tensor> = indices.iter().map(|&i| data.sample(i)).collect();
    let classes = indices
        .iter()
        .zip(&xs)
        .map(|(&i, x)| class_for(model, x, data.labels()[i], cfg.class_choice))
        .collect::<Result<Vec<_>>>()?;
    let ctx = ExplainContext {
        model,
        score: cfg.score,
        reference,
    };
    let maps = explain_many(&ctx, explainer, params, &xs, &classes, seed, cfg.execution)?;
    Ok(AttributionRows {
        rows: maps.into_iter().map(|m| m.values.into_data()).collect(),
        classes,
        sources: indices.to_vec(),
    })
}

fn pick(len: usize, cap: usize, seed: u64) -> Vec<usize> {
    let mut idx = sample_without_replacement(len, cap, seed);
    idx.sort_unstable();
    idx
}

/// Shadow-side attack dataset: attributions of the shadow model on its own
/// training set (members) and its held-out set (non-members), balanced.
pub fn build_attack_dataset(
    shadow: &Network,
    shadow_id: &str,
    explainer: ExplainerKind,
    params: &ExplainerParams,
    bundle: &SplitBundle,
    reference: &[Tensor],
    cfg: &AttackConfig,
) -> Result<AttackDataset> {
    let (m, n) = shadow_rows(shadow, explainer, params, bundle, reference, cfg)?;
    let mut rows = m.rows;
    let mut labels = vec![true; rows.len()];
    labels.extend(std::iter::repeat_n(false, n.rows.len()));
    rows.extend(n.rows);
    Ok(AttackDataset {
        rows,
        labels,
        provenance: Provenance {
            explainer,
            params: params.resolve(explainer)?,
            shadow_model: shadow_id.to_string(),
        },
    })
}

fn shadow_rows(
    shadow: &Network,
    explainer: ExplainerKind,
    params: &ExplainerParams,
    bundle: &SplitBundle,
    reference: &[Tensor],
    cfg: &AttackConfig,
) -> Result<(AttributionRows, AttributionRows)> {
    let n = bundle
        .shadow_train
        .len()
        .min(bundle.shadow_test.len())
        .min(cfg.shadow_per_class.unwrap_or(usize::MAX));
    let mi = pick(bundle.shadow_train.len(), n, derive_seed(cfg.seed, &[STREAM_EVAL, 0]));
    let ni = pick(bundle.shadow_test.len(), n, derive_seed(cfg.seed, &[STREAM_EVAL, 1]));
    Ok((
        explain_rows(
            shadow,
            &bundle.shadow_train,
            &mi,
            explainer,
            params,
            reference,
            cfg,
            derive_seed(cfg.seed, &[STREAM_EXPLAIN, 0]),
        )?,
        explain_rows(
            shadow,
            &bundle.shadow_test,
            &ni,
            explainer,
            params,
            reference,
            cfg,
            derive_seed(cfg.seed, &[STREAM_EXPLAIN, 1]),
        )?,
    ))
}

/// All four attribution groups for one explainer configuration.
pub fn compute_attribution_set(
    target: &Network,
    shadow: &Network,
    explainer: ExplainerKind,
    params: &ExplainerParams,
    bundle: &SplitBundle,
    reference: &[Tensor],
    cfg: &AttackConfig,
) -> Result<AttributionSet> {
    cfg.validate()?;
    explainer.check_compatible(target, reference.len())?;
    explainer.check_compatible(shadow, reference.len())?;
    let (shadow_members, shadow_nonmembers) = shadow_rows(shadow, explainer, params, bundle, reference, cfg)?;
    let e = bundle
        .target_train
        .len()
        .min(bundle.target_test.len())
        .min(cfg.eval_per_class);
    let mi = pick(bundle.target_train.len(), e, derive_seed(cfg.seed, &[STREAM_EVAL, 2]));
    let ni = pick(bundle.target_test.len(), e, derive_seed(cfg.seed, &[STREAM_EVAL, 3]));
    let target_members = explain_rows(
        target,
        &bundle.target_train,
        &mi,
        explainer,
        params,
        reference,
        cfg,
        derive_seed(cfg.seed, &[STREAM_EXPLAIN, 2]),
    )?;
    let target_nonmembers = explain_rows(
        target,
        &bundle.target_test,
        &ni,
        explainer,
        params,
        reference,
        cfg,
        derive_seed(cfg.seed, &[STREAM_EXPLAIN, 3]),
    )?;
    let shape = infer_shape(explainer, target, &bundle.target_train, reference)?;
    Ok(AttributionSet {
        shape,
        shadow_members,
        shadow_nonmembers,
        target_members,
        target_nonmembers,
    })
}

fn infer_shape(kind: ExplainerKind, model: &Network, data: &Dataset, reference: &[Tensor]) -> Result<Vec<usize>> {
    Ok(match kind {
        ExplainerKind::Gradcam | ExplainerKind::GradcamPp => model.input_shape()[1..].to_vec(),
        ExplainerKind::Protodash => vec![reference.len().min(crate::explain::PROTODASH_POOL)],
        _ => data.sample_shape().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed_index: usize,
    pub validation_tpr_at_eps: f64,
    pub validation_accuracy: f64,
    pub mls: f64,
    pub auc: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub epsilon: f64,
    pub k_seeds: usize,
    pub best_seed: usize,
    pub mls: f64,
    pub auc: f64,
    pub balanced_accuracy: f64,
    pub attack_input_dim: usize,
    pub eval_members: usize,
    pub eval_nonmembers: usize,
    pub seeds: Vec<SeedOutcome>,
    /// Seeds whose target-evaluation MLS beat the selected seed; selection
    /// never looks at these numbers.
    pub sanity_flagged_seeds: Vec<usize>,
    /// ROC of the selected seed on the target evaluation set.
    pub roc: RocCurve,
}

impl AttackReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

fn check_dims(set: &AttributionSet) -> Result<usize> {
    let d = set.dim();
    for (group, rows) in set.groups() {
        if rows.is_empty() {
            return Err(Error::Empty(format!("{} attributions", group.name())));
        }
        if let Some(r) = rows.rows.iter().find(|r| r.len() != d) {
            return Err(Error::InputShape {
                expected: vec![d],
                actual: vec![r.len()],
            });
        }
    }
    Ok(d)
}

/// Trains `k_seeds` attack models on the shadow attributions and reports the
/// target-evaluation metrics of the seed that is best on held-out shadow
/// data (validation TPR at epsilon, then validation accuracy, then lowest
/// index).
pub fn run_on_attributions(set: &AttributionSet, cfg: &AttackConfig) -> Result<AttackReport> {
    fit_attack(set, cfg).map(|(r, _)| r)
}

/// As [`run_on_attributions`], also returning the selected attack model.
pub fn fit_attack(set: &AttributionSet, cfg: &AttackConfig) -> Result<(AttackReport, AttackModel)> {
    cfg.validate()?;
    let d = check_dims(set)?;
    let (pm, pn) = (set.shadow_members.len(), set.shadow_nonmembers.len());
    if pm < 2 || pn < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            actual: pm.min(pn),
        });
    }
    struct Run {
        outcome: SeedOutcome,
        roc: RocCurve,
        model: AttackModel,
    }
    let runs = par::try_map(cfg.k_seeds, cfg.execution, |s| -> Result<Run> {
        let seed = derive_seed(cfg.seed, &[STREAM_ATTACK, s as u64]);
        let mut rng = crate::rng::rng_from_seed(seed);
        let split = |n: usize, rng: &mut crate::rng::Rng| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            let v = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1);
            let train = idx.split_off(v);
            (train, idx)
        };
        let (mt, mv) = split(pm, &mut rng);
        let (nt, nv) = split(pn, &mut rng);
        let mut rows = Vec::with_capacity(mt.len() + nt.len());
        let mut labels = Vec::with_capacity(rows.capacity());
        for &i in &mt {
            rows.push(set.shadow_members.rows[i].clone());
            labels.push(true);
        }
        for &i in &nt {
            rows.push(set.shadow_nonmembers.rows[i].clone());
            labels.push(false);
        }
        let model = AttackModel::train(&rows, &labels, cfg.model, &cfg.training, seed)?;
        debug_assert_eq!(model.input_dim(), d);
        let vrows =
            |rows: &AttributionRows, idx: &[usize]| idx.iter().map(|&i| rows.rows[i].clone()).collect::<Vec<_>>();
        let val = evaluate_attack(
            &model,
            &vrows(&set.shadow_members, &mv),
            &vrows(&set.shadow_nonmembers, &nv),
            cfg.epsilon,
        )?;
        let eval = evaluate_attack(
            &model,
            &set.target_members.rows,
            &set.target_nonmembers.rows,
            cfg.epsilon,
        )?;
        Ok(Run {
            outcome: SeedOutcome {
                seed_index: s,
                validation_tpr_at_eps: val.mls,
                validation_accuracy: val.balanced_accuracy,
                mls: eval.mls,
                auc: eval.auc,
                balanced_accuracy: eval.balanced_accuracy,
            },
            roc: eval.roc,
            model,
        })
    })?;
    let mut best = 0;
    for (i, r) in runs.iter().enumerate().skip(1) {
        let (a, b) = (&r.outcome, &runs[best].outcome);
        if (a.validation_tpr_at_eps, a.validation_accuracy) > (b.validation_tpr_at_eps, b.validation_accuracy) {
            best = i;
        }
    }
    let chosen = runs[best].outcome.clone();
    let sanity_flagged_seeds = runs
        .iter()
        .filter(|r| r.outcome.mls > chosen.mls)
        .map(|r| r.outcome.seed_index)
        .collect();
    let model = runs[best].model.clone();
    let report = AttackReport {
        epsilon: cfg.epsilon,
        k_seeds: cfg.k_seeds,
        best_seed: best,
        mls: chosen.mls,
        auc: chosen.auc,
        balanced_accuracy: chosen.balanced_accuracy,
        attack_input_dim: d,
        eval_members: set.target_members.len(),
        eval_nonmembers: set.target_nonmembers.len(),
        sanity_flagged_seeds,
        roc: runs[best].roc.clone(),
        seeds: runs.into_iter().map(|r| r.outcome).collect(),
    };
    Ok((report, model))
}

/// Target-side metrics of an already trained attack model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mls: f64,
    pub auc: f64,
    pub balanced_accuracy: f64,
    pub roc: RocCurve,
}

pub fn evaluate_attack(
    model: &AttackModel,
    members: &[Vec<f64>],
    nonmembers: &[Vec<f64>],
    epsilon: f64,
) -> Result<Evaluation> {
    let tm = model.scores(members)?;
    let tn = model.scores(nonmembers)?;
    let roc = RocCurve::new(&tm, &tn)?;
    let scores: Vec<f64> = tm.iter().chain(&tn).copied().collect();
    let labels: Vec<bool> = tm.iter().map(|_| true).chain(tn.iter().map(|_| false)).collect();
    Ok(Evaluation {
        mls: mls(&roc, epsilon)?,
        auc: roc.auc(),
        balanced_accuracy: balanced_accuracy(&scores, &labels, 0.5)?,
        roc,
    })
}

/// Full protocol: explain, train `k_seeds` attack models on the shadow side,
/// evaluate on the target side.
pub fn run_attack_protocol(
    bundle: &SplitBundle,
    target: &Network,
    shadow: &Network,
    explainer: ExplainerKind,
    params: &ExplainerParams,
    reference: &[Tensor],
    cfg: &AttackConfig,
) -> Result<(AttackReport, AttributionSet)> {
    let set = compute_attribution_set(target, shadow, explainer, params, bundle, reference, cfg)?;
    Ok((run_on_attributions(&set, cfg)?, set))
}
