//! Hardening explanations against membership leakage.
//!
//! Parameterized explainers are hardened by searching their own parameters;
//! the others by searching clip/mask/noise transforms applied to their
//! output. Every trial re-measures leakage with the full attack protocol
//! and utility as mean sensitivity.

pub mod pareto;
pub mod search;
pub mod transform;

use serde::{Deserialize, Serialize};

pub use pareto::{dominates, pareto_indices, select_best_index, MLS_SLACK};
pub use search::{
    optimize, pareto_front, select_best, write_timing_csv, write_trial_log, ExplainerSpace, Interval, Measurement,
    ParetoFront, Phase, SearchConfig, SearchResult, SearchSpace, TransformSpace, TrialRecord,
};
pub use transform::{apply_transforms, MaskMode, Order, Transform, TransformParams};

use crate::attack::{
    compute_attribution_set, evaluate_attack, fit_attack, run_on_attributions, AttackConfig, AttackModel,
    AttributionSet, ClassChoice,
};
use crate::data::SplitBundle;
use crate::error::{Error, Result};
use crate::explain::xatt::{RecordGroup, XattRecord};
use crate::explain::{ExplainContext, ExplainerKind, ExplainerParams};
use crate::nn::Network;
use crate::par::{self, Execution};
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::utility::{
    dataset_sensitivity, delta_s, max_deviation, perturbation_offsets, perturbed_attributions, stable_mean, Direction,
    PerturbedAttributions, SensitivityEstimator,
};

const STREAM_UTILITY: u64 = 0x07;

/// How utility is measured during hardening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtilityConfig {
    pub radius: f64,
    pub estimator: SensitivityEstimator,
    /// Number of target hold-out samples whose sensitivity is averaged.
    pub samples: usize,
    pub seed: u64,
}

impl Default for UtilityConfig {
    fn default() -> Self {
        Self {
            radius: 0.1,
            estimator: SensitivityEstimator::default(),
            samples: 16,
            seed: 0,
        }
    }
}

/// Whether the simulated adversary retrains on hardened attributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    /// Retrain the attack on hardened shadow attributions every trial.
    #[default]
    Adaptive,
    /// Keep the attack trained on raw attributions.
    Fixed,
}

/// Models, data and protocol settings shared by every trial.
#[derive(Debug, Clone, Copy)]
pub struct Experiment<'a> {
    pub bundle: &'a SplitBundle,
    pub target: &'a Network,
    pub shadow: &'a Network,
    pub reference: &'a [Tensor],
    pub attack: &'a AttackConfig,
    pub utility: &'a UtilityConfig,
    pub adversary: Adversary,
}

impl Experiment<'_> {
    /// Hold-out samples and classes used for sensitivity.
    pub fn utility_inputs(&self) -> Result<(Vec<Tensor>, Vec<usize>)> {
        let data = &self.bundle.target_test;
        let n = self.utility.samples.min(data.len());
        if n == 0 {
            return Err(Error::Empty("utility sample set".into()));
        }
        let xs: Vec<Tensor> = (0..n).map(|i| data.sample(i)).collect();
        let classes = xs
            .iter()
            .enumerate()
            .map(|(i, x)| match self.attack.class_choice {
                ClassChoice::Label => Ok(data.labels()[i]),
                ClassChoice::Predicted => self.target.predict(x),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((xs, classes))
    }

    fn context(&self) -> ExplainContext<'_> {
        ExplainContext {
            model: self.target,
            score: self.attack.score,
            reference: self.reference,
        }
    }
}

/// Leakage and utility of transformed explanations, with all explanations
/// computed once up front.
#[derive(Debug, Clone)]
pub struct TransformObjective {
    pub set: AttributionSet,
    pub perturbed: Vec<PerturbedAttributions>,
    pub attack: AttackConfig,
    fixed_model: Option<AttackModel>,
}

fn group_tag(g: RecordGroup) -> u64 {
    match g {
        RecordGroup::Unlabeled => 0,
        RecordGroup::ShadowMember => 1,
        RecordGroup::ShadowNonmember => 2,
        RecordGroup::TargetMember => 3,
        RecordGroup::TargetNonmember => 4,
        RecordGroup::Perturbed => 5,
    }
}

impl TransformObjective {
    pub fn prepare(exp: &Experiment<'_>, kind: ExplainerKind, params: &ExplainerParams) -> Result<Self> {
        let set = compute_attribution_set(
            exp.target,
            exp.shadow,
            kind,
            params,
            exp.bundle,
            exp.reference,
            exp.attack,
        )?;
        let (xs, classes) = exp.utility_inputs()?;
        let ctx = exp.context();
        let u = exp.utility;
        let offsets = perturbation_offsets(u.estimator, xs[0].len(), u.radius, u.seed)?;
        let perturbed = par::try_map(xs.len(), exp.attack.execution, |i| {
            let (base, perturbed) = perturbed_attributions(&ctx, kind, params, &xs[i], classes[i], &offsets, u.seed)?;
            Ok::<_, Error>(PerturbedAttributions {
                source: i,
                base,
                perturbed,
            })
        })?;
        Self::from_parts(set, perturbed, exp.attack.clone(), exp.adversary)
    }

    pub fn from_parts(
        set: AttributionSet,
        perturbed: Vec<PerturbedAttributions>,
        attack: AttackConfig,
        adversary: Adversary,
    ) -> Result<Self> {
        if perturbed.is_empty() {
            return Err(Error::Empty("utility sample set".into()));
        }
        let fixed_model = match adversary {
            Adversary::Adaptive => None,
            Adversary::Fixed => Some(fit_attack(&set, &attack)?.1),
        };
        Ok(Self {
            set,
            perturbed,
            attack,
            fixed_model,
        })
    }

    /// Rebuilds an objective from an attribution dump. Utility uses records of
    /// group `unlabeled` as base attributions and `perturbed` records with the
    /// same source index as their perturbed copies.
    pub fn from_records(records: &[XattRecord], attack: AttackConfig, adversary: Adversary) -> Result<Self> {
        let set = AttributionSet::from_records(records)?;
        let mut perturbed: Vec<PerturbedAttributions> = records
            .iter()
            .filter(|r| r.group == RecordGroup::Unlabeled)
            .map(|r| PerturbedAttributions {
                source: r.source,
                base: r.values.data().to_vec(),
                perturbed: Vec::new(),
            })
            .collect();
        for r in records.iter().filter(|r| r.group == RecordGroup::Perturbed) {
            let slot = perturbed
                .iter_mut()
                .find(|p| p.source == r.source)
                .ok_or_else(|| Error::Format(format!("perturbed record for unknown source {}", r.source)))?;
            slot.perturbed.push(r.values.data().to_vec());
        }
        Self::from_parts(set, perturbed, attack, adversary)
    }

    /// The utility part of an attribution dump.
    pub fn utility_records(&self, method: ExplainerKind, params: &ExplainerParams) -> Result<Vec<XattRecord>> {
        let mut out = Vec::new();
        for p in &self.perturbed {
            let rec = |group, values: &Vec<f64>| -> Result<XattRecord> {
                Ok(XattRecord {
                    method,
                    params: params.clone(),
                    class_index: 0,
                    group,
                    source: p.source,
                    values: Tensor::new(self.set.shape.clone(), values.clone())?,
                })
            };
            out.push(rec(RecordGroup::Unlabeled, &p.base)?);
            for v in &p.perturbed {
                out.push(rec(RecordGroup::Perturbed, v)?);
            }
        }
        Ok(out)
    }

    pub fn transformed_set(&self, theta: &TransformParams) -> Result<AttributionSet> {
        theta.validate()?;
        Ok(self
            .set
            .map(|g, i, row| theta.apply_valid(row, derive_seed(theta.seed, &[group_tag(g), i as u64]))))
    }

    /// Mean sensitivity of the transformed channel. Every evaluation of the
    /// channel draws its own noise.
    pub fn utility(&self, theta: &TransformParams) -> Result<f64> {
        let values = self
            .perturbed
            .iter()
            .enumerate()
            .map(|(s, p)| {
                let seed = |j: u64| derive_seed(theta.seed, &[STREAM_UTILITY, s as u64, j]);
                let base = theta.apply(&p.base, seed(0))?;
                let pert = p
                    .perturbed
                    .iter()
                    .enumerate()
                    .map(|(j, v)| theta.apply(v, seed(j as u64 + 1)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(max_deviation(&base, &pert))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(stable_mean(&values))
    }

    pub fn evaluate(&self, theta: &TransformParams) -> Result<Measurement> {
        let set = self.transformed_set(theta)?;
        let (mls, auc, balanced_accuracy) = match &self.fixed_model {
            None => {
                let r = run_on_attributions(&set, &self.attack)?;
                (r.mls, r.auc, r.balanced_accuracy)
            }
            Some(model) => {
                let e = evaluate_attack(
                    model,
                    &set.target_members.rows,
                    &set.target_nonmembers.rows,
                    self.attack.epsilon,
                )?;
                (e.mls, e.auc, e.balanced_accuracy)
            }
        };
        Ok(Measurement {
            mls,
            auc,
            balanced_accuracy,
            utility: self.utility(theta)?,
        })
    }

    pub fn baseline(&self) -> Result<Measurement> {
        self.evaluate(&TransformParams::identity())
    }
}

/// Leakage and utility of an explainer under given parameters, recomputing
/// all explanations.
pub fn evaluate_explainer(exp: &Experiment<'_>, kind: ExplainerKind, params: &ExplainerParams) -> Result<Measurement> {
    let set = compute_attribution_set(
        exp.target,
        exp.shadow,
        kind,
        params,
        exp.bundle,
        exp.reference,
        exp.attack,
    )?;
    let report = run_on_attributions(&set, exp.attack)?;
    let (xs, classes) = exp.utility_inputs()?;
    let u = exp.utility;
    let sens = dataset_sensitivity(
        &exp.context(),
        kind,
        params,
        &xs,
        &classes,
        u.radius,
        u.estimator,
        u.seed,
        exp.attack.execution,
    )?;
    Ok(Measurement {
        mls: report.mls,
        auc: report.auc,
        balanced_accuracy: report.balanced_accuracy,
        utility: sens.mean,
    })
}

/// Searches the explainer's own parameters. The baseline is the explainer
/// at its default parameters.
pub fn optimize_parameterized(
    exp: &Experiment<'_>,
    space: &ExplainerSpace,
    cfg: &SearchConfig,
) -> Result<SearchResult<ExplainerParams>> {
    if exp.adversary == Adversary::Fixed {
        return Err(Error::InvalidArgument(
            "a fixed attack cannot score parameterized explainers whose output shape may change".into(),
        ));
    }
    space.validate()?;
    let baseline = evaluate_explainer(exp, space.kind, &space.base)?;
    optimize(space, cfg, &baseline, |p| evaluate_explainer(exp, space.kind, p))
}

/// Searches clip/mask/noise parameters on top of precomputed explanations.
pub fn optimize_nonparameterized(
    objective: &TransformObjective,
    space: &TransformSpace,
    cfg: &SearchConfig,
) -> Result<SearchResult<TransformParams>> {
    let baseline = objective.baseline()?;
    optimize(space, cfg, &baseline, |p| objective.evaluate(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingRow {
    pub order: Order,
    pub recommended: bool,
    pub pre_mls: f64,
    pub post_mls: f64,
    pub pre_utility: f64,
    pub post_utility: f64,
    pub delta_s_percent: f64,
    pub direction: Direction,
    pub theta: TransformParams,
}

/// Evaluates every grid point under every order and keeps, per order, the
/// point chosen by the selection rule.
pub fn ordering_ablation(
    objective: &TransformObjective,
    grid: &[TransformParams],
    orders: &[Order],
    exec: Execution,
) -> Result<Vec<OrderingRow>> {
    if grid.is_empty() || orders.is_empty() {
        return Err(Error::Empty("ordering grid".into()));
    }
    let pre = objective.baseline()?;
    let jobs: Vec<TransformParams> = orders
        .iter()
        .flat_map(|o| {
            grid.iter().map(move |g| TransformParams {
                order: o.clone(),
                ..g.clone()
            })
        })
        .collect();
    let results = par::try_map(jobs.len(), exec, |i| objective.evaluate(&jobs[i]))?;
    orders
        .iter()
        .enumerate()
        .map(|(k, order)| {
            let chunk = &results[k * grid.len()..(k + 1) * grid.len()];
            let pts: Vec<_> = chunk.iter().map(|m| (m.mls, m.utility)).collect();
            let j = select_best_index(&pts).expect("non-empty grid");
            let (pct, dir) = delta_s(pre.utility, chunk[j].utility)?;
            Ok(OrderingRow {
                order: order.clone(),
                recommended: *order == Order::recommended(),
                pre_mls: pre.mls,
                post_mls: chunk[j].mls,
                pre_utility: pre.utility,
                post_utility: chunk[j].utility,
                delta_s_percent: pct,
                direction: dir,
                theta: jobs[k * grid.len() + j].clone(),
            })
        })
        .collect()
}
