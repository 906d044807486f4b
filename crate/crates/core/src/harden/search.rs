//! Explore-then-exploit search over explainer or transform parameters.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::pareto::{pareto_indices, select_best_index};
use super::transform::{MaskMode, Order, TransformParams};
use crate::attack::roc::float_or_inf;
use crate::error::{Error, Result};
use crate::explain::params::{ParamDomain, ParamValue, IG_METHODS};
use crate::explain::perturb::grid_capacity;
use crate::explain::{ExplainerKind, ExplainerParams};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, stream, Rng};
use crate::utility::{delta_s, Direction};

const STREAM_SEARCH: u64 = 0x5EA;
const STREAM_NOISE: u64 = 0x4E;

/// A parameter space the optimizer can sample from and mutate within.
pub trait SearchSpace: Sync {
    type Point: Clone + Serialize + Send + Sync;

    fn validate(&self) -> Result<()>;
    fn sample(&self, rng: &mut Rng, trial_seed: u64) -> Self::Point;
    fn mutate(&self, point: &Self::Point, rng: &mut Rng, trial_seed: u64) -> Self::Point;
    fn contains(&self, point: &Self::Point) -> bool;
}

fn gaussian_step(rng: &mut Rng, v: f64, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    let n = Normal::new(0.0, 0.1 * (hi - lo)).expect("positive width");
    (v + n.sample(rng)).clamp(lo, hi)
}

fn int_step(rng: &mut Rng, v: i64, lo: i64, hi: i64) -> i64 {
    let step = if rng.gen_bool(0.5) { 1 } else { -1 };
    (v + step).clamp(lo, hi)
}

/// Closed interval; `lo == hi` pins the value, which may then be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "float_or_inf")]
    pub lo: f64,
    #[serde(with = "float_or_inf")]
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = self.lo == self.hi || (self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi);
        if ok && !self.lo.is_nan() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{name} range [{}, {}] is invalid",
                self.lo, self.hi
            )))
        }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }

    fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Ranges of the clip/mask/noise parameters. Order and mask mode are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpace {
    pub sigma: Interval,
    pub c_min: Interval,
    pub c_max: Interval,
    pub tau: Interval,
    pub order: Order,
    pub mask_mode: MaskMode,
}

impl TransformSpace {
    /// The single point that leaves attributions unchanged.
    pub fn identity() -> Self {
        Self {
            sigma: Interval::point(0.0),
            c_min: Interval::point(f64::NEG_INFINITY),
            c_max: Interval::point(f64::INFINITY),
            tau: Interval::point(f64::NEG_INFINITY),
            order: Order::recommended(),
            mask_mode: MaskMode::Signed,
        }
    }

    /// Default ranges scaled to baseline attribution values:
    /// sigma in `[0, 2 std]`, clip bounds in `[min, 0]` and `[0, max]`,
    /// tau in `[0, q90(|phi|)]`.
    pub fn from_attributions(values: &[f64], mask_mode: MaskMode) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("baseline attributions".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        mags.sort_by(f64::total_cmp);
        let q90 = mags[((mags.len() - 1) as f64 * 0.9).round() as usize];
        let span = |lo: f64, hi: f64| {
            if lo < hi {
                Interval::new(lo, hi)
            } else {
                Interval::point(lo)
            }
        };
        Ok(Self {
            sigma: span(0.0, 2.0 * std),
            c_min: span(min, 0.0),
            c_max: span(0.0, max),
            tau: span(0.0, q90),
            order: Order::recommended(),
            mask_mode,
        })
    }

    fn point(&self, sigma: f64, c_min: f64, c_max: f64, tau: f64, seed: u64) -> TransformParams {
        TransformParams {
            sigma,
            c_min,
            c_max,
            tau,
            order: self.order.clone(),
            mask_mode: self.mask_mode,
            seed,
        }
    }
}

impl SearchSpace for TransformSpace {
    type Point = TransformParams;

    fn validate(&self) -> Result<()> {
        self.sigma.validate("sigma")?;
        self.c_min.validate("c_min")?;
        self.c_max.validate("c_max")?;
        self.tau.validate("tau")?;
        if self.sigma.lo < 0.0 {
            return Err(Error::InvalidArgument("sigma range must be >= 0".into()));
        }
        if self.c_min.hi > self.c_max.lo {
            return Err(Error::InvalidArgument(
                "c_min range must lie below the c_max range".into(),
            ));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut Rng, trial_seed: u64) -> TransformParams {
        let sigma = self.sigma.sample(rng);
        let c_min = self.c_min.sample(rng);
        let c_max = self.c_max.sample(rng);
        let tau = self.tau.sample(rng);
        self.point(sigma, c_min, c_max, tau, trial_seed)
    }

    fn mutate(&self, p: &TransformParams, rng: &mut Rng, trial_seed: u64) -> TransformParams {
        let sigma = gaussian_step(rng, p.sigma, self.sigma.lo, self.sigma.hi);
        let c_min = gaussian_step(rng, p.c_min, self.c_min.lo, self.c_min.hi);
        let c_max = gaussian_step(rng, p.c_max, self.c_max.lo, self.c_max.hi);
        let tau = gaussian_step(rng, p.tau, self.tau.lo, self.tau.hi);
        self.point(sigma, c_min, c_max, tau, trial_seed)
    }

    fn contains(&self, p: &TransformParams) -> bool {
        self.sigma.contains(p.sigma)
            && self.c_min.contains(p.c_min)
            && self.c_max.contains(p.c_max)
            && self.tau.contains(p.tau)
            && p.order == self.order
            && p.mask_mode == self.mask_mode
    }
}

/// Search domains for a subset of one explainer's parameters; the rest stay
/// at `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerSpace {
    pub kind: ExplainerKind,
    pub domains: BTreeMap<String, ParamDomain>,
    /// Number of entries in sampled window shapes.
    pub shape_len: usize,
    pub base: ExplainerParams,
}

impl ExplainerSpace {
    /// Searchable parameters per method with ranges sized for inputs of
    /// shape `sample_shape`. Methods without parameters get an empty space.
    pub fn default_for(kind: ExplainerKind, sample_shape: &[usize]) -> Self {
        use ExplainerKind::*;
        let float = |lo, hi| ParamDomain::Float { lo, hi };
        let int = |lo, hi| ParamDomain::Int { lo, hi };
        let choice = |o: &[&str]| ParamDomain::Choice {
            options: o.iter().map(|s| s.to_string()).collect(),
        };
        let (shape_len, extent) = match sample_shape {
            [_, h, w] => (2, (*h).min(*w)),
            _ => (1, sample_shape.iter().product()),
        };
        let segments = grid_capacity(sample_shape).min(256) as i64;
        let mut d: Vec<(&str, ParamDomain)> = match kind {
            Saliency | Deconvolution | GuidedBackprop | InputXGradient | Deeplift => vec![],
            IntegratedGradients => vec![
                ("multiply_by_inputs", ParamDomain::Bool),
                ("method", choice(&IG_METHODS)),
            ],
            Smoothgrad | Vargrad => vec![
                ("stdevs", float(0.01, 3.0)),
                ("draw_baseline_from_distrib", ParamDomain::Bool),
            ],
            Gradcam | GradcamPp => vec![
                ("interpolation_mode", choice(&["nearest", "bilinear"])),
                ("attr_to_layer_input", ParamDomain::Bool),
            ],
            Occlusion => vec![
                (
                    "sliding_window_shapes",
                    ParamDomain::Shape {
                        lo: 1,
                        hi: extent.max(1),
                    },
                ),
                (
                    "strides",
                    ParamDomain::Shape {
                        lo: 1,
                        hi: extent.max(1),
                    },
                ),
            ],
            KernelShap | Lime => vec![("n_segments", int(1, segments.max(1))), ("compactness", int(1, 100))],
            Anchors => vec![
                ("threshold", float(0.0, 1.0)),
                ("tau", float(0.0, 1.0)),
                ("delta", float(0.01, 1.0)),
                ("batch_size", int(1, 200)),
                ("coverage_samples", int(1, 10_000)),
                ("beam_size", int(1, 4)),
                ("n_segments", int(1, segments.clamp(1, 64))),
                ("compactness", int(1, 100)),
                ("p_sample", float(0.0, 1.0)),
            ],
            Protodash => vec![("sigma", float(0.1, 10.0)), ("kernel", choice(&["linear", "gaussian"]))],
        };
        Self {
            kind,
            domains: d.drain(..).map(|(k, v)| (k.to_string(), v)).collect(),
            shape_len,
            base: ExplainerParams::defaults(kind),
        }
    }

    fn sample_one(&self, domain: &ParamDomain, rng: &mut Rng) -> ParamValue {
        match domain {
            ParamDomain::Bool => ParamValue::Bool(rng.gen_bool(0.5)),
            ParamDomain::Int { lo, hi } => ParamValue::Int(rng.gen_range(*lo..=*hi)),
            ParamDomain::Float { lo, hi } => ParamValue::Float(Interval::new(*lo, *hi).sample(rng)),
            ParamDomain::Choice { options } => ParamValue::Text(options[rng.gen_range(0..options.len())].clone()),
            ParamDomain::Shape { lo, hi } => ParamValue::Shape(vec![rng.gen_range(*lo..=*hi); self.shape_len]),
        }
    }
}

impl SearchSpace for ExplainerSpace {
    type Point = ExplainerParams;

    fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::Empty(format!("{} has no searchable parameters", self.kind)));
        }
        for (name, d) in &self.domains {
            let ok = match d {
                ParamDomain::Bool => true,
                ParamDomain::Int { lo, hi } => lo <= hi,
                ParamDomain::Float { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
                ParamDomain::Choice { options } => !options.is_empty(),
                ParamDomain::Shape { lo, hi } => *lo >= 1 && lo <= hi,
            };
            if !ok {
                return Err(Error::InvalidArgument(format!("empty or invalid domain for {name}")));
            }
        }
        self.base.resolve(self.kind).map(|_| ())
    }

    fn sample(&self, rng: &mut Rng, _trial_seed: u64) -> ExplainerParams {
        let mut p = self.base.clone();
        for (name, d) in &self.domains {
            let v = self.sample_one(d, rng);
            p.set(name, v);
        }
        p
    }

    fn mutate(&self, point: &ExplainerParams, rng: &mut Rng, _trial_seed: u64) -> ExplainerParams {
        let mut p = point.clone();
        for (name, d) in &self.domains {
            let current = point.get(name).cloned();
            let v = match (d, current) {
                (ParamDomain::Int { lo, hi }, Some(ParamValue::Int(v))) => ParamValue::Int(int_step(rng, v, *lo, *hi)),
                (ParamDomain::Float { lo, hi }, Some(ParamValue::Float(v))) => {
                    ParamValue::Float(gaussian_step(rng, v, *lo, *hi))
                }
                (ParamDomain::Shape { lo, hi }, Some(ParamValue::Shape(s))) => ParamValue::Shape(
                    s.iter()
                        .map(|&v| int_step(rng, v as i64, *lo as i64, *hi as i64) as usize)
                        .collect(),
                ),
                (ParamDomain::Bool | ParamDomain::Choice { .. }, Some(v)) => {
                    if rng.gen_bool(0.2) {
                        self.sample_one(d, rng)
                    } else {
                        v
                    }
                }
                _ => self.sample_one(d, rng),
            };
            p.set(name, v);
        }
        p
    }

    fn contains(&self, point: &ExplainerParams) -> bool {
        self.domains
            .iter()
            .all(|(name, d)| point.get(name).is_some_and(|v| d.contains(v)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub trials: usize,
    pub n_explore: usize,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            n_explore: 5,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

/// Leakage and utility of one explanation channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub mls: f64,
    pub auc: f64,
    pub balanced_accuracy: f64,
    /// Mean sensitivity; lower is better.
    pub utility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Explore,
    Exploit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord<P> {
    pub trial: usize,
    pub phase: Phase,
    pub theta: P,
    pub mls: f64,
    pub auc: f64,
    pub balanced_accuracy: f64,
    pub utility: f64,
    pub delta_s_percent: f64,
    pub direction: Direction,
    pub seed: u64,
    /// Kept out of serialized logs so they stay reproducible; see
    /// [`write_timing_csv`].
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

impl<P> TrialRecord<P> {
    pub fn point(&self) -> (f64, f64) {
        (self.mls, self.utility)
    }

    /// Signed sensitivity change in percent; negative is a utility gain.
    pub fn utility_loss_percent(&self) -> f64 {
        match self.direction {
            Direction::UtilityLoss => self.delta_s_percent,
            Direction::UtilityGain => -self.delta_s_percent,
            Direction::Unchanged => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult<P> {
    pub baseline: Measurement,
    pub trials: Vec<TrialRecord<P>>,
    pub best: usize,
    pub front: Vec<usize>,
}

impl<P: Clone> SearchResult<P> {
    pub fn best_trial(&self) -> &TrialRecord<P> {
        &self.trials[self.best]
    }

    pub fn pareto_front(&self) -> ParetoFront<P> {
        ParetoFront {
            ideal_point: [0.0, 0.0],
            axes: ["mls".into(), "utility_loss_percent".into()],
            best_trial: self.best,
            members: self.front.iter().map(|&i| self.trials[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront<P> {
    pub ideal_point: [f64; 2],
    pub axes: [String; 2],
    pub best_trial: usize,
    pub members: Vec<TrialRecord<P>>,
}

impl<P: Serialize> ParetoFront<P> {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Non-dominated trials in (MLS, sensitivity).
pub fn pareto_front<P: Clone>(trials: &[TrialRecord<P>]) -> Vec<TrialRecord<P>> {
    let pts: Vec<_> = trials.iter().map(TrialRecord::point).collect();
    pareto_indices(&pts).into_iter().map(|i| trials[i].clone()).collect()
}

pub fn select_best<P>(trials: &[TrialRecord<P>]) -> Option<&TrialRecord<P>> {
    let pts: Vec<_> = trials.iter().map(TrialRecord::point).collect();
    select_best_index(&pts).map(|i| &trials[i])
}

pub fn write_trial_log<P: Serialize>(trials: &[TrialRecord<P>], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "trial",
        "phase",
        "theta",
        "mls",
        "auc",
        "balanced_accuracy",
        "utility",
        "delta_s_percent",
        "direction",
        "seed",
    ])?;
    for t in trials {
        let phase = match t.phase {
            Phase::Explore => "explore",
            Phase::Exploit => "exploit",
        };
        w.write_record([
            t.trial.to_string(),
            phase.to_string(),
            serde_json::to_string(&t.theta)?,
            t.mls.to_string(),
            t.auc.to_string(),
            t.balanced_accuracy.to_string(),
            t.utility.to_string(),
            t.delta_s_percent.to_string(),
            t.direction.name().to_string(),
            t.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing_csv<P>(trials: &[TrialRecord<P>], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["trial", "wall_time_seconds"])?;
    for t in trials {
        w.write_record([t.trial.to_string(), t.wall_time_seconds.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn record<P>(
    trial: usize,
    phase: Phase,
    theta: P,
    m: Measurement,
    baseline: &Measurement,
    seed: u64,
    secs: f64,
) -> Result<TrialRecord<P>> {
    let (pct, dir) = delta_s(baseline.utility, m.utility)?;
    Ok(TrialRecord {
        trial,
        phase,
        theta,
        mls: m.mls,
        auc: m.auc,
        balanced_accuracy: m.balanced_accuracy,
        utility: m.utility,
        delta_s_percent: pct,
        direction: dir,
        seed,
        wall_time_seconds: secs.max(f64::MIN_POSITIVE),
    })
}

/// Runs `cfg.trials` evaluations. The first `n_explore` points are drawn
/// uniformly and evaluated in parallel; each later point mutates a random
/// member of the current Pareto front. Trial `t` draws only from the stream
/// `(seed, t)`, so replays are identical.
pub fn optimize<S, F>(
    space: &S,
    cfg: &SearchConfig,
    baseline: &Measurement,
    objective: F,
) -> Result<SearchResult<S::Point>>
where
    S: SearchSpace,
    F: Fn(&S::Point) -> Result<Measurement> + Sync,
{
    space.validate()?;
    if cfg.n_explore == 0 || cfg.n_explore > cfg.trials {
        return Err(Error::InvalidArgument(format!(
            "need trials >= n_explore >= 1, got trials={} n_explore={}",
            cfg.trials, cfg.n_explore
        )));
    }
    if baseline.utility == 0.0 {
        return Err(Error::UndefinedBaseline);
    }
    let trial_seed = |t: usize| derive_seed(cfg.seed, &[STREAM_NOISE, t as u64]);
    let timed = |p: &S::Point| -> Result<(Measurement, f64)> {
        let start = Instant::now();
        let m = objective(p)?;
        Ok((m, start.elapsed().as_secs_f64()))
    };
    let explore: Vec<S::Point> = (0..cfg.n_explore)
        .map(|t| space.sample(&mut stream(cfg.seed, &[STREAM_SEARCH, t as u64]), trial_seed(t)))
        .collect();
    let results = par::try_map(explore.len(), cfg.execution, |t| timed(&explore[t]))?;
    let mut trials = Vec::with_capacity(cfg.trials);
    for (t, (p, (m, secs))) in explore.into_iter().zip(results).enumerate() {
        trials.push(record(t, Phase::Explore, p, m, baseline, trial_seed(t), secs)?);
    }
    for t in cfg.n_explore..cfg.trials {
        let mut rng = stream(cfg.seed, &[STREAM_SEARCH, t as u64]);
        let pts: Vec<_> = trials.iter().map(TrialRecord::point).collect();
        let front = pareto_indices(&pts);
        let parent = &trials[front[rng.gen_range(0..front.len())]].theta;
        let p = space.mutate(parent, &mut rng, trial_seed(t));
        let (m, secs) = timed(&p)?;
        trials.push(record(t, Phase::Exploit, p, m, baseline, trial_seed(t), secs)?);
    }
    let pts: Vec<_> = trials.iter().map(TrialRecord::point).collect();
    Ok(SearchResult {
        baseline: *baseline,
        best: select_best_index(&pts).expect("at least one trial"),
        front: pareto_indices(&pts),
        trials,
    })
}
