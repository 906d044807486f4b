use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use attrleak_core::attack::{run_attack_protocol, AttackReport, ClassChoice};
use attrleak_core::data::{self, Dataset, SplitBundle, SplitMode, SplitSpec};
use attrleak_core::explain::{explain, ExplainContext, ExplainerKind, Family};
use attrleak_core::harden::{
    optimize_nonparameterized, optimize_parameterized, ordering_ablation, write_timing_csv, write_trial_log,
    Experiment, ExplainerSpace, Order, SearchConfig, SearchResult, TransformObjective, TransformSpace,
};
use attrleak_core::nn::{self, Network};
use attrleak_core::rng::derive_seed;
use attrleak_core::zoo::{self, train_architecture, Architecture, TrainedModel};
use attrleak_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::{default_ordering_grid, ModelConfig, RunConfig};
use crate::output::{self, Ablation, Command, RunManifest, RunWriter, MANIFEST_FILE};
use crate::svg;
use crate::CliError;

/// Dataset, split and trained target/shadow models for one config.
pub struct Prepared {
    pub dataset: Dataset,
    pub bundle: SplitBundle,
    pub target: TrainedModel,
    pub shadow: TrainedModel,
    pub reference: Vec<Tensor>,
}

pub fn load_split(cfg: &RunConfig, spec: &SplitSpec) -> Result<(Dataset, SplitBundle), CliError> {
    let dataset = cfg.dataset.load()?;
    let bundle = data::split(&dataset, spec).map_err(|e| CliError::Config(format!("split: {e}")))?;
    Ok((dataset, bundle))
}

fn train_model(m: &ModelConfig, train: &Dataset, test: &Dataset) -> Result<TrainedModel, CliError> {
    m.architecture
        .layers(train.sample_shape(), train.num_classes())
        .map_err(|e| CliError::Config(format!("{}: {e}", m.architecture.name())))?;
    Ok(train_architecture(m.architecture, train, test, &m.train)?)
}

fn reference_pool(cfg: &RunConfig, bundle: &SplitBundle) -> Vec<Tensor> {
    let n = cfg.reference_size.min(bundle.shadow_train.len());
    (0..n).map(|i| bundle.shadow_train.sample(i)).collect()
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let (dataset, bundle) = load_split(cfg, &cfg.split)?;
    let target = train_model(&cfg.target, &bundle.target_train, &bundle.target_test)?;
    let shadow = train_model(&cfg.shadow, &bundle.shadow_train, &bundle.shadow_test)?;
    let reference = reference_pool(cfg, &bundle);
    Ok(Prepared {
        dataset,
        bundle,
        target,
        shadow,
        reference,
    })
}

impl Prepared {
    pub fn experiment<'a>(&'a self, cfg: &'a RunConfig) -> Experiment<'a> {
        Experiment {
            bundle: &self.bundle,
            target: &self.target.network,
            shadow: &self.shadow.network,
            reference: &self.reference,
            attack: &cfg.attack,
            utility: &cfg.utility,
            adversary: cfg.hardening.adversary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub architecture: String,
    pub epochs_trained: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub generalization_gap: f64,
}

impl ModelSummary {
    pub fn of(m: &TrainedModel) -> Self {
        Self {
            architecture: m.architecture.clone(),
            epochs_trained: m.log.len(),
            train_accuracy: m.train_accuracy,
            test_accuracy: m.test_accuracy,
            generalization_gap: m.train_accuracy - m.test_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub stage: String,
    pub wall_time_seconds: f64,
}

// ---------------------------------------------------------------- audit

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub method: ExplainerKind,
    pub family: Family,
    pub parameterized: bool,
    pub status: String,
    pub mls: Option<f64>,
    pub auc: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub best_seed: Option<usize>,
    pub attack_input_dim: Option<usize>,
    pub eval_members: Option<usize>,
    pub eval_nonmembers: Option<usize>,
    pub sanity_flagged_seeds: Option<usize>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageProfile {
    pub epsilon: f64,
    pub k_seeds: usize,
    pub target: ModelSummary,
    pub shadow: ModelSummary,
    pub rows: Vec<ProfileRow>,
}

fn profile_row(kind: ExplainerKind, report: Result<&AttackReport, String>) -> ProfileRow {
    let base = ProfileRow {
        method: kind,
        family: kind.family(),
        parameterized: kind.is_parameterized(),
        status: "ok".into(),
        mls: None,
        auc: None,
        balanced_accuracy: None,
        best_seed: None,
        attack_input_dim: None,
        eval_members: None,
        eval_nonmembers: None,
        sanity_flagged_seeds: None,
        note: String::new(),
    };
    match report {
        Ok(r) => ProfileRow {
            mls: Some(r.mls),
            auc: Some(r.auc),
            balanced_accuracy: Some(r.balanced_accuracy),
            best_seed: Some(r.best_seed),
            attack_input_dim: Some(r.attack_input_dim),
            eval_members: Some(r.eval_members),
            eval_nonmembers: Some(r.eval_nonmembers),
            sanity_flagged_seeds: Some(r.sanity_flagged_seeds.len()),
            ..base
        },
        Err(note) => ProfileRow {
            status: "skipped".into(),
            note,
            ..base
        },
    }
}

pub fn audit(cfg: &RunConfig, w: &mut RunWriter) -> Result<LeakageProfile, CliError> {
    let p = prepare(cfg)?;
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for &kind in &cfg.audit_explainers {
        if let Err(e) = kind.check_compatible(&p.target.network, p.reference.len()) {
            rows.push(profile_row(kind, Err(e.to_string())));
            continue;
        }
        let params = if kind == cfg.explainer {
            cfg.params.clone()
        } else {
            Default::default()
        };
        let start = Instant::now();
        let (report, _) = run_attack_protocol(
            &p.bundle,
            &p.target.network,
            &p.shadow.network,
            kind,
            &params,
            &p.reference,
            &cfg.attack,
        )?;
        timing.push(TimingRow {
            method: kind.name().into(),
            stage: "audit".into(),
            wall_time_seconds: start.elapsed().as_secs_f64(),
        });
        w.json(&format!("attack/{}.json", kind.name()), &report)?;
        w.with_path(&format!("roc/{}.csv", kind.name()), true, |path| {
            Ok(report.roc.write_csv(path)?)
        })?;
        rows.push(profile_row(kind, Ok(&report)));
    }
    let profile = LeakageProfile {
        epsilon: cfg.attack.epsilon,
        k_seeds: cfg.attack.k_seeds,
        target: ModelSummary::of(&p.target),
        shadow: ModelSummary::of(&p.shadow),
        rows,
    };
    w.csv("leakage_profile.csv", true, &profile.rows)?;
    w.json("leakage_profile.json", &profile)?;
    w.csv("timing.csv", false, &timing)?;
    Ok(profile)
}

// ---------------------------------------------------------------- harden

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardeningRow {
    pub method: ExplainerKind,
    pub strategy: String,
    pub trials: usize,
    pub pre_mls: f64,
    pub post_mls: f64,
    pub mls_reduction_percent: f64,
    pub pre_auc: f64,
    pub post_auc: f64,
    pub pre_balanced_accuracy: f64,
    pub post_balanced_accuracy: f64,
    pub pre_utility: f64,
    pub post_utility: f64,
    pub delta_s_percent: f64,
    pub direction: String,
    pub best_trial: usize,
    /// JSON of the selected parameters.
    pub theta: String,
}

fn emit_search<P: Serialize + Clone>(
    w: &mut RunWriter,
    kind: ExplainerKind,
    strategy: &str,
    res: &SearchResult<P>,
) -> Result<HardeningRow, CliError> {
    w.with_path("trials.csv", true, |path| Ok(write_trial_log(&res.trials, path)?))?;
    w.with_path("timing.csv", false, |path| Ok(write_timing_csv(&res.trials, path)?))?;
    w.with_path("pareto.json", true, |path| Ok(res.pareto_front().write_json(path)?))?;
    let pts: Vec<(f64, f64)> = res.trials.iter().map(|t| (t.mls, t.utility_loss_percent())).collect();
    let plot = svg::pareto_scatter(
        &pts,
        &res.front,
        Some(res.best),
        &format!("{} hardening trials", kind.name()),
    );
    svg::check_svg(&plot)?;
    w.bytes("pareto.svg", true, plot.as_bytes())?;
    let best = res.best_trial();
    let pre = res.baseline;
    let row = HardeningRow {
        method: kind,
        strategy: strategy.into(),
        trials: res.trials.len(),
        pre_mls: pre.mls,
        post_mls: best.mls,
        mls_reduction_percent: if pre.mls > 0.0 {
            (pre.mls - best.mls) / pre.mls * 100.0
        } else {
            0.0
        },
        pre_auc: pre.auc,
        post_auc: best.auc,
        pre_balanced_accuracy: pre.balanced_accuracy,
        post_balanced_accuracy: best.balanced_accuracy,
        pre_utility: pre.utility,
        post_utility: best.utility,
        delta_s_percent: best.delta_s_percent,
        direction: best.direction.name().into(),
        best_trial: res.best,
        theta: serde_json::to_string(&best.theta).map_err(|e| CliError::Runtime(e.to_string()))?,
    };
    w.csv("hardening.csv", true, std::slice::from_ref(&row))?;
    w.json("hardening.json", &row)?;
    Ok(row)
}

fn search_config(cfg: &RunConfig) -> SearchConfig {
    SearchConfig {
        trials: cfg.hardening.trials,
        n_explore: cfg.hardening.n_explore,
        seed: cfg.hardening.seed,
        ..SearchConfig::default()
    }
}

fn transform_space(cfg: &RunConfig, obj: &TransformObjective) -> Result<TransformSpace, CliError> {
    let values: Vec<f64> = obj
        .set
        .groups()
        .iter()
        .flat_map(|(_, g)| g.rows.iter().flatten().copied())
        .collect();
    let mut space = TransformSpace::from_attributions(&values, cfg.hardening.mask_mode)?;
    space.order = cfg.hardening.order.clone();
    Ok(space)
}

pub fn harden(cfg: &RunConfig, w: &mut RunWriter) -> Result<HardeningRow, CliError> {
    let p = prepare(cfg)?;
    let exp = p.experiment(cfg);
    let kind = cfg.explainer;
    if kind.is_parameterized() {
        let mut space = ExplainerSpace::default_for(kind, p.bundle.target_train.sample_shape());
        space.base = cfg.params.resolve(kind)?;
        let res = optimize_parameterized(&exp, &space, &search_config(cfg))?;
        emit_search(w, kind, "parameter_search", &res)
    } else {
        let obj = TransformObjective::prepare(&exp, kind, &cfg.params)?;
        let space = transform_space(cfg, &obj)?;
        let res = optimize_nonparameterized(&obj, &space, &search_config(cfg))?;
        emit_search(w, kind, "transform_search", &res)
    }
}

// ---------------------------------------------------------------- ablate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCsvRow {
    pub order: String,
    pub recommended: bool,
    pub pre_mls: f64,
    pub post_mls: f64,
    pub pre_utility: f64,
    pub post_utility: f64,
    pub delta_s_percent: f64,
    pub direction: String,
    pub theta: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageRow {
    pub variant: String,
    pub status: String,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub generalization_gap: Option<f64>,
    pub epochs_trained: Option<usize>,
    pub mls: Option<f64>,
    pub auc: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub note: String,
}

impl LeakageRow {
    fn measured(variant: String, model: &TrainedModel, r: &AttackReport) -> Self {
        Self {
            variant,
            status: "ok".into(),
            train_accuracy: Some(model.train_accuracy),
            test_accuracy: Some(model.test_accuracy),
            generalization_gap: Some(model.train_accuracy - model.test_accuracy),
            epochs_trained: Some(model.log.len()),
            mls: Some(r.mls),
            auc: Some(r.auc),
            balanced_accuracy: Some(r.balanced_accuracy),
            note: String::new(),
        }
    }

    fn skipped(variant: String, note: String) -> Self {
        Self {
            variant,
            status: "skipped".into(),
            train_accuracy: None,
            test_accuracy: None,
            generalization_gap: None,
            epochs_trained: None,
            mls: None,
            auc: None,
            balanced_accuracy: None,
            note,
        }
    }
}

fn attack(cfg: &RunConfig, bundle: &SplitBundle, target: &Network, shadow: &Network) -> Result<AttackReport, CliError> {
    let reference = reference_pool(cfg, bundle);
    let (r, _) = run_attack_protocol(
        bundle,
        target,
        shadow,
        cfg.explainer,
        &cfg.params,
        &reference,
        &cfg.attack,
    )?;
    Ok(r)
}

pub fn ablate(cfg: &RunConfig, which: Ablation, w: &mut RunWriter) -> Result<serde_json::Value, CliError> {
    let value = match which {
        Ablation::Ordering => {
            let p = prepare(cfg)?;
            let obj = TransformObjective::prepare(&p.experiment(cfg), cfg.explainer, &cfg.params)?;
            let grid = if cfg.ablation.ordering_grid.is_empty() {
                let values: Vec<f64> = obj
                    .set
                    .groups()
                    .iter()
                    .flat_map(|(_, g)| g.rows.iter().flatten().copied())
                    .collect();
                default_ordering_grid(&values, cfg.hardening.mask_mode, cfg.hardening.seed)
            } else {
                cfg.ablation.ordering_grid.clone()
            };
            let rows = ordering_ablation(&obj, &grid, &Order::all(), cfg.attack.execution)?;
            let csv_rows: Vec<OrderingCsvRow> = rows
                .iter()
                .map(|r| OrderingCsvRow {
                    order: r.order.to_string(),
                    recommended: r.recommended,
                    pre_mls: r.pre_mls,
                    post_mls: r.post_mls,
                    pre_utility: r.pre_utility,
                    post_utility: r.post_utility,
                    delta_s_percent: r.delta_s_percent,
                    direction: r.direction.name().into(),
                    theta: serde_json::to_string(&r.theta).unwrap_or_default(),
                })
                .collect();
            w.csv("ordering.csv", true, &csv_rows)?;
            serde_json::json!({ "grid": grid, "rows": rows })
        }
        Ablation::Disjoint => {
            let mut rows = Vec::new();
            for mode in [SplitMode::Subset, SplitMode::Disjoint] {
                let spec = SplitSpec {
                    mode,
                    ..cfg.split.clone()
                };
                let name = format!("{mode:?}").to_lowercase();
                let (_, bundle) = match load_split(cfg, &spec) {
                    Ok(b) => b,
                    Err(e) => {
                        rows.push(LeakageRow::skipped(name, e.to_string()));
                        continue;
                    }
                };
                let target = train_model(&cfg.target, &bundle.target_train, &bundle.target_test)?;
                let shadow = train_model(&cfg.shadow, &bundle.shadow_train, &bundle.shadow_test)?;
                let r = attack(cfg, &bundle, &target.network, &shadow.network)?;
                rows.push(LeakageRow::measured(name, &target, &r));
            }
            w.csv("disjoint.csv", true, &rows)?;
            serde_json::json!({ "rows": rows })
        }
        Ablation::CrossArchitecture => {
            let (_, bundle) = load_split(cfg, &cfg.split)?;
            let target = train_model(&cfg.target, &bundle.target_train, &bundle.target_test)?;
            let mut rows = Vec::new();
            for arch in Architecture::ALL {
                let shape = bundle.shadow_train.sample_shape();
                if let Err(e) = arch.layers(shape, bundle.shadow_train.num_classes()) {
                    rows.push(LeakageRow::skipped(arch.name().into(), e.to_string()));
                    continue;
                }
                let m = ModelConfig {
                    architecture: arch,
                    train: cfg.shadow.train.clone(),
                };
                let shadow = train_model(&m, &bundle.shadow_train, &bundle.shadow_test)?;
                let r = attack(cfg, &bundle, &target.network, &shadow.network)?;
                rows.push(LeakageRow::measured(arch.name().into(), &shadow, &r));
            }
            w.csv("cross_architecture.csv", true, &rows)?;
            serde_json::json!({ "target": ModelSummary::of(&target), "rows": rows })
        }
        Ablation::GeneralizationGap => {
            let (_, bundle) = load_split(cfg, &cfg.split)?;
            let mut rows = Vec::new();
            for goal in cfg.ablation.gap_targets {
                let stop = |m: &ModelConfig| ModelConfig {
                    architecture: m.architecture,
                    train: zoo::TrainConfig {
                        target_test_accuracy: Some(goal),
                        ..m.train.clone()
                    },
                };
                let target = train_model(&stop(&cfg.target), &bundle.target_train, &bundle.target_test)?;
                let shadow = train_model(&stop(&cfg.shadow), &bundle.shadow_train, &bundle.shadow_test)?;
                let r = attack(cfg, &bundle, &target.network, &shadow.network)?;
                rows.push(LeakageRow::measured(format!("test_accuracy_goal={goal}"), &target, &r));
            }
            w.csv("generalization_gap.csv", true, &rows)?;
            let diff = match (rows[0].mls, rows[1].mls) {
                (Some(a), Some(b)) => Some(b - a),
                _ => None,
            };
            serde_json::json!({ "rows": rows, "mls_difference": diff })
        }
    };
    w.json(&format!("{}.json", which.name()), &value)?;
    Ok(value)
}

// ---------------------------------------------------------------- train / explain

pub fn train(cfg: &RunConfig, w: &mut RunWriter) -> Result<(ModelSummary, ModelSummary), CliError> {
    let p = prepare(cfg)?;
    for (stem, m) in [("target", &p.target), ("shadow", &p.shadow)] {
        w.with_path(&format!("models/{stem}.xlk"), true, |path| {
            let mut f =
                std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| CliError::Runtime(e.to_string()))?);
            Ok(nn::write_network(&m.network, &mut f)?)
        })?;
        w.json(&format!("models/{stem}.json"), &m.metadata())?;
        w.with_path(&format!("models/{stem}_train_log.csv"), true, |path| {
            Ok(zoo::write_training_log(&m.log, path)?)
        })?;
    }
    w.json("split.json", &p.bundle.manifest(&p.dataset))?;
    let out = (ModelSummary::of(&p.target), ModelSummary::of(&p.shadow));
    w.json("models/summary.json", &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionDump {
    pub method: ExplainerKind,
    pub params: attrleak_core::explain::ExplainerParams,
    pub sample_index: usize,
    pub label: usize,
    pub predicted: usize,
    pub class_index: usize,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Serialize)]
struct FeatureRow {
    feature: usize,
    input: f64,
    attribution: f64,
}

pub fn explain_one(
    cfg: &RunConfig,
    index: usize,
    model: Option<&Path>,
    w: &mut RunWriter,
) -> Result<AttributionDump, CliError> {
    let (_, bundle) = load_split(cfg, &cfg.split)?;
    let network = match model {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "model file {} does not exist",
                    path.display()
                )));
            }
            zoo::load_network(path)?
        }
        None => train_model(&cfg.target, &bundle.target_train, &bundle.target_test)?.network,
    };
    let data = &bundle.target_test;
    if index >= data.len() {
        return Err(CliError::Config(format!(
            "sample index {index} out of range (target_test has {})",
            data.len()
        )));
    }
    let x = data.sample(index);
    let label = data.labels()[index];
    let predicted = network.predict(&x)?;
    let class_index = match cfg.attack.class_choice {
        ClassChoice::Label => label,
        ClassChoice::Predicted => predicted,
    };
    let reference = reference_pool(cfg, &bundle);
    cfg.explainer.check_compatible(&network, reference.len())?;
    let ctx = ExplainContext {
        model: &network,
        score: cfg.attack.score,
        reference: &reference,
    };
    let start = Instant::now();
    let map = explain(
        &ctx,
        cfg.explainer,
        &cfg.params,
        &x,
        class_index,
        derive_seed(cfg.seed, &[0xE8, index as u64]),
    )?;
    let dump = AttributionDump {
        method: cfg.explainer,
        params: map.params.clone(),
        sample_index: index,
        label,
        predicted,
        class_index,
        shape: map.values.shape().to_vec(),
        values: map.values.data().to_vec(),
    };
    w.json("attribution.json", &dump)?;
    let rows: Vec<FeatureRow> = dump
        .values
        .iter()
        .enumerate()
        .map(|(i, &a)| FeatureRow {
            feature: i,
            input: x.data().get(i).copied().unwrap_or(f64::NAN),
            attribution: a,
        })
        .collect();
    w.csv("attribution.csv", true, &rows)?;
    let timing = [TimingRow {
        method: cfg.explainer.name().into(),
        stage: "explain".into(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    }];
    w.csv("timing.csv", false, &timing)?;
    Ok(dump)
}

// ---------------------------------------------------------------- dispatch / replay

/// Runs `command` into `out` and writes its manifest.
pub fn execute(command: &Command, cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    let mut w = RunWriter::create(out)?;
    match command {
        Command::Audit => {
            audit(cfg, &mut w)?;
        }
        Command::Harden => {
            harden(cfg, &mut w)?;
        }
        Command::Ablate { which } => {
            ablate(cfg, *which, &mut w)?;
        }
        Command::Train => {
            train(cfg, &mut w)?;
        }
        Command::Explain { index, model } => {
            explain_one(cfg, *index, model.as_deref(), &mut w)?;
        }
    }
    w.finish(command.clone(), cfg)
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub original: RunManifest,
    pub replayed: RunManifest,
    pub mismatches: Vec<String>,
}

/// Re-runs the command recorded in a manifest and compares checksums of all
/// deterministic outputs.
pub fn replay(manifest: &Path, out: &Path) -> Result<ReplayOutcome, CliError> {
    let manifest = if manifest.is_dir() {
        manifest.join(MANIFEST_FILE)
    } else {
        manifest.to_path_buf()
    };
    let original = RunManifest::read(&manifest)?;
    let replayed = execute(&original.command, &original.config, out)?;
    let mismatches = output::inventory_mismatches(&original.files, &replayed.files);
    Ok(ReplayOutcome {
        original,
        replayed,
        mismatches,
    })
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub run: String,
    pub method: String,
    pub stage: String,
    pub entries: usize,
    pub total_seconds: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run: String,
    pub command: String,
    pub config_sha256: String,
    pub files: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardeningReportRow {
    pub run: String,
    #[serde(flatten)]
    pub row: HardeningRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReportRow {
    pub run: String,
    pub method: String,
    pub status: String,
    pub mls: Option<f64>,
    pub auc: Option<f64>,
    pub balanced_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<RunEntry>,
    pub hardening: Vec<HardeningReportRow>,
    pub leakage_profiles: Vec<ProfileReportRow>,
    pub runtime_overhead: Vec<RuntimeRow>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Sums wall times per (method, stage). Search timing files have no method
/// column; those rows are charged to `method`.
fn runtime_rows(run: &str, path: &Path, method: &str) -> Result<Vec<RuntimeRow>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::Runtime(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let t = col("wall_time_seconds")
        .ok_or_else(|| CliError::Runtime(format!("{}: no wall_time_seconds", path.display())))?;
    let (m, s) = (col("method"), col("stage"));
    let mut acc: BTreeMap<(String, String), (usize, f64)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Runtime(e.to_string()))?;
        let secs: f64 = rec[t]
            .parse()
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let key = (
            m.map_or(method.to_string(), |i| rec[i].to_string()),
            s.map_or("hardening".to_string(), |i| rec[i].to_string()),
        );
        let e = acc.entry(key).or_default();
        e.0 += 1;
        e.1 += secs;
    }
    Ok(acc
        .into_iter()
        .map(|((method, stage), (n, total))| RuntimeRow {
            run: run.to_string(),
            method,
            stage,
            entries: n,
            total_seconds: total,
            mean_seconds: total / n as f64,
        })
        .collect())
}

/// Consolidates every run directory below `input` into `out`.
pub fn report(input: &Path, out: &Path) -> Result<Report, CliError> {
    if !input.is_dir() {
        return Err(CliError::Config(format!(
            "run directory {} does not exist",
            input.display()
        )));
    }
    let out_abs = out.canonicalize().unwrap_or_else(|_| out.to_path_buf());
    let mut manifests: Vec<PathBuf> = walkdir::WalkDir::new(input)
        .max_depth(4)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name() == MANIFEST_FILE)
        .map(|e| e.into_path())
        .filter(|p| p.canonicalize().map(|c| !c.starts_with(&out_abs)).unwrap_or(true))
        .collect();
    manifests.sort();
    if manifests.is_empty() {
        return Err(CliError::Config(format!("no runs found under {}", input.display())));
    }
    let mut rep = Report {
        runs: Vec::new(),
        hardening: Vec::new(),
        leakage_profiles: Vec::new(),
        runtime_overhead: Vec::new(),
    };
    for path in &manifests {
        let dir = path.parent().unwrap_or(Path::new("."));
        let run = dir.strip_prefix(input).unwrap_or(dir).display().to_string();
        let run = if run.is_empty() { ".".to_string() } else { run };
        let m = RunManifest::read(path)?;
        rep.runs.push(RunEntry {
            run: run.clone(),
            command: m.command.label(),
            config_sha256: m.config_sha256.clone(),
            files: m.files.len(),
        });
        let method = m.config.explainer.name();
        match m.command {
            Command::Harden => {
                let row: HardeningRow = read_json(&dir.join("hardening.json"))?;
                rep.hardening.push(HardeningReportRow { run: run.clone(), row });
            }
            Command::Audit => {
                let profile: LeakageProfile = read_json(&dir.join("leakage_profile.json"))?;
                rep.leakage_profiles
                    .extend(profile.rows.into_iter().map(|r| ProfileReportRow {
                        run: run.clone(),
                        method: r.method.name().into(),
                        status: r.status,
                        mls: r.mls,
                        auc: r.auc,
                        balanced_accuracy: r.balanced_accuracy,
                    }));
            }
            _ => {}
        }
        let timing = dir.join("timing.csv");
        if timing.is_file() {
            rep.runtime_overhead.extend(runtime_rows(&run, &timing, method)?);
        }
    }

    let mut w = RunWriter::create(out)?;
    let mut json = serde_json::to_vec_pretty(&rep).map_err(|e| CliError::Runtime(e.to_string()))?;
    json.push(b'\n');
    w.bytes("report.json", false, &json)?;
    w.csv("runs.csv", true, &rep.runs)?;
    w.csv("runtime_overhead.csv", false, &rep.runtime_overhead)?;
    if !rep.hardening.is_empty() {
        let rows: Vec<HardeningRow> = rep.hardening.iter().map(|h| h.row.clone()).collect();
        w.csv("hardening_summary.csv", true, &rows)?;
    }
    if !rep.leakage_profiles.is_empty() {
        w.csv("leakage_profiles.csv", true, &rep.leakage_profiles)?;
        let ok: Vec<&ProfileReportRow> = rep.leakage_profiles.iter().filter(|r| r.mls.is_some()).collect();
        let labels: Vec<String> = ok.iter().map(|r| r.method.clone()).collect();
        let values: Vec<f64> = ok.iter().filter_map(|r| r.mls).collect();
        let plot = svg::bar_chart(&labels, &values, "Pre-hardening leakage per explainer", "MLS");
        svg::check_svg(&plot)?;
        w.bytes("leakage_profile.svg", true, plot.as_bytes())?;
    }
    let hardening_time: Vec<&RuntimeRow> = rep.runtime_overhead.iter().filter(|r| r.stage == "hardening").collect();
    let (labels, values): (Vec<String>, Vec<f64>) = if hardening_time.is_empty() {
        rep.runtime_overhead
            .iter()
            .map(|r| (format!("{}:{}", r.method, r.stage), r.total_seconds))
            .unzip()
    } else {
        hardening_time
            .iter()
            .map(|r| (r.method.clone(), r.total_seconds))
            .unzip()
    };
    let plot = svg::bar_chart(&labels, &values, "Hardening runtime overhead", "total wall time (s)");
    svg::check_svg(&plot)?;
    w.bytes("runtime_overhead.svg", false, plot.as_bytes())?;
    let files = w.files().to_vec();
    w.json("inventory.json", &files)?;
    Ok(rep)
}
