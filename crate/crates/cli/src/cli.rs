use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands;
use crate::config::{DatasetConfig, RunConfig};
use crate::output::{config_hash, Ablation, Command};
use crate::{CliError, OUT_ENV};

#[derive(Debug, Parser)]
#[command(
    name = "attrleak",
    version,
    about = "Audit and harden feature-attribution explanations against membership inference"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; the built-in desk scenario when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for this run.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override any config field, e.g. `--set attack.k_seeds=5`.
    #[arg(long = "set", value_name = "KEY=JSON", global = true)]
    pub overrides: Vec<String>,
    /// Re-derive every stage seed from this master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub explainer: Option<String>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub k_seeds: Option<usize>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true)]
    pub n_explore: Option<usize>,
    /// CSV dataset (`label,f1,...,fd` per row) instead of the configured one.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AblationArg {
    Ordering,
    Disjoint,
    CrossArchitecture,
    GeneralizationGap,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Ordering => Ablation::Ordering,
            AblationArg::Disjoint => Ablation::Disjoint,
            AblationArg::CrossArchitecture => Ablation::CrossArchitecture,
            AblationArg::GeneralizationGap => Ablation::GeneralizationGap,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Pre-hardening leakage of every configured explainer.
    Audit,
    /// Search hardening parameters for the configured explainer.
    Harden,
    /// Run one ablation study.
    Ablate {
        #[arg(value_enum)]
        which: AblationArg,
    },
    /// Consolidate run directories into report tables and plots.
    Report {
        /// Directory containing one or more run directories.
        dir: PathBuf,
    },
    /// Train and save the target and shadow models.
    Train,
    /// Attribution for one target hold-out sample.
    Explain {
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Saved network to explain instead of training the target.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Re-run a recorded run and compare output checksums.
    Replay {
        /// A manifest.json or the run directory holding it.
        manifest: PathBuf,
    },
    /// Print the resolved configuration as JSON.
    ShowConfig,
}

impl GlobalArgs {
    pub fn resolve_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.reseed(s);
        }
        let mut sets = Vec::new();
        if let Some(e) = &self.explainer {
            sets.push(format!("explainer={}", serde_json::Value::String(e.clone())));
        }
        if let Some(v) = self.epsilon {
            sets.push(format!("attack.epsilon={v}"));
        }
        if let Some(v) = self.k_seeds {
            sets.push(format!("attack.k_seeds={v}"));
        }
        if let Some(v) = self.trials {
            sets.push(format!("hardening.trials={v}"));
        }
        if let Some(v) = self.n_explore {
            sets.push(format!("hardening.n_explore={v}"));
        }
        sets.extend(self.overrides.iter().cloned());
        let mut cfg = cfg.with_overrides(&sets)?;
        if let Some(path) = &self.data {
            let schema = match &cfg.dataset {
                DatasetConfig::Csv { schema, .. } => schema.clone(),
                _ => Default::default(),
            };
            cfg.dataset = DatasetConfig::Csv {
                path: path.clone(),
                schema,
            };
            cfg.validate()?;
        }
        Ok(cfg)
    }
}

/// `--out`, then the config's `output_dir`, then `$ATTRLEAK_OUT/<label>-<hash>`,
/// then `attrleak-runs/<label>-<hash>`.
pub fn output_dir(explicit: Option<&Path>, cfg: &RunConfig, command: &Command) -> Result<PathBuf, CliError> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    if let Some(p) = &cfg.output_dir {
        return Ok(p.clone());
    }
    let root = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("attrleak-runs"));
    let hash = config_hash(cfg)?;
    Ok(root.join(format!("{}-{}", command.label(), &hash[..12])))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let command = match &cli.verb {
        Verb::Audit => Command::Audit,
        Verb::Harden => Command::Harden,
        Verb::Ablate { which } => Command::Ablate { which: (*which).into() },
        Verb::Train => Command::Train,
        Verb::Explain { index, model } => Command::Explain {
            index: *index,
            model: model.clone(),
        },
        Verb::Report { dir } => {
            let out = g.out.clone().unwrap_or_else(|| dir.join("report"));
            let rep = commands::report(dir, &out)?;
            println!("report: {} runs -> {}", rep.runs.len(), out.display());
            for r in &rep.runtime_overhead {
                println!(
                    "  {:<24} {:<10} {:>4} entries {:>10.3} s",
                    r.method, r.stage, r.entries, r.total_seconds
                );
            }
            return Ok(());
        }
        Verb::Replay { manifest } => {
            let src = if manifest.is_dir() {
                manifest.clone()
            } else {
                manifest.parent().map(Path::to_path_buf).unwrap_or_default()
            };
            let out = g.out.clone().unwrap_or_else(|| src.join("replay"));
            let o = commands::replay(manifest, &out)?;
            if o.mismatches.is_empty() {
                let n = o.original.files.iter().filter(|f| f.deterministic).count();
                println!(
                    "replay of {} matches: {n} deterministic files identical ({})",
                    o.original.command.label(),
                    out.display()
                );
                return Ok(());
            }
            for m in &o.mismatches {
                eprintln!("mismatch: {m}");
            }
            return Err(CliError::Runtime(format!(
                "{} files differ from the recorded run",
                o.mismatches.len()
            )));
        }
        Verb::ShowConfig => {
            let cfg = g.resolve_config()?;
            println!(
                "{}",
                serde_json::to_string_pretty(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?
            );
            return Ok(());
        }
    };
    let cfg = g.resolve_config()?;
    let out = output_dir(g.out.as_deref(), &cfg, &command)?;
    let manifest = commands::execute(&command, &cfg, &out)?;
    summarize(&command, &out);
    println!(
        "{} files written to {} (config {})",
        manifest.files.len(),
        out.display(),
        &manifest.config_sha256[..12]
    );
    Ok(())
}

fn summarize(command: &Command, out: &Path) {
    let show = |name: &str| {
        if let Ok(text) = std::fs::read_to_string(out.join(name)) {
            print!("{text}");
        }
    };
    match command {
        Command::Audit => show("leakage_profile.csv"),
        Command::Harden => show("hardening.csv"),
        Command::Ablate { which } => show(&format!("{}.csv", which.name())),
        Command::Train => show("models/summary.json"),
        Command::Explain { .. } => show("attribution.csv"),
    }
}
