use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Ordering,
    Disjoint,
    CrossArchitecture,
    GeneralizationGap,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Ordering => "ordering",
            Ablation::Disjoint => "disjoint",
            Ablation::CrossArchitecture => "cross_architecture",
            Ablation::GeneralizationGap => "generalization_gap",
        }
    }
}

/// What produced a run directory, with the arguments needed to redo it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Command {
    Audit,
    Harden,
    Ablate {
        which: Ablation,
    },
    Train,
    Explain {
        index: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<PathBuf>,
    },
}

impl Command {
    pub fn label(&self) -> String {
        match self {
            Command::Audit => "audit".into(),
            Command::Harden => "harden".into(),
            Command::Ablate { which } => format!("ablate-{}", which.name()),
            Command::Train => "train".into(),
            Command::Explain { index, .. } => format!("explain-{index}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// False for wall-clock timing files, which differ between runs.
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub config_sha256: String,
    pub config: RunConfig,
    pub versions: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("manifest {} is malformed: {e}", path.display())))?;
        if config_hash(&m.config)? != m.config_sha256 {
            return Err(CliError::Config(format!(
                "manifest {} config hash does not match its config",
                path.display()
            )));
        }
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical config JSON, output location excluded.
pub fn config_hash(cfg: &RunConfig) -> Result<String, CliError> {
    let mut c = cfg.clone();
    c.output_dir = None;
    let bytes = serde_json::to_vec(&c).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(sha256_hex(&bytes))
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("attrleak-core".to_string(), attrleak_core::VERSION.to_string()),
        ("attrleak-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        (
            "model-format".to_string(),
            attrleak_core::nn::MODEL_FORMAT_VERSION.to_string(),
        ),
    ])
}

/// The only thing that writes into a run directory. Every file goes through
/// it so the manifest inventory is complete.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl RunWriter {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, CliError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Lets `write` produce `name`, then records its checksum.
    pub fn with_path<F>(&mut self, name: &str, deterministic: bool, write: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&Path) -> Result<(), CliError>,
    {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        write(&path)?;
        let bytes = std::fs::read(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
            deterministic,
        });
        Ok(path)
    }

    pub fn bytes(&mut self, name: &str, deterministic: bool, data: &[u8]) -> Result<PathBuf, CliError> {
        self.with_path(name, deterministic, |p| {
            std::fs::write(p, data).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
        })
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut data = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        data.push(b'\n');
        self.bytes(name, true, &data)
    }

    /// Writes serializable rows as CSV with the given header.
    pub fn csv<R: Serialize>(&mut self, name: &str, deterministic: bool, rows: &[R]) -> Result<PathBuf, CliError> {
        self.with_path(name, deterministic, |p| {
            let mut w = csv::Writer::from_path(p).map_err(|e| CliError::Runtime(e.to_string()))?;
            for r in rows {
                w.serialize(r).map_err(|e| CliError::Runtime(e.to_string()))?;
            }
            w.flush().map_err(|e| CliError::Runtime(e.to_string()))
        })
    }

    pub fn finish(self, command: Command, cfg: &RunConfig) -> Result<RunManifest, CliError> {
        let mut config = cfg.clone();
        config.output_dir = None;
        let mut files = self.files;
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            command,
            config_sha256: config_hash(&config)?,
            config,
            versions: versions(),
            seeds: cfg.stage_seeds().into_iter().collect(),
            files,
        };
        let mut data = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        data.push(b'\n');
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, data).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}

/// Deterministic files whose checksum differs between two inventories.
pub fn inventory_mismatches(expected: &[FileEntry], actual: &[FileEntry]) -> Vec<String> {
    let got: BTreeMap<&str, &FileEntry> = actual.iter().map(|f| (f.path.as_str(), f)).collect();
    let mut out = Vec::new();
    for f in expected.iter().filter(|f| f.deterministic) {
        match got.get(f.path.as_str()) {
            Some(g) if g.sha256 == f.sha256 => {}
            Some(_) => out.push(format!("{}: checksum differs", f.path)),
            None => out.push(format!("{}: missing", f.path)),
        }
    }
    for f in actual.iter().filter(|f| f.deterministic) {
        if !expected.iter().any(|e| e.path == f.path) {
            out.push(format!("{}: not in original run", f.path));
        }
    }
    out
}
