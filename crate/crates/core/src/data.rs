//! Datasets, CSV ingestion and the four-way target/shadow split.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, rng_from_seed};
use crate::tensor::Tensor;

/// Labeled samples stored as one `(N, ...sample_shape)` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    /// Free-form distribution tag, e.g. `"blobs"` or `"blobs+shift"`.
    pub distribution: String,
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        distribution: impl Into<String>,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.rank() < 2 {
            return Err(Error::InvalidArgument(
                "features must be (N, ...) with rank >= 2".into(),
            ));
        }
        if features.shape()[0] != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} samples but {} labels",
                features.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            name: name.into(),
            distribution: distribution.into(),
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn sample(&self, i: usize) -> Tensor {
        let d = self.sample_len();
        Tensor::from_parts(
            self.sample_shape().to_vec(),
            self.features.data()[i * d..(i + 1) * d].to_vec(),
        )
    }

    pub fn samples(&self) -> Vec<Tensor> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Empty("subset with no indices".into()));
        }
        let d = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!("index {i} out of range")));
            }
            data.extend_from_slice(&self.features.data()[i * d..(i + 1) * d]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        Ok(Dataset {
            name: self.name.clone(),
            distribution: self.distribution.clone(),
            features: Tensor::from_parts(shape, data),
            labels,
            num_classes: self.num_classes,
        })
    }

    /// Reinterprets every sample with a new shape of equal size, e.g. `[64]`
    /// to `[1, 8, 8]`.
    pub fn reshape_samples(&self, shape: &[usize]) -> Result<Dataset> {
        if shape.iter().product::<usize>() != self.sample_len() {
            return Err(Error::InvalidArgument(format!(
                "cannot reshape samples of {:?} into {shape:?}",
                self.sample_shape()
            )));
        }
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        Ok(Dataset {
            features: self.features.reshape(&full)?,
            ..self.clone()
        })
    }

    /// Per-feature (population) standard deviation.
    pub fn feature_std(&self) -> Vec<f64> {
        let d = self.sample_len();
        let n = self.len() as f64;
        let data = self.features.data();
        (0..d)
            .map(|j| {
                let mean = (0..self.len()).map(|i| data[i * d + j]).sum::<f64>() / n;
                let var = (0..self.len()).map(|i| (data[i * d + j] - mean).powi(2)).sum::<f64>() / n;
                var.sqrt()
            })
            .collect()
    }
}

/// Gaussian class blobs with unit noise. Class means are pairwise
/// `class_separation` apart when `num_classes <= d`; otherwise they lie on
/// random directions at radius `class_separation / sqrt(2)`.
pub fn make_synthetic(num_classes: usize, d: usize, n: usize, class_separation: f64, seed: u64) -> Result<Dataset> {
    if d < 2 || num_classes < 2 || n < num_classes {
        return Err(Error::InvalidArgument(format!(
            "degenerate synthetic sizes: classes={num_classes}, d={d}, n={n}"
        )));
    }
    if !(class_separation >= 0.0 && class_separation.is_finite()) {
        return Err(Error::InvalidArgument(
            "class_separation must be finite and >= 0".into(),
        ));
    }
    let radius = class_separation / 2f64.sqrt();
    let mut mean_rng = rng::stream(seed, &[1]);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|k| {
            if num_classes <= d {
                (0..d).map(|j| if j == k { radius } else { 0.0 }).collect()
            } else {
                let u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut mean_rng)).collect();
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                u.iter().map(|v| radius * v / norm).collect()
            }
        })
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    labels.shuffle(&mut rng::stream(seed, &[2]));
    let mut noise = rng::stream(seed, &[3]);
    let mut data = Vec::with_capacity(n * d);
    for &y in &labels {
        for m in &means[y] {
            let z: f64 = StandardNormal.sample(&mut noise);
            data.push(m + z);
        }
    }
    Dataset::new(
        "synthetic",
        "blobs",
        Tensor::new(vec![n, d], data)?,
        labels,
        num_classes,
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub has_header: bool,
    /// Label range; inferred as `max(label) + 1` when absent.
    pub num_classes: Option<usize>,
    /// Min-max scale each feature column to `[0, 1]`.
    #[serde(default)]
    pub scale_to_unit: bool,
    /// Optional per-sample shape, e.g. `[1, 8, 8]`; defaults to `[d]`.
    #[serde(default)]
    pub sample_shape: Option<Vec<usize>>,
}

/// Reads rows of `label, f1, ..., fd`. Row and column numbers in errors are
/// 1-based and count the header line if present.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let row_offset = if schema.has_header { 2 } else { 1 };
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut width: Option<usize> = None;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + row_offset;
        if record.len() < 2 {
            return Err(Error::CsvParse {
                row,
                column: record.len(),
                message: "expected a label and at least one feature".into(),
            });
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::CsvParse {
                    row,
                    column: record.len(),
                    message: format!("ragged row: expected {w} columns, found {}", record.len()),
                })
            }
            _ => {}
        }
        let label: usize = record[0].parse().map_err(|_| Error::CsvParse {
            row,
            column: 1,
            message: format!("label {:?} is not a non-negative integer", &record[0]),
        })?;
        if let Some(c) = schema.num_classes {
            if label >= c {
                return Err(Error::CsvParse {
                    row,
                    column: 1,
                    message: format!("label {label} outside [0, {c})"),
                });
            }
        }
        labels.push(label);
        for (c, cell) in record.iter().enumerate().skip(1) {
            let v: f64 = cell.parse().map_err(|_| Error::CsvParse {
                row,
                column: c + 1,
                message: format!("{cell:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::CsvParse {
                    row,
                    column: c + 1,
                    message: "non-finite value".into(),
                });
            }
            data.push(v);
        }
    }
    let d = width.ok_or_else(|| Error::Empty(format!("{} has no data rows", path.display())))? - 1;
    let n = labels.len();
    if schema.scale_to_unit {
        for j in 0..d {
            let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                (lo.min(data[i * d + j]), hi.max(data[i * d + j]))
            });
            let span = hi - lo;
            for i in 0..n {
                data[i * d + j] = if span > 0.0 { (data[i * d + j] - lo) / span } else { 0.0 };
            }
        }
    }
    let num_classes = schema
        .num_classes
        .unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    let name = path
        .file_stem()
        .map_or("csv".into(), |s| s.to_string_lossy().into_owned());
    let ds = Dataset::new(name, "csv", Tensor::new(vec![n, d], data)?, labels, num_classes)?;
    match &schema.sample_shape {
        Some(shape) => ds.reshape_samples(shape),
        None => Ok(ds),
    }
}

/// Writes `label, f1, ..., fd` rows with shortest round-trip float formatting.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>, header: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = ds.sample_len();
    if header {
        let mut h = vec!["label".to_string()];
        h.extend((0..d).map(|j| format!("f{j}")));
        w.write_record(&h)?;
    }
    for i in 0..ds.len() {
        let mut row = vec![ds.labels[i].to_string()];
        row.extend(ds.features.data()[i * d..(i + 1) * d].iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Shadow training set sampled from the target training set.
    #[default]
    Subset,
    /// All four subsets pairwise disjoint.
    Disjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftScope {
    /// Only the shadow model's non-members are shifted.
    #[default]
    ShadowOnly,
    /// Both the shadow and the target non-member pools are shifted.
    AllNonmembers,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonmemberSource {
    #[default]
    HoldoutInDistribution,
    /// Adds `offset_std * std_j` and `noise_std * std_j * N(0,1)` to feature
    /// `j` of every non-member, where `std_j` is the full-dataset feature std.
    ShiftedDistribution {
        offset_std: f64,
        noise_std: f64,
        #[serde(default)]
        scope: ShiftScope,
    },
}

impl NonmemberSource {
    pub fn default_shift() -> Self {
        NonmemberSource::ShiftedDistribution {
            offset_std: 0.5,
            noise_std: 0.25,
            scope: ShiftScope::ShadowOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub target_train: usize,
    pub target_test: usize,
    pub shadow_train: usize,
    pub shadow_test: usize,
    #[serde(default)]
    pub mode: SplitMode,
    #[serde(default)]
    pub nonmember_source: NonmemberSource,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub target_train: Vec<usize>,
    pub target_test: Vec<usize>,
    pub shadow_train: Vec<usize>,
    pub shadow_test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetRole {
    TargetTrain,
    TargetTest,
    ShadowTrain,
    ShadowTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Member,
    NonMember,
}

/// Manifest recording exactly which rows went where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub dataset: String,
    pub dataset_len: usize,
    pub spec: SplitSpec,
    pub indices: SplitIndices,
}

#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub target_train: Dataset,
    pub target_test: Dataset,
    pub shadow_train: Dataset,
    pub shadow_test: Dataset,
    pub indices: SplitIndices,
    pub spec: SplitSpec,
}

impl SplitBundle {
    pub fn get(&self, role: SubsetRole) -> &Dataset {
        match role {
            SubsetRole::TargetTrain => &self.target_train,
            SubsetRole::TargetTest => &self.target_test,
            SubsetRole::ShadowTrain => &self.shadow_train,
            SubsetRole::ShadowTest => &self.shadow_test,
        }
    }

    pub fn membership_wrt_target(&self, role: SubsetRole) -> Membership {
        match role {
            SubsetRole::TargetTrain => Membership::Member,
            SubsetRole::ShadowTrain if self.spec.mode == SplitMode::Subset => Membership::Member,
            _ => Membership::NonMember,
        }
    }

    pub fn membership_wrt_shadow(&self, role: SubsetRole) -> Membership {
        match role {
            SubsetRole::ShadowTrain => Membership::Member,
            SubsetRole::TargetTrain if self.spec.mode == SplitMode::Subset => {
                // members of the shadow only where they were sampled into it
                Membership::NonMember
            }
            _ => Membership::NonMember,
        }
    }

    pub fn manifest(&self, dataset: &Dataset) -> BundleManifest {
        BundleManifest {
            dataset: dataset.name.clone(),
            dataset_len: dataset.len(),
            spec: self.spec.clone(),
            indices: self.indices.clone(),
        }
    }
}

fn check_sizes(spec: &SplitSpec, n: usize) -> Result<()> {
    let sizes = [spec.target_train, spec.target_test, spec.shadow_train, spec.shadow_test];
    if sizes.contains(&0) {
        return Err(Error::InfeasibleSplit("every subset needs at least one sample".into()));
    }
    match spec.mode {
        SplitMode::Subset => {
            if spec.shadow_train > spec.target_train {
                return Err(Error::InfeasibleSplit(format!(
                    "shadow_train ({}) cannot be a subset of target_train ({})",
                    spec.shadow_train, spec.target_train
                )));
            }
            let need = spec.target_train + spec.target_test + spec.shadow_test;
            if need > n {
                return Err(Error::InfeasibleSplit(format!("needs {need} samples, dataset has {n}")));
            }
        }
        SplitMode::Disjoint => {
            let need: usize = sizes.iter().sum();
            if need > n {
                return Err(Error::OverlapRequired {
                    required: need,
                    available: n,
                });
            }
        }
    }
    Ok(())
}

/// Index-level split: uniform sampling without replacement under `spec.seed`.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    check_sizes(spec, n)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(spec.seed, &[10]));
    let (tt, te, st, sh) = (spec.target_train, spec.target_test, spec.shadow_train, spec.shadow_test);
    let target_train = perm[..tt].to_vec();
    let target_test = perm[tt..tt + te].to_vec();
    let (shadow_train, shadow_test) = match spec.mode {
        SplitMode::Subset => {
            let mut pick = target_train.clone();
            pick.shuffle(&mut rng::stream(spec.seed, &[11]));
            pick.truncate(st);
            (pick, perm[tt + te..tt + te + sh].to_vec())
        }
        SplitMode::Disjoint => (
            perm[tt + te..tt + te + st].to_vec(),
            perm[tt + te + st..tt + te + st + sh].to_vec(),
        ),
    };
    Ok(SplitIndices {
        target_train,
        target_test,
        shadow_train,
        shadow_test,
    })
}

fn apply_shift(ds: &Dataset, std: &[f64], offset: f64, noise: f64, seed: u64, stream: u64) -> Result<Dataset> {
    let mut rng = rng::stream(seed, &[12, stream]);
    let d = ds.sample_len();
    let mut data = ds.features.data().to_vec();
    for (k, v) in data.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(&mut rng);
        let s = std[k % d];
        *v += offset * s + noise * s * z;
    }
    let mut out = ds.clone();
    out.features = Tensor::new(ds.features.shape().to_vec(), data)?;
    if offset != 0.0 || noise != 0.0 {
        out.distribution = format!("{}+shift", ds.distribution);
    }
    Ok(out)
}

pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<SplitBundle> {
    let indices = split_indices(dataset.len(), spec)?;
    bundle_from_indices(dataset, spec, indices)
}

/// Rebuilds a bundle from recorded indices (see [`BundleManifest`]).
pub fn bundle_from_indices(dataset: &Dataset, spec: &SplitSpec, indices: SplitIndices) -> Result<SplitBundle> {
    let mut target_test = dataset.subset(&indices.target_test)?;
    let mut shadow_test = dataset.subset(&indices.shadow_test)?;
    if let NonmemberSource::ShiftedDistribution {
        offset_std,
        noise_std,
        scope,
    } = spec.nonmember_source
    {
        if !(offset_std.is_finite() && noise_std.is_finite() && noise_std >= 0.0) {
            return Err(Error::InvalidArgument(
                "shift parameters must be finite, noise >= 0".into(),
            ));
        }
        let std = dataset.feature_std();
        shadow_test = apply_shift(&shadow_test, &std, offset_std, noise_std, spec.seed, 0)?;
        if scope == ShiftScope::AllNonmembers {
            target_test = apply_shift(&target_test, &std, offset_std, noise_std, spec.seed, 1)?;
        }
    }
    Ok(SplitBundle {
        target_train: dataset.subset(&indices.target_train)?,
        shadow_train: dataset.subset(&indices.shadow_train)?,
        target_test,
        shadow_test,
        indices,
        spec: spec.clone(),
    })
}

/// Balanced per-class cap helper: first `k` indices of a deterministic
/// shuffle of `0..n`.
pub fn sample_without_replacement(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    idx.truncate(k.min(n));
    idx
}
