//! Perturbation-based attributions: occlusion, grid segmentation, KernelSHAP
//! and LIME.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Network, Target};
use crate::rng;
use crate::tensor::Tensor;

/// Expands a window or stride spec to the input rank. A full-rank spec is used
/// as is, a single entry is repeated on every axis and a spec one shorter
/// than the input spans the whole leading (channel) axis.
pub fn expand_window(input_shape: &[usize], spec: &[usize]) -> Result<Vec<usize>> {
    let rank = input_shape.len();
    let out = if spec.len() == rank {
        spec.to_vec()
    } else if spec.len() == 1 {
        vec![spec[0]; rank]
    } else if spec.len() + 1 == rank {
        let mut v = vec![input_shape[0]];
        v.extend_from_slice(spec);
        v
    } else {
        return Err(Error::InvalidArgument(format!(
            "window {spec:?} does not fit input rank {rank}"
        )));
    };
    if out.contains(&0) {
        return Err(Error::InvalidArgument("window and stride entries must be >= 1".into()));
    }
    Ok(out)
}

/// Mean change `f_c(x) - f_c(x_occluded)` over all windows covering each
/// coordinate. Coordinates no window covers get 0.
pub fn occlusion(
    model: &Network,
    x: &Tensor,
    target: Target,
    window: &[usize],
    strides: &[usize],
    baseline_value: f64,
) -> Result<Tensor> {
    let shape = x.shape();
    let window = expand_window(shape, window)?;
    let strides = expand_window(shape, strides)?;
    if window.iter().zip(shape).any(|(w, d)| w > d) {
        return Err(Error::InvalidArgument(format!(
            "window {window:?} larger than input {shape:?}"
        )));
    }
    let rank = shape.len();
    let counts: Vec<usize> = (0..rank).map(|a| (shape[a] - window[a]) / strides[a] + 1).collect();
    let mut row_stride = vec![1usize; rank];
    for a in (0..rank.saturating_sub(1)).rev() {
        row_stride[a] = row_stride[a + 1] * shape[a + 1];
    }
    let full = model.score(x, target)?;
    let mut total = vec![0.0; x.len()];
    let mut hits = vec![0u32; x.len()];
    let mut pos = vec![0usize; rank];
    let mut covered = Vec::new();
    loop {
        covered.clear();
        let mut idx = vec![0usize; rank];
        loop {
            covered.push(
                (0..rank)
                    .map(|a| (pos[a] * strides[a] + idx[a]) * row_stride[a])
                    .sum::<usize>(),
            );
            if !advance(&mut idx, &window) {
                break;
            }
        }
        let mut occluded = x.clone();
        for &i in &covered {
            occluded.data_mut()[i] = baseline_value;
        }
        let diff = full - model.score(&occluded, target)?;
        for &i in &covered {
            total[i] += diff;
            hits[i] += 1;
        }
        if !advance(&mut pos, &counts) {
            break;
        }
    }
    let data = total
        .iter()
        .zip(&hits)
        .map(|(t, &h)| if h == 0 { 0.0 } else { t / h as f64 })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

// Row-major odometer step; false once every index has wrapped.
fn advance(idx: &mut [usize], limits: &[usize]) -> bool {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < limits[a] {
            return true;
        }
        idx[a] = 0;
    }
    false
}

/// Assignment of every input coordinate to one of `count` segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    shape: Vec<usize>,
    ids: Vec<usize>,
    count: usize,
}

impl Segmentation {
    pub fn identity(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            ids: (0..n).collect(),
            count: n,
        }
    }

    pub fn from_ids(shape: &[usize], ids: Vec<usize>) -> Result<Self> {
        if ids.len() != shape.iter().product::<usize>() {
            return Err(Error::InvalidArgument("segment id count does not match shape".into()));
        }
        let count = ids.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; count];
        for &i in &ids {
            seen[i] = true;
        }
        if count == 0 || seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("segment ids must cover 0..count".into()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            ids,
            count,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Copy of `x` with every segment whose `keep` flag is false set to
    /// `baseline_value`.
    pub fn apply(&self, x: &Tensor, keep: &[bool], baseline_value: f64) -> Tensor {
        let mut out = x.clone();
        for (v, &id) in out.data_mut().iter_mut().zip(&self.ids) {
            if !keep[id] {
                *v = baseline_value;
            }
        }
        out
    }

    /// Spreads one value per segment over the coordinates of that segment.
    pub fn broadcast(&self, per_segment: &[f64]) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.ids.iter().map(|&i| per_segment[i]).collect())
    }
}

/// Number of segments a grid over `input_shape` can hold: spatial cells for
/// `(H, W)` and `(C, H, W)` inputs, coordinates otherwise.
pub fn grid_capacity(input_shape: &[usize]) -> usize {
    match input_shape {
        [h, w] | [_, h, w] => h * w,
        _ => input_shape.iter().product(),
    }
}

/// Grid segmentation. Flat inputs are cut into contiguous chunks; images get
/// `r` horizontal bands with the cells spread evenly across bands. Among the
/// band counts whose worst cell aspect ratio stays within
/// `1 + 1 / compactness`, the fewest bands win; if none qualifies the most
/// square layout is used.
pub fn segment_grid(input_shape: &[usize], n_segments: usize, compactness: f64) -> Result<Segmentation> {
    if n_segments == 0 {
        return Err(Error::InvalidArgument("n_segments must be >= 1".into()));
    }
    if !(compactness > 0.0) {
        return Err(Error::InvalidArgument("compactness must be > 0".into()));
    }
    let capacity = grid_capacity(input_shape);
    if n_segments > capacity {
        return Err(Error::InvalidArgument(format!(
            "{n_segments} segments exceed {capacity} coordinates"
        )));
    }
    let (h, w, channels) = match *input_shape {
        [h, w] => (h, w, 1),
        [c, h, w] => (h, w, c),
        _ => {
            let d = capacity;
            let ids = (0..d).map(|i| i * n_segments / d).collect();
            return Segmentation::from_ids(input_shape, ids);
        }
    };
    let n = n_segments;
    let band_cols = |r: usize| -> Vec<usize> { (0..r).map(|i| n / r + usize::from(i < n % r)).collect() };
    let badness = |r: usize| -> f64 {
        let ch = h as f64 / r as f64;
        band_cols(r)
            .iter()
            .map(|&c| (ch / (w as f64 / c as f64)).ln().abs())
            .fold(0.0, f64::max)
    };
    let candidates: Vec<usize> = (1..=n.min(h))
        .filter(|&r| band_cols(r).iter().all(|&c| c <= w))
        .collect();
    let tolerance = (1.0 + 1.0 / compactness).ln();
    let rows = candidates
        .iter()
        .copied()
        .find(|&r| badness(r) <= tolerance + 1e-12)
        .or_else(|| {
            candidates
                .iter()
                .copied()
                .min_by(|&a, &b| badness(a).total_cmp(&badness(b)))
        })
        .ok_or_else(|| Error::InvalidArgument(format!("no grid layout for {n} segments on {h}x{w}")))?;
    let cols = band_cols(rows);
    let mut first_id = vec![0; rows];
    for i in 1..rows {
        first_id[i] = first_id[i - 1] + cols[i - 1];
    }
    let mut plane = vec![0usize; h * w];
    for y in 0..h {
        let band = y * rows / h;
        for x in 0..w {
            plane[y * w + x] = first_id[band] + x * cols[band] / w;
        }
    }
    let ids = (0..channels).flat_map(|_| plane.iter().copied()).collect();
    Segmentation::from_ids(input_shape, ids)
}

fn masked_score(
    model: &Network,
    x: &Tensor,
    target: Target,
    seg: &Segmentation,
    keep: &[bool],
    baseline: f64,
) -> Result<f64> {
    model.score(&seg.apply(x, keep, baseline), target)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Largest segment count solved by exhaustive coalition enumeration.
pub const EXACT_SHAP_MAX_SEGMENTS: usize = 12;

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    a.cholesky()
        .map(|c| c.solve(&b))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular(format!("{what}: weighted design is singular")))
}

/// Per-segment KernelSHAP values. Efficiency holds by construction: the last
/// segment's value is eliminated through `sum(phi) = f(x) - f(baseline)`.
pub fn kernel_shap_segments(
    model: &Network,
    x: &Tensor,
    target: Target,
    seg: &Segmentation,
    n_samples: usize,
    baseline_value: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let k = seg.count();
    let f1 = model.score(x, target)?;
    let f0 = masked_score(model, x, target, seg, &vec![false; k], baseline_value)?;
    if k == 1 {
        return Ok(vec![f1 - f0]);
    }
    let mut coalitions: Vec<(Vec<bool>, f64)> = Vec::new();
    if k <= EXACT_SHAP_MAX_SEGMENTS {
        for mask in 1u32..(1 << k) - 1 {
            let z: Vec<bool> = (0..k).map(|j| mask >> j & 1 == 1).collect();
            let s = mask.count_ones() as usize;
            let weight = (k - 1) as f64 / (binomial(k, s) * s as f64 * (k - s) as f64);
            coalitions.push((z, weight));
        }
    } else {
        if n_samples < k + 2 {
            return Err(Error::TooFewSamples {
                required: k + 2,
                actual: n_samples,
            });
        }
        let mut rng = rng::rng_from_seed(seed);
        let size_w: Vec<f64> = (1..k).map(|s| 1.0 / (s * (k - s)) as f64).collect();
        let total: f64 = size_w.iter().sum();
        let mut order: Vec<usize> = (0..k).collect();
        for _ in 0..n_samples {
            let mut u = rng.gen::<f64>() * total;
            let mut s = k - 1;
            for (i, w) in size_w.iter().enumerate() {
                if u < *w {
                    s = i + 1;
                    break;
                }
                u -= w;
            }
            order.shuffle(&mut rng);
            let mut z = vec![false; k];
            for &j in &order[..s] {
                z[j] = true;
            }
            coalitions.push((z, 1.0));
        }
    }
    let m = k - 1;
    let delta = f1 - f0;
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    let mut row = vec![0.0; m];
    for (z, w) in &coalitions {
        let y = masked_score(model, x, target, seg, z, baseline_value)? - f0 - if z[m] { delta } else { 0.0 };
        let last = f64::from(u8::from(z[m]));
        for j in 0..m {
            row[j] = f64::from(u8::from(z[j])) - last;
        }
        for i in 0..m {
            if row[i] == 0.0 {
                continue;
            }
            b[i] += w * row[i] * y;
            for j in 0..m {
                a[(i, j)] += w * row[i] * row[j];
            }
        }
    }
    let sol = solve_spd(a, b, "kernel_shap")?;
    let mut phi: Vec<f64> = sol.iter().copied().collect();
    phi.push(delta - phi.iter().sum::<f64>());
    Ok(phi)
}

pub fn kernel_shap(
    model: &Network,
    x: &Tensor,
    target: Target,
    seg: &Segmentation,
    n_samples: usize,
    baseline_value: f64,
    seed: u64,
) -> Result<Tensor> {
    seg.broadcast(&kernel_shap_segments(
        model,
        x,
        target,
        seg,
        n_samples,
        baseline_value,
        seed,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub n_samples: usize,
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    /// Use every one of the `2^k` masks instead of sampling.
    pub exhaustive: bool,
    pub baseline_value: f64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            kernel_width: 0.25,
            ridge_lambda: 1.0,
            exhaustive: false,
            baseline_value: 0.0,
        }
    }
}

/// Cosine distance between a binary mask and the all-ones mask.
pub fn lime_distance(z: &[bool]) -> f64 {
    let on = z.iter().filter(|&&b| b).count() as f64;
    if on == 0.0 {
        1.0
    } else {
        1.0 - (on / z.len() as f64).sqrt()
    }
}

/// Weighted ridge surrogate coefficients per segment (intercept unpenalized
/// and dropped).
pub fn lime_segments(
    model: &Network,
    x: &Tensor,
    target: Target,
    seg: &Segmentation,
    cfg: &LimeConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let k = seg.count();
    if !(cfg.kernel_width > 0.0) || !(cfg.ridge_lambda >= 0.0) {
        return Err(Error::InvalidArgument(
            "kernel_width must be > 0 and ridge_lambda >= 0".into(),
        ));
    }
    let masks: Vec<Vec<bool>> = if cfg.exhaustive {
        if k > 16 {
            return Err(Error::InvalidArgument(format!("exhaustive LIME with {k} segments")));
        }
        (0u32..1 << k)
            .rev()
            .map(|mask| (0..k).map(|j| mask >> j & 1 == 1).collect())
            .collect()
    } else {
        if cfg.n_samples < k + 2 {
            return Err(Error::TooFewSamples {
                required: k + 2,
                actual: cfg.n_samples,
            });
        }
        let mut rng = rng::rng_from_seed(seed);
        let mut v = vec![vec![true; k]];
        for _ in 1..cfg.n_samples {
            v.push((0..k).map(|_| rng.gen_bool(0.5)).collect());
        }
        v
    };
    let p = k + 1;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    row[0] = 1.0;
    for z in &masks {
        let y = masked_score(model, x, target, seg, z, cfg.baseline_value)?;
        let d = lime_distance(z);
        let w = (-d * d / (cfg.kernel_width * cfg.kernel_width)).exp();
        for j in 0..k {
            row[j + 1] = f64::from(u8::from(z[j]));
        }
        for i in 0..p {
            b[i] += w * row[i] * y;
            for j in 0..p {
                a[(i, j)] += w * row[i] * row[j];
            }
        }
    }
    for j in 1..p {
        a[(j, j)] += cfg.ridge_lambda;
    }
    let sol = solve_spd(a, b, "lime")?;
    Ok(sol.iter().skip(1).copied().collect())
}

pub fn lime(
    model: &Network,
    x: &Tensor,
    target: Target,
    seg: &Segmentation,
    cfg: &LimeConfig,
    seed: u64,
) -> Result<Tensor> {
    seg.broadcast(&lime_segments(model, x, target, seg, cfg, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_segment_is_all_zero_ids() {
        let s = segment_grid(&[7], 1, 20.0).unwrap();
        assert_eq!(s.ids(), &[0; 7]);
        let s = segment_grid(&[2, 4, 4], 1, 20.0).unwrap();
        assert!(s.ids().iter().all(|&i| i == 0));
    }

    #[test]
    fn flat_identity_when_n_equals_d() {
        let s = segment_grid(&[5], 5, 20.0).unwrap();
        assert_eq!(s.ids(), &[0, 1, 2, 3, 4]);
        assert!(segment_grid(&[5], 6, 20.0).is_err());
    }

    #[test]
    fn quadrants_on_8x8() {
        let s = segment_grid(&[8, 8], 4, 20.0).unwrap();
        let mut expected = vec![0; 64];
        for y in 0..8 {
            for x in 0..8 {
                expected[y * 8 + x] = (y / 4) * 2 + x / 4;
            }
        }
        assert_eq!(s.ids(), &expected[..]);
    }

    #[test]
    fn grid_ids_are_contiguous_for_many_counts() {
        for n in 1..=64 {
            for c in [1.0, 5.0, 20.0] {
                let s = segment_grid(&[3, 8, 8], n, c).unwrap();
                assert_eq!(s.count(), n);
            }
        }
    }

    #[test]
    fn low_compactness_allows_elongated_cells() {
        // 2 segments on 8x8: two 8x4 halves have aspect 2
        let loose = segment_grid(&[8, 8], 2, 1.0).unwrap();
        assert_eq!(loose.count(), 2);
        let strip = segment_grid(&[4, 16], 4, 100.0).unwrap();
        // one band of four 4x4 cells is perfectly square
        assert_eq!(&strip.ids()[..16], &[0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3]);
    }

    #[test]
    fn window_expansion() {
        assert_eq!(expand_window(&[3, 8, 8], &[2, 2]).unwrap(), vec![3, 2, 2]);
        assert_eq!(expand_window(&[3, 8, 8], &[1]).unwrap(), vec![1, 1, 1]);
        assert!(expand_window(&[3, 8, 8], &[1, 2, 3, 4]).is_err());
    }

    #[test]
    fn lime_distance_endpoints() {
        assert_eq!(lime_distance(&[true, true, true]), 0.0);
        assert_eq!(lime_distance(&[false, false]), 1.0);
    }
}
