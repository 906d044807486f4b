//! Anchors: the smallest set of fixed segments that keeps the prediction
//! stable, found by beam search with Monte Carlo precision estimates.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::perturb::Segmentation;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub threshold: f64,
    pub tau: f64,
    pub delta: f64,
    pub beam_size: usize,
    pub p_sample: f64,
    pub coverage_samples: usize,
    pub batch_size: usize,
    pub baseline_value: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            threshold: 0.95,
            tau: 0.15,
            delta: 0.1,
            beam_size: 1,
            p_sample: 0.5,
            coverage_samples: 10_000,
            batch_size: 100,
            baseline_value: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorResult {
    /// Sorted segment ids held fixed.
    pub anchor: Vec<usize>,
    pub precision: f64,
    pub coverage: f64,
    /// False when no anchor met the threshold and the full set was returned.
    pub found: bool,
    /// 1 on anchored coordinates, 0 elsewhere.
    pub mask: Tensor,
}

struct Estimator<'a> {
    model: &'a Network,
    x: &'a Tensor,
    seg: &'a Segmentation,
    cfg: &'a AnchorConfig,
    label: usize,
    rng: rng::Rng,
}

impl Estimator<'_> {
    fn hoeffding(&self, n: usize) -> f64 {
        ((2.0 / self.cfg.delta).ln() / (2.0 * n as f64)).sqrt()
    }

    /// Returns `(precision estimate, accepted)`.
    fn precision(&mut self, anchor: &[bool]) -> Result<(f64, bool)> {
        let k = self.seg.count();
        let (mut hits, mut n) = (0usize, 0usize);
        let cap = self.cfg.coverage_samples.max(self.cfg.batch_size);
        let mut keep = vec![true; k];
        loop {
            for _ in 0..self.cfg.batch_size {
                for j in 0..k {
                    keep[j] = anchor[j] || !self.rng.gen_bool(self.cfg.p_sample);
                }
                let z = self.seg.apply(self.x, &keep, self.cfg.baseline_value);
                if self.model.predict(&z)? == self.label {
                    hits += 1;
                }
                n += 1;
            }
            let p = hits as f64 / n as f64;
            let eps = self.hoeffding(n);
            if p >= self.cfg.threshold && p - eps >= self.cfg.threshold - self.cfg.tau {
                return Ok((p, true));
            }
            if p + eps < self.cfg.threshold || n >= cap {
                return Ok((p, false));
            }
        }
    }
}

pub fn anchors(model: &Network, x: &Tensor, seg: &Segmentation, cfg: &AnchorConfig, seed: u64) -> Result<AnchorResult> {
    for (name, v) in [
        ("threshold", cfg.threshold),
        ("tau", cfg.tau),
        ("p_sample", cfg.p_sample),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1]")));
        }
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) || cfg.beam_size == 0 || cfg.batch_size == 0 || cfg.coverage_samples == 0 {
        return Err(Error::InvalidArgument(
            "delta in (0, 1); beam, batch and coverage sizes >= 1".into(),
        ));
    }
    let k = seg.count();
    let label = model.predict(x)?;
    let mut est = Estimator {
        model,
        x,
        seg,
        cfg,
        label,
        rng: rng::stream(seed, &[0]),
    };
    // coverage masks drawn once so coverage is comparable across anchors
    let mut cov_rng = rng::stream(seed, &[1]);
    let coverage_masks: Vec<Vec<bool>> = (0..cfg.coverage_samples)
        .map(|_| (0..k).map(|_| !cov_rng.gen_bool(cfg.p_sample)).collect())
        .collect();
    let coverage = |anchor: &[bool]| -> f64 {
        let ok = coverage_masks
            .iter()
            .filter(|m| anchor.iter().zip(m.iter()).all(|(&a, &kept)| !a || kept))
            .count();
        ok as f64 / coverage_masks.len() as f64
    };
    let finish = |anchor: Vec<bool>, precision: f64, found: bool| -> Result<AnchorResult> {
        let mask = seg.broadcast(&anchor.iter().map(|&a| f64::from(u8::from(a))).collect::<Vec<_>>())?;
        Ok(AnchorResult {
            coverage: coverage(&anchor),
            anchor: (0..k).filter(|&j| anchor[j]).collect(),
            precision,
            found,
            mask,
        })
    };

    let empty = vec![false; k];
    let (p0, ok0) = est.precision(&empty)?;
    if ok0 || cfg.threshold == 0.0 {
        return finish(empty, p0, true);
    }
    let mut beam = vec![empty];
    for _size in 1..=k {
        let mut scored: Vec<(Vec<bool>, f64, bool)> = Vec::new();
        for base in &beam {
            for j in 0..k {
                if base[j] {
                    continue;
                }
                let mut cand = base.clone();
                cand[j] = true;
                if scored.iter().any(|(c, _, _)| *c == cand) {
                    continue;
                }
                let (p, ok) = est.precision(&cand)?;
                scored.push((cand, p, ok));
            }
        }
        if scored.is_empty() {
            break;
        }
        let accepted = scored
            .iter()
            .filter(|s| s.2)
            .map(|s| (coverage(&s.0), s))
            .max_by(|a, b| a.0.total_cmp(&b.0).then(a.1 .1.total_cmp(&b.1 .1)));
        if let Some((_, best)) = accepted {
            return finish(best.0.clone(), best.1, true);
        }
        // stable sort keeps lower segment ids first among equal precision
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        beam = scored.into_iter().take(cfg.beam_size).map(|s| s.0).collect();
    }
    let full = vec![true; k];
    let (p, _) = est.precision(&full)?;
    finish(full, p, false)
}
