//! ProtoDash prototype selection with nonnegative weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProtoKernel {
    Linear,
    Gaussian { sigma: f64 },
}

impl ProtoKernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            ProtoKernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            ProtoKernel::Gaussian { sigma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtoResult {
    /// Candidate indices in selection order.
    pub prototypes: Vec<usize>,
    /// Weight of each selected prototype, aligned with `prototypes`.
    pub weights: Vec<f64>,
    /// Objective after each selection step.
    pub objective_trace: Vec<f64>,
    /// Weight per candidate (zero when not selected).
    pub attribution: Vec<f64>,
}

/// Maximizes `w.m - 0.5 w'Kw` over `w >= 0` restricted to `support` by
/// cyclic coordinate ascent.
fn refit(kmat: &[Vec<f64>], m: &[f64], support: &[usize]) -> (Vec<f64>, f64) {
    let s = support.len();
    let mut w = vec![0.0; s];
    for _ in 0..500 {
        let mut change = 0.0f64;
        for a in 0..s {
            let i = support[a];
            let kii = kmat[i][i];
            let rest: f64 = (0..s).filter(|&b| b != a).map(|b| kmat[i][support[b]] * w[b]).sum();
            let new = if kii > 0.0 { ((m[i] - rest) / kii).max(0.0) } else { 0.0 };
            change = change.max((new - w[a]).abs());
            w[a] = new;
        }
        if change < 1e-13 {
            break;
        }
    }
    (w.clone(), objective(kmat, m, support, &w))
}

fn objective(kmat: &[Vec<f64>], m: &[f64], support: &[usize], w: &[f64]) -> f64 {
    let lin: f64 = support.iter().zip(w).map(|(&i, wi)| wi * m[i]).sum();
    let mut quad = 0.0;
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            quad += w[a] * w[b] * kmat[i][j];
        }
    }
    lin - 0.5 * quad
}

/// Greedy selection: each step adds the candidate whose inclusion (with a
/// full nonnegative refit) raises the objective most. Stops early when no
/// candidate improves it.
pub fn protodash(targets: &[Vec<f64>], candidates: &[Vec<f64>], m: usize, kernel: ProtoKernel) -> Result<ProtoResult> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    if candidates.is_empty() {
        return Err(Error::Empty("protodash candidate set".into()));
    }
    if targets.is_empty() {
        return Err(Error::Empty("protodash target set".into()));
    }
    if let ProtoKernel::Gaussian { sigma } = kernel {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument("gaussian kernel needs sigma > 0".into()));
        }
    }
    let n = candidates.len();
    let mvec: Vec<f64> = candidates
        .iter()
        .map(|c| targets.iter().map(|t| kernel.eval(c, t)).sum::<f64>() / targets.len() as f64)
        .collect();
    let kmat: Vec<Vec<f64>> = candidates
        .iter()
        .map(|a| candidates.iter().map(|b| kernel.eval(a, b)).collect())
        .collect();
    let mut support: Vec<usize> = Vec::new();
    let mut weights = Vec::new();
    let mut trace = Vec::new();
    let mut current = 0.0;
    while support.len() < m.min(n) {
        let mut best: Option<(usize, Vec<f64>, f64)> = None;
        for j in (0..n).filter(|j| !support.contains(j)) {
            let mut trial = support.clone();
            trial.push(j);
            let (w, obj) = refit(&kmat, &mvec, &trial);
            if best.as_ref().is_none_or(|b| obj > b.2) {
                best = Some((j, w, obj));
            }
        }
        let Some((j, w, obj)) = best else { break };
        if obj <= current + 1e-15 && !support.is_empty() {
            break;
        }
        support.push(j);
        weights = w;
        current = obj.max(current);
        trace.push(current);
    }
    let mut attribution = vec![0.0; n];
    for (&i, &w) in support.iter().zip(&weights) {
        attribution[i] = w;
    }
    Ok(ProtoResult {
        prototypes: support,
        weights,
        objective_trace: trace,
        attribution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_never_decreases() {
        let targets = vec![vec![1.0, 0.5], vec![0.8, 0.7], vec![1.2, 0.4]];
        let cands = vec![
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![2.0, 2.0],
            vec![-1.0, 0.3],
            vec![1.0, 0.5],
        ];
        for kernel in [ProtoKernel::Linear, ProtoKernel::Gaussian { sigma: 2.0 }] {
            let r = protodash(&targets, &cands, 4, kernel).unwrap();
            assert!(r.objective_trace.windows(2).all(|w| w[1] >= w[0]));
            assert!(r.weights.iter().all(|&w| w >= 0.0));
        }
    }
}
