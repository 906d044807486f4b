//! Exact ROC curves, AUC and TPR at a fixed FPR level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One operating point: predicting "member" for every score `>= threshold`
/// yields `tp` true and `fp` false positives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "float_or_inf")]
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Starts at `(0, 0)` with threshold `+inf` and ends at `(P, N)`.
    pub points: Vec<RocPoint>,
    pub positives: usize,
    pub negatives: usize,
}

pub(crate) mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(serde::de::Error::custom(format!("bad float {t:?}"))),
            },
        }
    }
}

impl RocCurve {
    /// Builds the curve over all distinct scores; tied scores share one
    /// threshold.
    pub fn new(member_scores: &[f64], nonmember_scores: &[f64]) -> Result<Self> {
        if member_scores.is_empty() || nonmember_scores.is_empty() {
            return Err(Error::Empty("ROC needs both member and non-member scores".into()));
        }
        if member_scores.iter().chain(nonmember_scores).any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("NaN attack score".into()));
        }
        let mut all: Vec<(f64, bool)> = member_scores
            .iter()
            .map(|&s| (s, true))
            .chain(nonmember_scores.iter().map(|&s| (s, false)))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut points = vec![RocPoint {
            threshold: f64::INFINITY,
            tp: 0,
            fp: 0,
        }];
        let (mut tp, mut fp) = (0, 0);
        let mut i = 0;
        while i < all.len() {
            let t = all[i].0;
            while i < all.len() && all[i].0 == t {
                if all[i].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            points.push(RocPoint { threshold: t, tp, fp });
        }
        Ok(Self {
            points,
            positives: member_scores.len(),
            negatives: nonmember_scores.len(),
        })
    }

    pub fn fpr(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| p.fp as f64 / self.negatives as f64)
            .collect()
    }

    pub fn tpr(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| p.tp as f64 / self.positives as f64)
            .collect()
    }

    /// Trapezoidal area, computed on integer counts so that it equals the
    /// pairwise-comparison probability (ties counted one half) exactly.
    pub fn auc(&self) -> f64 {
        let mut twice_area: u128 = 0;
        for w in self.points.windows(2) {
            twice_area += ((w[1].fp - w[0].fp) * (w[0].tp + w[1].tp)) as u128;
        }
        twice_area as f64 / (2 * self.positives * self.negatives) as f64
    }

    /// Highest TPR among thresholds whose empirical FPR is at most
    /// `epsilon`.
    pub fn tpr_at_fpr(&self, epsilon: f64) -> f64 {
        let n = self.negatives as f64;
        self.points
            .iter()
            .filter(|p| p.fp as f64 / n <= epsilon)
            .map(|p| p.tp)
            .max()
            .unwrap_or(0) as f64
            / self.positives as f64
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["threshold", "fpr", "tpr"])?;
        for (p, (f, t)) in self.points.iter().zip(self.fpr().into_iter().zip(self.tpr())) {
            let th = if p.threshold.is_finite() {
                p.threshold.to_string()
            } else {
                "inf".to_string()
            };
            w.write_record([th, f.to_string(), t.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Membership leakage score: TPR at empirical FPR `<= epsilon`.
pub fn mls(roc: &RocCurve, epsilon: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1)")));
    }
    Ok(roc.tpr_at_fpr(epsilon))
}

pub fn auc(roc: &RocCurve) -> f64 {
    roc.auc()
}

/// Mean of TPR and TNR when predicting "member" for `score >= threshold`.
pub fn balanced_accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument("scores and labels differ in length".into()));
    }
    let (mut tp, mut p, mut tn, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        if y {
            p += 1;
            tp += usize::from(s >= threshold);
        } else {
            n += 1;
            tn += usize::from(s < threshold);
        }
    }
    if p == 0 || n == 0 {
        return Err(Error::SingleClass);
    }
    Ok(0.5 * (tp as f64 / p as f64 + tn as f64 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let roc = RocCurve::new(&[0.9, 0.8], &[0.1, 0.2]).unwrap();
        assert_eq!(roc.auc(), 1.0);
        assert_eq!(mls(&roc, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn all_tied_is_diagonal() {
        let roc = RocCurve::new(&[0.5; 3], &[0.5; 4]).unwrap();
        assert_eq!(roc.points.len(), 2);
        assert_eq!(roc.auc(), 0.5);
        assert_eq!(roc.fpr(), vec![0.0, 1.0]);
        assert_eq!(roc.tpr(), vec![0.0, 1.0]);
    }

    #[test]
    fn zero_epsilon_with_top_nonmember() {
        let roc = RocCurve::new(&[0.5, 0.6], &[0.9, 0.1]).unwrap();
        assert_eq!(mls(&roc, 0.0).unwrap(), 0.0);
        assert!(mls(&roc, 1.0).is_err());
    }

    #[test]
    fn balanced_accuracy_cases() {
        assert_eq!(balanced_accuracy(&[0.9, 0.1], &[true, false], 0.5).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[0.9, 0.9], &[true, false], 0.5).unwrap(), 0.5);
        assert!(balanced_accuracy(&[0.9], &[true], 0.5).is_err());
    }
}
