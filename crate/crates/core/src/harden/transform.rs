//! Clip, mask and noise transforms applied to attribution vectors.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attack::roc::float_or_inf;
use crate::error::{Error, Result};
use crate::explain::AttributionMap;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Transform {
    Clip,
    Mask,
    Noise,
}

impl Transform {
    pub fn letter(self) -> char {
        match self {
            Transform::Clip => 'C',
            Transform::Mask => 'M',
            Transform::Noise => 'N',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'C' => Some(Transform::Clip),
            'M' => Some(Transform::Mask),
            'N' => Some(Transform::Noise),
            _ => None,
        }
    }
}

/// A non-empty sequence of distinct transforms, written like `CMN`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Order(Vec<Transform>);

impl Order {
    pub fn new(steps: Vec<Transform>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidArgument("transform order must not be empty".into()));
        }
        for (i, t) in steps.iter().enumerate() {
            if steps[..i].contains(t) {
                return Err(Error::InvalidArgument(format!("transform {} repeated", t.letter())));
            }
        }
        Ok(Self(steps))
    }

    /// Clip, then mask, then noise.
    pub fn recommended() -> Self {
        Self(vec![Transform::Clip, Transform::Mask, Transform::Noise])
    }

    pub fn steps(&self) -> &[Transform] {
        &self.0
    }

    /// All 15 non-empty orderings of distinct transforms, shortest first.
    pub fn all() -> Vec<Order> {
        let base = [Transform::Clip, Transform::Mask, Transform::Noise];
        let mut out = Vec::new();
        for len in 1..=3 {
            let mut stack: Vec<Vec<Transform>> = vec![vec![]];
            while let Some(prefix) = stack.pop() {
                if prefix.len() == len {
                    out.push(Order(prefix));
                    continue;
                }
                for t in base.iter().rev() {
                    if !prefix.contains(t) {
                        let mut p = prefix.clone();
                        p.push(*t);
                        stack.push(p);
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.0 {
            write!(f, "{}", t.letter())?;
        }
        Ok(())
    }
}

impl FromStr for Order {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let steps = s
            .chars()
            .filter(|c| !matches!(c, '-' | '>' | ' ' | ','))
            .map(|c| {
                Transform::from_letter(c)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown transform {c:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Order::new(steps)
    }
}

impl TryFrom<String> for Order {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Order> for String {
    fn from(o: Order) -> String {
        o.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Zero every value below `tau`.
    #[default]
    Signed,
    /// Zero every value whose magnitude is below `tau`.
    Magnitude,
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(MaskMode::Signed),
            "magnitude" => Ok(MaskMode::Magnitude),
            _ => Err(Error::InvalidArgument(format!("unknown mask mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub sigma: f64,
    #[serde(with = "float_or_inf")]
    pub c_min: f64,
    #[serde(with = "float_or_inf")]
    pub c_max: f64,
    #[serde(with = "float_or_inf")]
    pub tau: f64,
    pub order: Order,
    pub mask_mode: MaskMode,
    pub seed: u64,
}

impl TransformParams {
    /// No clipping, no masking, no noise.
    pub fn identity() -> Self {
        Self {
            sigma: 0.0,
            c_min: f64::NEG_INFINITY,
            c_max: f64::INFINITY,
            tau: f64::NEG_INFINITY,
            order: Order::recommended(),
            mask_mode: MaskMode::Signed,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma {} must be finite and >= 0",
                self.sigma
            )));
        }
        if !(self.c_min <= self.c_max) {
            return Err(Error::InvalidArgument(format!(
                "clip bounds [{}, {}] are invalid",
                self.c_min, self.c_max
            )));
        }
        if self.tau.is_nan() {
            return Err(Error::InvalidArgument("tau is NaN".into()));
        }
        Ok(())
    }

    pub fn apply(&self, phi: &[f64], noise_seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(self.apply_valid(phi, noise_seed))
    }

    /// [`apply`](Self::apply) for parameters that already passed validation.
    pub(crate) fn apply_valid(&self, phi: &[f64], noise_seed: u64) -> Vec<f64> {
        let mut v = phi.to_vec();
        for t in self.order.steps() {
            match t {
                Transform::Clip => v.iter_mut().for_each(|x| *x = x.clamp(self.c_min, self.c_max)),
                Transform::Mask => {
                    for x in v.iter_mut() {
                        let weak = match self.mask_mode {
                            MaskMode::Signed => *x < self.tau,
                            MaskMode::Magnitude => x.abs() < self.tau,
                        };
                        if weak {
                            *x = 0.0;
                        }
                    }
                }
                Transform::Noise => {
                    if self.sigma > 0.0 {
                        let normal = Normal::new(0.0, self.sigma).expect("validated sigma");
                        let mut rng = rng_from_seed(noise_seed);
                        v.iter_mut().for_each(|x| *x += normal.sample(&mut rng));
                    }
                }
            }
        }
        v
    }
}

/// Transforms one attribution map; noise is drawn from `params.seed`.
pub fn apply_transforms(map: &AttributionMap, params: &TransformParams) -> Result<AttributionMap> {
    let values = params.apply(map.values.data(), params.seed)?;
    Ok(AttributionMap {
        values: crate::Tensor::new(map.values.shape().to_vec(), values)?,
        ..map.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn only(order: &str) -> TransformParams {
        TransformParams {
            order: order.parse().unwrap(),
            ..TransformParams::identity()
        }
    }

    #[test]
    fn fifteen_orders() {
        let all = Order::all();
        assert_eq!(all.len(), 15);
        let names: std::collections::BTreeSet<String> = all.iter().map(|o| o.to_string()).collect();
        assert_eq!(names.len(), 15);
        assert!(names.contains("CMN"));
        assert!("CC".parse::<Order>().is_err());
        assert!("".parse::<Order>().is_err());
        assert_eq!("C->M->N".parse::<Order>().unwrap(), Order::recommended());
    }

    #[test]
    fn clip_and_mask_examples() {
        let clip = TransformParams {
            c_min: -1.0,
            c_max: 1.0,
            ..only("C")
        };
        assert_eq!(clip.apply(&[-5.0, 0.2, 3.0], 0).unwrap(), vec![-1.0, 0.2, 1.0]);
        let mask = TransformParams { tau: 0.5, ..only("M") };
        assert_eq!(mask.apply(&[-1.0, 0.2, 1.0], 0).unwrap(), vec![0.0, 0.0, 1.0]);
        let mag = TransformParams {
            mask_mode: MaskMode::Magnitude,
            ..mask
        };
        assert_eq!(mag.apply(&[-1.0, 0.2, 1.0], 0).unwrap(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn serde_keeps_infinities() {
        let p = TransformParams::identity();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"-inf\""));
        let back: TransformParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
