//! Typed explainer parameters with per-method schemas, defaults and search
//! ranges.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ExplainerKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Shape(Vec<usize>),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Text(s) => f.write_str(s),
            ParamValue::Shape(s) => write!(f, "{s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamDomain {
    Bool,
    Int {
        lo: i64,
        hi: i64,
    },
    Float {
        lo: f64,
        hi: f64,
    },
    Choice {
        options: Vec<String>,
    },
    /// Window-like shapes with every entry in `[lo, hi]`.
    Shape {
        lo: usize,
        hi: usize,
    },
}

impl ParamDomain {
    pub fn contains(&self, v: &ParamValue) -> bool {
        match (self, v) {
            (ParamDomain::Bool, ParamValue::Bool(_)) => true,
            (ParamDomain::Int { lo, hi }, ParamValue::Int(i)) => lo <= i && i <= hi,
            (ParamDomain::Float { lo, hi }, ParamValue::Float(x)) => *lo <= *x && *x <= *hi,
            (ParamDomain::Float { lo, hi }, ParamValue::Int(i)) => *lo <= *i as f64 && *i as f64 <= *hi,
            (ParamDomain::Choice { options }, ParamValue::Text(s)) => options.iter().any(|o| o == s),
            (ParamDomain::Shape { lo, hi }, ParamValue::Shape(s)) => {
                !s.is_empty() && s.iter().all(|d| lo <= d && d <= hi)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub default: ParamValue,
    pub domain: ParamDomain,
}

fn float(name: &str, default: f64, lo: f64, hi: f64) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        default: ParamValue::Float(default),
        domain: ParamDomain::Float { lo, hi },
    }
}

fn int(name: &str, default: i64, lo: i64, hi: i64) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        default: ParamValue::Int(default),
        domain: ParamDomain::Int { lo, hi },
    }
}

fn flag(name: &str, default: bool) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        default: ParamValue::Bool(default),
        domain: ParamDomain::Bool,
    }
}

fn choice(name: &str, default: &str, options: &[&str]) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        default: ParamValue::Text(default.into()),
        domain: ParamDomain::Choice {
            options: options.iter().map(|s| s.to_string()).collect(),
        },
    }
}

fn shape(name: &str, default: &[usize], lo: usize, hi: usize) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        default: ParamValue::Shape(default.to_vec()),
        domain: ParamDomain::Shape { lo, hi },
    }
}

pub const IG_METHODS: [&str; 5] = [
    "gausslegendre",
    "riemann_right",
    "riemann_left",
    "riemann_middle",
    "riemann_trapezoid",
];

/// Parameter schema of one explainer. Methods without tunable parameters
/// return an empty list.
pub fn schema(kind: ExplainerKind) -> Vec<ParamSpec> {
    use ExplainerKind::*;
    match kind {
        Saliency | Deconvolution | GuidedBackprop | InputXGradient | Deeplift => vec![],
        IntegratedGradients => vec![
            flag("multiply_by_inputs", true),
            choice("method", "gausslegendre", &IG_METHODS),
            int("n_steps", 50, 1, 512),
        ],
        Smoothgrad | Vargrad => vec![
            float("stdevs", 1.0, 0.0, 3.0),
            flag("draw_baseline_from_distrib", false),
            int("nt_samples", 5, 1, 64),
        ],
        Occlusion => vec![
            shape("sliding_window_shapes", &[1], 1, 32),
            shape("strides", &[1], 1, 32),
            float("baseline_value", 0.0, -1e6, 1e6),
        ],
        KernelShap => vec![
            int("n_segments", 50, 1, 256),
            int("compactness", 20, 1, 100),
            int("n_samples", 1000, 2, 100_000),
            float("baseline_value", 0.0, -1e6, 1e6),
        ],
        Lime => vec![
            int("n_segments", 50, 1, 256),
            int("compactness", 20, 1, 100),
            int("n_samples", 1000, 2, 100_000),
            float("kernel_width", 0.25, 1e-3, 10.0),
            float("ridge_lambda", 1.0, 0.0, 1e3),
        ],
        Gradcam | GradcamPp => vec![
            choice("interpolation_mode", "nearest", &["nearest", "bilinear"]),
            flag("attr_to_layer_input", false),
            int("layer_index", -1, -1, 64),
        ],
        Anchors => vec![
            float("threshold", 0.95, 0.0, 1.0),
            float("tau", 0.15, 0.0, 1.0),
            float("delta", 0.1, 1e-6, 1.0),
            int("batch_size", 100, 1, 10_000),
            int("coverage_samples", 10_000, 1, 1_000_000),
            int("beam_size", 1, 1, 16),
            int("n_segments", 15, 1, 256),
            int("compactness", 20, 1, 100),
            float("sigma", 0.5, 0.0, 10.0),
            float("p_sample", 0.5, 0.0, 1.0),
        ],
        Protodash => vec![
            float("sigma", 2.0, 1e-6, 100.0),
            choice("kernel", "linear", &["linear", "gaussian"]),
            int("m", 5, 1, 64),
        ],
    }
}

/// Named parameter values for one explainer. Missing names fall back to the
/// schema default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExplainerParams {
    values: BTreeMap<String, ParamValue>,
}

impl ExplainerParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn defaults(kind: ExplainerKind) -> Self {
        Self {
            values: schema(kind).into_iter().map(|p| (p.name, p.default)).collect(),
        }
    }

    pub fn with(mut self, name: &str, value: ParamValue) -> Self {
        self.values.insert(name.to_string(), value);
        self
    }

    pub fn set(&mut self, name: &str, value: ParamValue) {
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.values.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamValue)> {
        self.values.iter()
    }

    /// Fills in defaults and checks every value against the schema of `kind`.
    pub fn resolve(&self, kind: ExplainerKind) -> Result<ExplainerParams> {
        let schema = schema(kind);
        for name in self.values.keys() {
            if !schema.iter().any(|p| &p.name == name) {
                return Err(Error::InvalidArgument(format!("{kind} has no parameter {name:?}")));
            }
        }
        let mut out = ExplainerParams::new();
        for spec in schema {
            let v = self.values.get(&spec.name).cloned().unwrap_or(spec.default);
            if !spec.domain.contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{kind}.{} = {v} outside {:?}",
                    spec.name, spec.domain
                )));
            }
            out.values.insert(spec.name, v);
        }
        Ok(out)
    }

    pub(crate) fn f64(&self, name: &str) -> Result<f64> {
        match self.values.get(name) {
            Some(ParamValue::Float(v)) => Ok(*v),
            Some(ParamValue::Int(v)) => Ok(*v as f64),
            other => Err(missing(name, other)),
        }
    }

    pub(crate) fn int(&self, name: &str) -> Result<i64> {
        match self.values.get(name) {
            Some(ParamValue::Int(v)) => Ok(*v),
            other => Err(missing(name, other)),
        }
    }

    pub(crate) fn usize(&self, name: &str) -> Result<usize> {
        let v = self.int(name)?;
        usize::try_from(v).map_err(|_| Error::InvalidArgument(format!("{name} must be non-negative")))
    }

    pub(crate) fn flag(&self, name: &str) -> Result<bool> {
        match self.values.get(name) {
            Some(ParamValue::Bool(v)) => Ok(*v),
            other => Err(missing(name, other)),
        }
    }

    pub(crate) fn text(&self, name: &str) -> Result<&str> {
        match self.values.get(name) {
            Some(ParamValue::Text(v)) => Ok(v),
            other => Err(missing(name, other)),
        }
    }

    pub(crate) fn shape(&self, name: &str) -> Result<&[usize]> {
        match self.values.get(name) {
            Some(ParamValue::Shape(v)) => Ok(v),
            other => Err(missing(name, other)),
        }
    }
}

fn missing(name: &str, found: Option<&ParamValue>) -> Error {
    match found {
        None => Error::InvalidArgument(format!("parameter {name:?} not set")),
        Some(v) => Error::InvalidArgument(format!("parameter {name:?} has wrong type: {v}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_lie_in_domains() {
        for kind in ExplainerKind::ALL {
            for spec in schema(kind) {
                assert!(spec.domain.contains(&spec.default), "{kind}.{}", spec.name);
            }
        }
    }

    #[test]
    fn table_defaults() {
        let ig = ExplainerParams::defaults(ExplainerKind::IntegratedGradients);
        assert_eq!(ig.text("method").unwrap(), "gausslegendre");
        assert!(ig.flag("multiply_by_inputs").unwrap());
        let sg = ExplainerParams::defaults(ExplainerKind::Smoothgrad);
        assert_eq!(sg.f64("stdevs").unwrap(), 1.0);
        assert!(!sg.flag("draw_baseline_from_distrib").unwrap());
        let an = ExplainerParams::defaults(ExplainerKind::Anchors);
        assert_eq!(an.f64("threshold").unwrap(), 0.95);
        assert_eq!(an.f64("tau").unwrap(), 0.15);
        assert_eq!(an.usize("beam_size").unwrap(), 1);
        assert_eq!(an.usize("n_segments").unwrap(), 15);
        assert_eq!(an.usize("coverage_samples").unwrap(), 10_000);
        let pd = ExplainerParams::defaults(ExplainerKind::Protodash);
        assert_eq!(pd.f64("sigma").unwrap(), 2.0);
        assert_eq!(
            ExplainerParams::defaults(ExplainerKind::KernelShap)
                .usize("n_segments")
                .unwrap(),
            50
        );
        assert_eq!(
            ExplainerParams::defaults(ExplainerKind::Gradcam)
                .text("interpolation_mode")
                .unwrap(),
            "nearest"
        );
    }

    #[test]
    fn resolve_rejects_unknown_and_out_of_range() {
        let p = ExplainerParams::new().with("bogus", ParamValue::Int(1));
        assert!(p.resolve(ExplainerKind::Saliency).is_err());
        let p = ExplainerParams::new().with("threshold", ParamValue::Float(1.5));
        assert!(p.resolve(ExplainerKind::Anchors).is_err());
        let p = ExplainerParams::new().with("stdevs", ParamValue::Int(1));
        assert_eq!(
            p.resolve(ExplainerKind::Smoothgrad).unwrap().f64("stdevs").unwrap(),
            1.0
        );
    }

    #[test]
    fn json_round_trip() {
        let p = ExplainerParams::defaults(ExplainerKind::Occlusion);
        let s = serde_json::to_string(&p).unwrap();
        let back: ExplainerParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
    }
}
