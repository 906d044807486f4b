//! Fifteen attribution methods behind one dispatcher.
//!
//! Each method is also exposed as a plain function in its submodule so tests
//! and callers can bypass the parameter table.

pub mod anchors;
pub mod gradcam;
pub mod gradient;
pub mod params;
pub mod perturb;
pub mod protodash;
pub mod xatt;

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use params::{ExplainerParams, ParamDomain, ParamSpec, ParamValue};

use crate::error::{Error, Result};
use crate::nn::{Network, ReluRule, ScoreKind, Target};
use crate::par::{self, Execution};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainerKind {
    Saliency,
    Deconvolution,
    GuidedBackprop,
    InputXGradient,
    Smoothgrad,
    Vargrad,
    IntegratedGradients,
    Deeplift,
    Occlusion,
    KernelShap,
    Lime,
    Gradcam,
    GradcamPp,
    Anchors,
    Protodash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gradient,
    Perturbation,
    Representation,
    Approximation,
}

impl ExplainerKind {
    pub const ALL: [ExplainerKind; 15] = [
        ExplainerKind::Saliency,
        ExplainerKind::Deconvolution,
        ExplainerKind::GuidedBackprop,
        ExplainerKind::InputXGradient,
        ExplainerKind::Smoothgrad,
        ExplainerKind::Vargrad,
        ExplainerKind::IntegratedGradients,
        ExplainerKind::Deeplift,
        ExplainerKind::Occlusion,
        ExplainerKind::KernelShap,
        ExplainerKind::Lime,
        ExplainerKind::Gradcam,
        ExplainerKind::GradcamPp,
        ExplainerKind::Anchors,
        ExplainerKind::Protodash,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExplainerKind::Saliency => "saliency",
            ExplainerKind::Deconvolution => "deconvolution",
            ExplainerKind::GuidedBackprop => "guided_backprop",
            ExplainerKind::InputXGradient => "input_x_gradient",
            ExplainerKind::Smoothgrad => "smoothgrad",
            ExplainerKind::Vargrad => "vargrad",
            ExplainerKind::IntegratedGradients => "integrated_gradients",
            ExplainerKind::Deeplift => "deeplift",
            ExplainerKind::Occlusion => "occlusion",
            ExplainerKind::KernelShap => "kernel_shap",
            ExplainerKind::Lime => "lime",
            ExplainerKind::Gradcam => "gradcam",
            ExplainerKind::GradcamPp => "gradcam_pp",
            ExplainerKind::Anchors => "anchors",
            ExplainerKind::Protodash => "protodash",
        }
    }

    pub fn family(self) -> Family {
        use ExplainerKind::*;
        match self {
            Saliency | Deconvolution | GuidedBackprop | InputXGradient | Smoothgrad | Vargrad | IntegratedGradients
            | Deeplift => Family::Gradient,
            Occlusion | KernelShap => Family::Perturbation,
            Gradcam | GradcamPp | Protodash => Family::Representation,
            Lime | Anchors => Family::Approximation,
        }
    }

    /// Whether the method has tunable parameters (hardened by parameter
    /// search rather than output transforms).
    pub fn is_parameterized(self) -> bool {
        !params::schema(self).is_empty()
    }

    pub fn is_stochastic(self) -> bool {
        use ExplainerKind::*;
        matches!(self, Smoothgrad | Vargrad | KernelShap | Lime | Anchors)
    }

    /// Checks that the method can run on `model`.
    pub fn check_compatible(self, model: &Network, reference_len: usize) -> Result<()> {
        match self {
            ExplainerKind::Gradcam | ExplainerKind::GradcamPp => {
                if !model.has_conv() || model.input_shape().len() != 3 {
                    return Err(Error::UnsupportedArchitecture(format!(
                        "{self} needs a convolutional model on (C, H, W) input"
                    )));
                }
            }
            ExplainerKind::Protodash if reference_len == 0 => {
                return Err(Error::Empty("protodash needs a reference sample pool".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

impl fmt::Display for ExplainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ExplainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExplainerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown explainer {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub values: Tensor,
    pub method: ExplainerKind,
    pub params: ExplainerParams,
    pub class_index: usize,
    pub wall_time_seconds: f64,
}

/// Model plus the shared inputs some methods need.
#[derive(Debug, Clone, Copy)]
pub struct ExplainContext<'a> {
    pub model: &'a Network,
    pub score: ScoreKind,
    /// Baseline distribution for SmoothGrad/VarGrad and the sample pool for
    /// ProtoDash.
    pub reference: &'a [Tensor],
}

impl<'a> ExplainContext<'a> {
    pub fn new(model: &'a Network) -> Self {
        Self {
            model,
            score: ScoreKind::Logit,
            reference: &[],
        }
    }

    pub fn with_reference(mut self, reference: &'a [Tensor]) -> Self {
        self.reference = reference;
        self
    }
}

/// ProtoDash uses the first this-many reference samples as candidates.
pub const PROTODASH_POOL: usize = 32;

fn segmentation(shape: &[usize], p: &ExplainerParams) -> Result<perturb::Segmentation> {
    let n = p.usize("n_segments")?.min(perturb::grid_capacity(shape));
    perturb::segment_grid(shape, n, p.f64("compactness")?)
}

/// Runs one explainer on one input. Stochastic methods draw only from `seed`.
pub fn explain(
    ctx: &ExplainContext<'_>,
    kind: ExplainerKind,
    params: &ExplainerParams,
    x: &Tensor,
    class_index: usize,
    seed: u64,
) -> Result<AttributionMap> {
    let p = params.resolve(kind)?;
    let start = Instant::now();
    let values = compute(ctx, kind, &p, x, class_index, seed)?;
    if !values.all_finite() {
        return Err(Error::InvalidTensor(format!("{kind} produced non-finite values")));
    }
    Ok(AttributionMap {
        values,
        method: kind,
        params: p,
        class_index,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

fn compute(
    ctx: &ExplainContext<'_>,
    kind: ExplainerKind,
    p: &ExplainerParams,
    x: &Tensor,
    class_index: usize,
    seed: u64,
) -> Result<Tensor> {
    use ExplainerKind::*;
    let model = ctx.model;
    kind.check_compatible(model, ctx.reference.len())?;
    let target = Target {
        class: class_index,
        score: ctx.score,
    };
    let zero = || Tensor::zeros(x.shape());
    match kind {
        Saliency => gradient::grad_explain(model, x, target, ReluRule::Standard, false, true),
        Deconvolution => gradient::grad_explain(model, x, target, ReluRule::Deconv, false, false),
        GuidedBackprop => gradient::grad_explain(model, x, target, ReluRule::Guided, false, false),
        InputXGradient => gradient::grad_explain(model, x, target, ReluRule::Standard, true, false),
        Smoothgrad | Vargrad => {
            let pool = if p.flag("draw_baseline_from_distrib")? {
                Some(ctx.reference)
            } else {
                None
            };
            let agg = if kind == Smoothgrad {
                gradient::NoiseAggregator::MeanAbsGrad
            } else {
                gradient::NoiseAggregator::VarianceGrad
            };
            gradient::noise_aggregate_explain(
                model,
                x,
                target,
                p.usize("nt_samples")?,
                p.f64("stdevs")?,
                agg,
                pool,
                seed,
            )
        }
        IntegratedGradients => gradient::integrated_gradients(
            model,
            x,
            target,
            &zero(),
            p.usize("n_steps")?,
            p.text("method")?.parse()?,
            p.flag("multiply_by_inputs")?,
        ),
        Deeplift => gradient::deeplift(model, x, &zero(), target),
        Occlusion => perturb::occlusion(
            model,
            x,
            target,
            p.shape("sliding_window_shapes")?,
            p.shape("strides")?,
            p.f64("baseline_value")?,
        ),
        KernelShap => {
            let seg = segmentation(x.shape(), p)?;
            perturb::kernel_shap(
                model,
                x,
                target,
                &seg,
                p.usize("n_samples")?,
                p.f64("baseline_value")?,
                seed,
            )
        }
        Lime => {
            let seg = segmentation(x.shape(), p)?;
            let cfg = perturb::LimeConfig {
                n_samples: p.usize("n_samples")?,
                kernel_width: p.f64("kernel_width")?,
                ridge_lambda: p.f64("ridge_lambda")?,
                exhaustive: false,
                baseline_value: 0.0,
            };
            perturb::lime(model, x, target, &seg, &cfg, seed)
        }
        Gradcam | GradcamPp => {
            let layer = usize::try_from(p.int("layer_index")?).ok();
            let variant = if kind == Gradcam {
                gradcam::CamVariant::Gradcam
            } else {
                gradcam::CamVariant::GradcamPp
            };
            gradcam::gradcam(
                model,
                x,
                target,
                layer,
                variant,
                p.text("interpolation_mode")?.parse()?,
                p.flag("attr_to_layer_input")?,
            )
        }
        Anchors => {
            let seg = segmentation(x.shape(), p)?;
            let cfg = anchors::AnchorConfig {
                threshold: p.f64("threshold")?,
                tau: p.f64("tau")?,
                delta: p.f64("delta")?,
                beam_size: p.usize("beam_size")?,
                p_sample: p.f64("p_sample")?,
                coverage_samples: p.usize("coverage_samples")?,
                batch_size: p.usize("batch_size")?,
                baseline_value: 0.0,
            };
            Ok(anchors::anchors(model, x, &seg, &cfg, seed)?.mask)
        }
        Protodash => {
            let kernel = match p.text("kernel")? {
                "gaussian" => protodash::ProtoKernel::Gaussian { sigma: p.f64("sigma")? },
                _ => protodash::ProtoKernel::Linear,
            };
            let pool = &ctx.reference[..ctx.reference.len().min(PROTODASH_POOL)];
            let candidates = pool.iter().map(|c| model.embedding(c)).collect::<Result<Vec<_>>>()?;
            let predicted = model.predict(x)?;
            let mut targets = vec![model.embedding(x)?];
            for (r, emb) in pool.iter().zip(&candidates) {
                if model.predict(r)? == predicted {
                    targets.push(emb.clone());
                }
            }
            let res = protodash::protodash(&targets, &candidates, p.usize("m")?, kernel)?;
            Tensor::vector(res.attribution)
        }
    }
}

/// Explains every input, in parallel when `exec` allows. Input `i` uses seed
/// `derive_seed(seed, [i])`, so results do not depend on scheduling.
pub fn explain_many(
    ctx: &ExplainContext<'_>,
    kind: ExplainerKind,
    params: &ExplainerParams,
    xs: &[Tensor],
    classes: &[usize],
    seed: u64,
    exec: Execution,
) -> Result<Vec<AttributionMap>> {
    if xs.len() != classes.len() {
        return Err(Error::InvalidArgument("one class index per input required".into()));
    }
    let p = params.resolve(kind)?;
    par::try_map(xs.len(), exec, |i| {
        explain(ctx, kind, &p, &xs[i], classes[i], rng::derive_seed(seed, &[i as u64]))
    })
}
