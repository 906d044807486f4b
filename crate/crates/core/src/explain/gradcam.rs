//! GradCAM and GradCAM++ over a conv layer, upsampled to the input grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Network, Target};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamVariant {
    Gradcam,
    GradcamPp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Nearest,
    /// Half-pixel centers (`align_corners = false`).
    Bilinear,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Interpolation::Nearest),
            "bilinear" => Ok(Interpolation::Bilinear),
            _ => Err(Error::InvalidArgument(format!("unsupported interpolation mode {s:?}"))),
        }
    }
}

/// Per-channel weights from the activation `a` and its gradient `g`, both
/// `(K, H, W)`.
pub fn channel_weights(a: &Tensor, g: &Tensor, variant: CamVariant) -> Vec<f64> {
    let (k, hw) = (a.shape()[0], a.shape()[1] * a.shape()[2]);
    (0..k)
        .map(|c| {
            let ga = &g.data()[c * hw..(c + 1) * hw];
            let aa = &a.data()[c * hw..(c + 1) * hw];
            match variant {
                CamVariant::Gradcam => ga.iter().sum::<f64>() / hw as f64,
                CamVariant::GradcamPp => {
                    let sum_a: f64 = aa.iter().sum();
                    ga.iter()
                        .map(|&gv| {
                            let g2 = gv * gv;
                            let denom = 2.0 * g2 + sum_a * g2 * gv;
                            let alpha = if denom != 0.0 { g2 / denom } else { 0.0 };
                            alpha * gv.max(0.0)
                        })
                        .sum()
                }
            }
        })
        .collect()
}

/// `relu(sum_k w_k A_k)` on the layer's own grid, shape `(H', W')`.
pub fn cam_map(a: &Tensor, g: &Tensor, variant: CamVariant) -> Result<Tensor> {
    a.check_same_shape(g)?;
    if a.rank() != 3 {
        return Err(Error::InvalidArgument(format!(
            "activation must be (K, H, W), got {:?}",
            a.shape()
        )));
    }
    let w = channel_weights(a, g, variant);
    let (h, wd) = (a.shape()[1], a.shape()[2]);
    let hw = h * wd;
    let mut out = vec![0.0; hw];
    for (c, wc) in w.iter().enumerate() {
        for (o, av) in out.iter_mut().zip(&a.data()[c * hw..(c + 1) * hw]) {
            *o += wc * av;
        }
    }
    Tensor::new(vec![h, wd], out.into_iter().map(|v| v.max(0.0)).collect())
}

pub fn upsample(map: &Tensor, out_h: usize, out_w: usize, mode: Interpolation) -> Result<Tensor> {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    if (h, w) == (out_h, out_w) {
        return Ok(map.clone());
    }
    let src = map.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        for x in 0..out_w {
            let v = match mode {
                Interpolation::Nearest => {
                    let sy = (y * h / out_h).min(h - 1);
                    let sx = (x * w / out_w).min(w - 1);
                    src[sy * w + sx]
                }
                Interpolation::Bilinear => {
                    let fy = ((y as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).max(0.0);
                    let fx = ((x as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).max(0.0);
                    let (y0, x0) = ((fy as usize).min(h - 1), (fx as usize).min(w - 1));
                    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                    let (dy, dx) = (fy - y0 as f64, fx - x0 as f64);
                    let top = src[y0 * w + x0] * (1.0 - dx) + src[y0 * w + x1] * dx;
                    let bottom = src[y1 * w + x0] * (1.0 - dx) + src[y1 * w + x1] * dx;
                    top * (1.0 - dy) + bottom * dy
                }
            };
            out.push(v);
        }
    }
    Tensor::new(vec![out_h, out_w], out)
}

/// `layer_index = None` picks the last conv layer. The result has the input's
/// spatial shape `(H, W)`.
pub fn gradcam(
    model: &Network,
    x: &Tensor,
    target: Target,
    layer_index: Option<usize>,
    variant: CamVariant,
    interpolation: Interpolation,
    attr_to_layer_input: bool,
) -> Result<Tensor> {
    let last = model
        .last_conv_index()
        .ok_or_else(|| Error::UnsupportedArchitecture("GradCAM needs a conv layer".into()))?;
    if x.rank() != 3 {
        return Err(Error::UnsupportedArchitecture(format!(
            "GradCAM needs (C, H, W) input, got {:?}",
            x.shape()
        )));
    }
    let layer = layer_index.unwrap_or(last);
    let (a, g) = model.layer_activation_gradient(x, target, layer, attr_to_layer_input)?;
    let map = cam_map(&a, &g, variant)?;
    upsample(&map, x.shape()[1], x.shape()[2], interpolation)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_upsample_repeats_cells() {
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let up = upsample(&m, 4, 4, Interpolation::Nearest).unwrap();
        assert_eq!(&up.data()[..4], &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(&up.data()[12..], &[3.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn bilinear_preserves_constants() {
        let m = Tensor::filled(&[3, 3], 2.5);
        let up = upsample(&m, 8, 8, Interpolation::Bilinear).unwrap();
        assert!(up.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn pp_weights_handle_zero_gradients() {
        let a = Tensor::filled(&[1, 2, 2], 1.0);
        let g = Tensor::zeros(&[1, 2, 2]);
        assert_eq!(channel_weights(&a, &g, CamVariant::GradcamPp), vec![0.0]);
        assert_eq!(cam_map(&a, &g, CamVariant::Gradcam).unwrap().sum(), 0.0);
    }
}
