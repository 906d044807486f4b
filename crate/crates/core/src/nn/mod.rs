//! Minimal dense/convolutional network with forward pass, parameter gradients
//! and input gradients under the standard, deconvolution and guided ReLU
//! backward rules.

mod format;

pub use format::{read_network, write_network, MODEL_FORMAT_VERSION, MODEL_MAGIC};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    Flatten,
    AvgPool2d {
        size: usize,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::AvgPool2d { .. } => "avgpool2d",
        }
    }

    fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { input, output } => (input * output, output),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * in_channels * kernel * kernel, out_channels),
            _ => (0, 0),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, .. } => input,
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            _ => 0,
        }
    }

    /// Output shape for a given input shape, or an error if the layer cannot
    /// consume it.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(Error::InvalidArchitecture(msg));
        match *self {
            LayerSpec::Dense { input: n_in, output } => {
                if input != [n_in] {
                    return bad(format!("dense expects [{n_in}], got {input:?}"));
                }
                Ok(vec![output])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return bad(format!("conv2d expects [{in_channels}, H, W], got {input:?}"));
                }
                if kernel == 0 || stride == 0 || input[1] < kernel || input[2] < kernel {
                    return bad(format!("conv2d kernel {kernel}/stride {stride} does not fit {input:?}"));
                }
                Ok(vec![
                    out_channels,
                    (input[1] - kernel) / stride + 1,
                    (input[2] - kernel) / stride + 1,
                ])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::AvgPool2d { size } => {
                if input.len() != 3 || size == 0 || input[1] < size || input[2] < size {
                    return bad(format!("avgpool2d({size}) does not fit {input:?}"));
                }
                Ok(vec![input[0], input[1] / size, input[2] / size])
            }
        }
    }
}

/// How gradients pass backward through ReLU units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReluRule {
    /// Ordinary chain rule: gradient masked by the forward pre-activation sign.
    #[default]
    Standard,
    /// Deconvnet: the backward signal itself is rectified; the forward
    /// activation is ignored.
    Deconv,
    /// Guided backpropagation: both the forward pre-activation and the
    /// backward signal must be positive.
    Guided,
}

/// Which scalar output of the network an explanation is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    #[default]
    Logit,
    Probability,
}

/// Explanation target: class index plus the kind of score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub class: usize,
    pub score: ScoreKind,
}

impl Target {
    pub fn logit(class: usize) -> Self {
        Self {
            class,
            score: ScoreKind::Logit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    /// `0.5 * ||logits - onehot||^2`
    SquaredError,
}

/// Per-layer inputs (pre) and outputs (post) cached by one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub inputs: Vec<Tensor>,
    pub outputs: Vec<Tensor>,
}

/// Parameter gradients, laid out like [`Network`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

enum ReluBackward<'a> {
    Rule(ReluRule),
    Rescale(&'a ActivationTrace),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    #[serde(skip)]
    shapes: Vec<Vec<usize>>,
}

fn compose(input_shape: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    if layers.is_empty() {
        return Err(Error::InvalidArchitecture("no layers".into()));
    }
    let mut shapes = Vec::with_capacity(layers.len());
    let mut cur = input_shape.to_vec();
    for layer in layers {
        cur = layer.output_shape(&cur)?;
        shapes.push(cur.clone());
    }
    if cur.len() != 1 {
        return Err(Error::InvalidArchitecture(format!(
            "final layer must produce a vector, got {cur:?}"
        )));
    }
    Ok(shapes)
}

impl Network {
    /// Builds a network with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights
    /// and biases.
    pub fn init(input_shape: &[usize], layers: Vec<LayerSpec>, rng: &mut Rng) -> Result<Self> {
        let shapes = compose(input_shape, &layers)?;
        let mut weights = Vec::with_capacity(layers.len());
        let mut biases = Vec::with_capacity(layers.len());
        for layer in &layers {
            let (nw, nb) = layer.param_counts();
            let bound = if nw > 0 {
                1.0 / (layer.fan_in() as f64).sqrt()
            } else {
                0.0
            };
            weights.push((0..nw).map(|_| rng.gen_range(-bound..=bound)).collect());
            biases.push((0..nb).map(|_| rng.gen_range(-bound..=bound)).collect());
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            weights,
            biases,
            shapes,
        })
    }

    /// Builds a network from explicit parameters (dense weights row-major as
    /// `[output][input]`, conv weights as `[out][in][ky][kx]`).
    pub fn from_parts(
        input_shape: &[usize],
        layers: Vec<LayerSpec>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let shapes = compose(input_shape, &layers)?;
        if weights.len() != layers.len() || biases.len() != layers.len() {
            return Err(Error::InvalidArchitecture(
                "one parameter slot per layer required".into(),
            ));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (nw, nb) = layer.param_counts();
            if weights[i].len() != nw || biases[i].len() != nb {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {i} ({}) expects {nw} weights and {nb} biases",
                    layer.name()
                )));
            }
            if weights[i].iter().chain(&biases[i]).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {i} has non-finite parameters"
                )));
            }
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            weights,
            biases,
            shapes,
        })
    }

    /// Recomputes cached shapes after deserialization.
    pub fn revalidate(mut self) -> Result<Self> {
        self.shapes = compose(&self.input_shape, &self.layers)?;
        Self::from_parts(&self.input_shape, self.layers, self.weights, self.biases)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map(|s| s[0]).unwrap_or(0)
    }

    pub fn output_shape_of(&self, layer: usize) -> &[usize] {
        &self.shapes[layer]
    }

    pub fn input_shape_of(&self, layer: usize) -> &[usize] {
        if layer == 0 {
            &self.input_shape
        } else {
            &self.shapes[layer - 1]
        }
    }

    pub fn has_conv(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Conv2d { .. }))
    }

    pub fn last_conv_index(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| matches!(l, LayerSpec::Conv2d { .. }))
    }

    pub fn has_relu(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Relu))
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn l2_norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [Vec<f64>], &mut [Vec<f64>]) {
        (&mut self.weights, &mut self.biases)
    }

    pub fn params_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|v| v.is_finite())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::InputShape {
                expected: self.input_shape.clone(),
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_class(&self, class: usize) -> Result<()> {
        let c = self.num_classes();
        if class >= c {
            return Err(Error::ClassOutOfRange {
                index: class,
                classes: c,
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ActivationTrace)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for i in 0..self.layers.len() {
            let out = self.layer_forward(i, &cur);
            inputs.push(cur);
            cur = out;
            outputs.push(cur.clone());
        }
        Ok((cur, ActivationTrace { inputs, outputs }))
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for i in 0..self.layers.len() {
            cur = self.layer_forward(i, &cur);
        }
        Ok(cur)
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.logits(x)?.argmax())
    }

    /// Scalar score of `target` at `x`.
    pub fn score(&self, x: &Tensor, target: Target) -> Result<f64> {
        self.check_class(target.class)?;
        let z = self.logits(x)?;
        Ok(match target.score {
            ScoreKind::Logit => z.data()[target.class],
            ScoreKind::Probability => softmax(z.data())[target.class],
        })
    }

    /// Input of the final layer, i.e. the penultimate representation.
    pub fn embedding(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for i in 0..self.layers.len() - 1 {
            cur = self.layer_forward(i, &cur);
        }
        Ok(cur.into_data())
    }

    fn layer_forward(&self, i: usize, x: &Tensor) -> Tensor {
        let out_shape = self.shapes[i].clone();
        let xd = x.data();
        let data = match self.layers[i] {
            LayerSpec::Dense { input, output } => {
                let w = &self.weights[i];
                let b = &self.biases[i];
                (0..output)
                    .map(|o| {
                        let row = &w[o * input..(o + 1) * input];
                        b[o] + row.iter().zip(xd).map(|(a, v)| a * v).sum::<f64>()
                    })
                    .collect()
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let (h, w_in) = (x.shape()[1], x.shape()[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let wt = &self.weights[i];
                let mut out = vec![0.0; out_channels * oh * ow];
                for o in 0..out_channels {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut acc = self.biases[i][o];
                            for c in 0..in_channels {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let wv = wt[((o * in_channels + c) * kernel + ky) * kernel + kx];
                                        let iv = xd[(c * h + y * stride + ky) * w_in + xx * stride + kx];
                                        acc += wv * iv;
                                    }
                                }
                            }
                            out[(o * oh + y) * ow + xx] = acc;
                        }
                    }
                }
                out
            }
            LayerSpec::Relu => xd.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            LayerSpec::Flatten => xd.to_vec(),
            LayerSpec::AvgPool2d { size } => {
                let (ch, h, w_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let norm = (size * size) as f64;
                let mut out = vec![0.0; ch * oh * ow];
                for c in 0..ch {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut acc = 0.0;
                            for dy in 0..size {
                                for dx in 0..size {
                                    acc += xd[(c * h + y * size + dy) * w_in + xx * size + dx];
                                }
                            }
                            out[(c * oh + y) * ow + xx] = acc / norm;
                        }
                    }
                }
                out
            }
        };
        Tensor::from_parts(out_shape, data)
    }

    /// Gradient of the layer output seed `g` back to the layer input.
    fn layer_backward(
        &self,
        i: usize,
        trace: &ActivationTrace,
        g: &[f64],
        relu: &ReluBackward<'_>,
        grads: Option<&mut Gradients>,
    ) -> Vec<f64> {
        let x = &trace.inputs[i];
        let xd = x.data();
        match self.layers[i] {
            LayerSpec::Dense { input, output } => {
                let w = &self.weights[i];
                let mut gin = vec![0.0; input];
                for o in 0..output {
                    let go = g[o];
                    if go == 0.0 {
                        continue;
                    }
                    let row = &w[o * input..(o + 1) * input];
                    for (gi, wv) in gin.iter_mut().zip(row) {
                        *gi += wv * go;
                    }
                }
                if let Some(grads) = grads {
                    let gw = &mut grads.weights[i];
                    for o in 0..output {
                        for j in 0..input {
                            gw[o * input + j] += g[o] * xd[j];
                        }
                        grads.biases[i][o] += g[o];
                    }
                }
                gin
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let (h, w_in) = (x.shape()[1], x.shape()[2]);
                let out_shape = &self.shapes[i];
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let wt = &self.weights[i];
                let mut gin = vec![0.0; xd.len()];
                let mut grads = grads;
                for o in 0..out_channels {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let go = g[(o * oh + y) * ow + xx];
                            if go == 0.0 {
                                continue;
                            }
                            if let Some(gr) = grads.as_deref_mut() {
                                gr.biases[i][o] += go;
                            }
                            for c in 0..in_channels {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let widx = ((o * in_channels + c) * kernel + ky) * kernel + kx;
                                        let iidx = (c * h + y * stride + ky) * w_in + xx * stride + kx;
                                        gin[iidx] += wt[widx] * go;
                                        if let Some(gr) = grads.as_deref_mut() {
                                            gr.weights[i][widx] += go * xd[iidx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                gin
            }
            LayerSpec::Relu => match relu {
                ReluBackward::Rule(ReluRule::Standard) => xd
                    .iter()
                    .zip(g)
                    .map(|(&pre, &go)| if pre > 0.0 { go } else { 0.0 })
                    .collect(),
                ReluBackward::Rule(ReluRule::Deconv) => g.iter().map(|&go| go.max(0.0)).collect(),
                ReluBackward::Rule(ReluRule::Guided) => xd
                    .iter()
                    .zip(g)
                    .map(|(&pre, &go)| if pre > 0.0 { go.max(0.0) } else { 0.0 })
                    .collect(),
                ReluBackward::Rescale(reference) => {
                    let rd = reference.inputs[i].data();
                    xd.iter()
                        .zip(rd)
                        .zip(g)
                        .map(|((&pre, &rpre), &go)| {
                            let din = pre - rpre;
                            let m = if din != 0.0 {
                                (pre.max(0.0) - rpre.max(0.0)) / din
                            } else if pre > 0.0 {
                                1.0
                            } else {
                                0.0
                            };
                            go * m
                        })
                        .collect()
                }
            },
            LayerSpec::Flatten => g.to_vec(),
            LayerSpec::AvgPool2d { size } => {
                let (ch, h, w_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let out_shape = &self.shapes[i];
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let norm = (size * size) as f64;
                let mut gin = vec![0.0; ch * h * w_in];
                for c in 0..ch {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let share = g[(c * oh + y) * ow + xx] / norm;
                            for dy in 0..size {
                                for dx in 0..size {
                                    gin[(c * h + y * size + dy) * w_in + xx * size + dx] += share;
                                }
                            }
                        }
                    }
                }
                gin
            }
        }
    }

    /// Backpropagates `seed` (gradient w.r.t. logits). Returns the gradient
    /// w.r.t. the input of every layer; index 0 is the network input.
    fn backward(
        &self,
        trace: &ActivationTrace,
        seed: Vec<f64>,
        relu: ReluBackward<'_>,
        mut grads: Option<&mut Gradients>,
    ) -> Vec<Vec<f64>> {
        let n = self.layers.len();
        let mut per_layer = vec![Vec::new(); n];
        let mut g = seed;
        for i in (0..n).rev() {
            g = self.layer_backward(i, trace, &g, &relu, grads.as_deref_mut());
            per_layer[i] = g.clone();
        }
        per_layer
    }

    fn score_seed(&self, logits: &Tensor, target: Target) -> Vec<f64> {
        let c = logits.len();
        match target.score {
            ScoreKind::Logit => {
                let mut s = vec![0.0; c];
                s[target.class] = 1.0;
                s
            }
            ScoreKind::Probability => {
                let p = softmax(logits.data());
                let pc = p[target.class];
                (0..c)
                    .map(|j| {
                        let delta = if j == target.class { 1.0 } else { 0.0 };
                        pc * (delta - p[j])
                    })
                    .collect()
            }
        }
    }

    /// Gradient of the target score with respect to the input.
    pub fn input_gradient(&self, x: &Tensor, target: Target, rule: ReluRule) -> Result<Tensor> {
        self.check_class(target.class)?;
        let (logits, trace) = self.forward(x)?;
        let seed = self.score_seed(&logits, target);
        let mut per_layer = self.backward(&trace, seed, ReluBackward::Rule(rule), None);
        Ok(Tensor::from_parts(x.shape().to_vec(), per_layer.swap_remove(0)))
    }

    /// DeepLIFT multipliers (Rescale rule) of the target score at `x` relative
    /// to `baseline`. Multiplying by `x - baseline` yields contributions that
    /// sum to the score difference.
    pub fn rescale_multipliers(&self, x: &Tensor, baseline: &Tensor, target: Target) -> Result<Tensor> {
        self.check_class(target.class)?;
        x.check_same_shape(baseline)?;
        let (z, trace) = self.forward(x)?;
        let (z0, reference) = self.forward(baseline)?;
        let seed = match target.score {
            ScoreKind::Logit => self.score_seed(&z, target),
            // softmax is not unit-wise; distribute the probability change
            // along the logit difference so the multipliers still sum exactly.
            ScoreKind::Probability => {
                let dp = softmax(z.data())[target.class] - softmax(z0.data())[target.class];
                let dz: Vec<f64> = z.data().iter().zip(z0.data()).map(|(a, b)| a - b).collect();
                let norm2: f64 = dz.iter().map(|v| v * v).sum();
                if norm2 == 0.0 {
                    vec![0.0; dz.len()]
                } else {
                    dz.iter().map(|d| dp * d / norm2).collect()
                }
            }
        };
        let mut per_layer = self.backward(&trace, seed, ReluBackward::Rescale(&reference), None);
        Ok(Tensor::from_parts(x.shape().to_vec(), per_layer.swap_remove(0)))
    }

    /// Activation `A` of a conv layer and the gradient of the target score
    /// with respect to it. With `at_input`, the layer input is used instead of
    /// its output.
    pub fn layer_activation_gradient(
        &self,
        x: &Tensor,
        target: Target,
        layer: usize,
        at_input: bool,
    ) -> Result<(Tensor, Tensor)> {
        if layer >= self.layers.len() || !matches!(self.layers[layer], LayerSpec::Conv2d { .. }) {
            return Err(Error::UnsupportedLayer { index: layer });
        }
        self.check_class(target.class)?;
        let (logits, trace) = self.forward(x)?;
        let seed = self.score_seed(&logits, target);
        let mut per_layer = self.backward(&trace, seed, ReluBackward::Rule(ReluRule::Standard), None);
        if at_input {
            let a = trace.inputs[layer].clone();
            let g = Tensor::from_parts(a.shape().to_vec(), per_layer.swap_remove(layer));
            Ok((a, g))
        } else {
            let a = trace.outputs[layer].clone();
            let g = if layer + 1 < self.layers.len() {
                per_layer.swap_remove(layer + 1)
            } else {
                self.score_seed(&logits, target)
            };
            Ok((a.clone(), Tensor::from_parts(a.shape().to_vec(), g)))
        }
    }

    /// Mean loss over the batch and its parameter gradient.
    pub fn param_gradient(&self, batch: &[&Tensor], labels: &[usize], loss: Loss) -> Result<(f64, Gradients)> {
        if batch.len() != labels.len() || batch.is_empty() {
            return Err(Error::InvalidArgument(
                "batch and labels must be non-empty and equal length".into(),
            ));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut total = 0.0;
        for (x, &y) in batch.iter().zip(labels) {
            self.check_class(y)?;
            let (z, trace) = self.forward(x)?;
            let (l, seed) = loss_and_seed(z.data(), y, loss);
            total += l;
            self.backward(&trace, seed, ReluBackward::Rule(ReluRule::Standard), Some(&mut grads));
        }
        let n = batch.len() as f64;
        for v in grads.weights.iter_mut().chain(grads.biases.iter_mut()).flatten() {
            *v /= n;
        }
        Ok((total / n, grads))
    }

    /// Mean loss without gradients.
    pub fn loss(&self, batch: &[&Tensor], labels: &[usize], loss: Loss) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in batch.iter().zip(labels) {
            self.check_class(y)?;
            total += loss_and_seed(self.logits(x)?.data(), y, loss).0;
        }
        Ok(total / batch.len().max(1) as f64)
    }
}

fn loss_and_seed(z: &[f64], y: usize, loss: Loss) -> (f64, Vec<f64>) {
    match loss {
        Loss::CrossEntropy => {
            let p = softmax(z);
            let l = -p[y].max(1e-300).ln();
            let seed = p
                .iter()
                .enumerate()
                .map(|(j, &pj)| pj - if j == y { 1.0 } else { 0.0 })
                .collect();
            (l, seed)
        }
        Loss::SquaredError => {
            let diff: Vec<f64> = z
                .iter()
                .enumerate()
                .map(|(j, &v)| v - if j == y { 1.0 } else { 0.0 })
                .collect();
            (0.5 * diff.iter().map(|d| d * d).sum::<f64>(), diff)
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests;
