//! Binary-domain back half of the hybrid network and its evaluation.
//!
//! The first layer always runs on bit-streams (see [`crate::conv`]); its
//! ternary maps are consumed here as `f32` by ordinary convolution, pooling
//! and dense layers. Softmax is not applied: the label is the argmax of the
//! final layer, ties going to the lowest index.

use rayon::prelude::*;
use serde::Serialize;

use crate::conv::{ConvConfig, PixelImage, QuantizedKernel, ScConvEngine, TernaryFeatureMap};
use crate::error::{Error, Result};
use crate::mnist::ImageSet;

/// Number of digit classes.
pub const NUM_CLASSES: usize = 10;

/// Dense `channels x height x width` tensor; vectors are `n x 1 x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 3],
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            shape: [data.len(), 1, 1],
            data,
        }
    }

    pub fn from_feature_maps(maps: &[TernaryFeatureMap]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Shape("no feature maps".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(maps.len() * h * w);
        for m in maps {
            if (m.height, m.width) != (h, w) {
                return Err(Error::Shape("feature maps differ in size".into()));
            }
            data.extend(m.values.iter().map(|&v| f32::from(v)));
        }
        Self::new([maps.len(), h, w], data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn at(&self, c: usize, r: usize, col: usize) -> f32 {
        self.data[(c * self.shape[1] + r) * self.shape[2] + col]
    }

    /// Row-major `(channel, row, col)` flattening.
    pub fn flatten(self) -> Self {
        Self::vector(self.data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::None => v,
        }
    }
}

/// Stochastic first layer: same-padded, sign-activated.
#[derive(Clone, Debug, PartialEq)]
pub struct ScFirstConv {
    pub kernel_height: usize,
    pub kernel_width: usize,
    pub in_channels: usize,
    /// Soft threshold in count units.
    pub threshold: u32,
    pub kernels: Vec<QuantizedKernel>,
}

/// Valid-padded cross-correlation. Weights are `(out, in, kh, kw)` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_height: usize,
    pub kernel_width: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

/// Affine layer; weights are out-major (`weights[o * in_dim + i]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    ScFirstConv(ScFirstConv),
    Conv(Conv2d),
    MaxPool2x2,
    Flatten,
    Dense(Dense),
}

impl Layer {
    fn name(&self) -> &'static str {
        match self {
            Layer::ScFirstConv(_) => "sc-conv",
            Layer::Conv(_) => "conv",
            Layer::MaxPool2x2 => "maxpool",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
        }
    }
}

pub fn conv2d(input: &Tensor, layer: &Conv2d) -> Result<Tensor> {
    let [c, h, w] = input.shape;
    let (kh, kw) = (layer.kernel_height, layer.kernel_width);
    if c != layer.in_channels || kh == 0 || kw == 0 || kh > h || kw > w {
        return Err(Error::Shape(format!(
            "conv {}x{}x{} over input {:?}",
            layer.in_channels, kh, kw, input.shape
        )));
    }
    if layer.weights.len() != layer.out_channels * c * kh * kw
        || layer.bias.len() != layer.out_channels
    {
        return Err(Error::Shape(
            "conv parameter count does not match its dimensions".into(),
        ));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0f32; layer.out_channels * oh * ow];
    for o in 0..layer.out_channels {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = layer.bias[o]);
        for i in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let wt = layer.weights[((o * c + i) * kh + ki) * kw + kj];
                    if wt == 0.0 {
                        continue;
                    }
                    for r in 0..oh {
                        let src = &input.data[(i * h + r + ki) * w + kj..][..ow];
                        for (dst, &x) in plane[r * ow..(r + 1) * ow].iter_mut().zip(src) {
                            *dst += wt * x;
                        }
                    }
                }
            }
        }
        plane
            .iter_mut()
            .for_each(|v| *v = layer.activation.apply(*v));
    }
    Tensor::new([layer.out_channels, oh, ow], out)
}

/// 2x2 max pooling with stride 2; an odd trailing row or column is dropped.
pub fn maxpool2x2(input: &Tensor) -> Tensor {
    let [c, h, w] = input.shape;
    let (oh, ow) = (h / 2, w / 2);
    let mut data = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for r in 0..oh {
            for col in 0..ow {
                let m = input
                    .at(ch, 2 * r, 2 * col)
                    .max(input.at(ch, 2 * r, 2 * col + 1))
                    .max(input.at(ch, 2 * r + 1, 2 * col))
                    .max(input.at(ch, 2 * r + 1, 2 * col + 1));
                data.push(m);
            }
        }
    }
    Tensor {
        shape: [c, oh, ow],
        data,
    }
}

/// Affine map plus activation; any input shape is read flattened.
pub fn dense(input: &Tensor, layer: &Dense) -> Result<Tensor> {
    if input.len() != layer.in_dim
        || layer.weights.len() != layer.out_dim * layer.in_dim
        || layer.bias.len() != layer.out_dim
    {
        return Err(Error::Shape(format!(
            "dense {} -> {} over {} inputs",
            layer.in_dim,
            layer.out_dim,
            input.len()
        )));
    }
    let out = layer
        .weights
        .chunks_exact(layer.in_dim)
        .zip(&layer.bias)
        .map(|(row, &b)| {
            let acc = row.iter().zip(&input.data).map(|(w, x)| w * x).sum::<f32>() + b;
            layer.activation.apply(acc)
        })
        .collect();
    Ok(Tensor::vector(out))
}

/// Ordered layers plus the first-layer precision.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub bits: u32,
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    /// Checks structure and that shapes chain for a `height x width` input.
    pub fn validate(&self, height: usize, width: usize) -> Result<usize> {
        let invalid = |msg: String| Error::InvalidNetwork(msg);
        let Some(Layer::ScFirstConv(first)) = self.layers.first() else {
            return Err(invalid(
                "first layer must be the stochastic convolution".into(),
            ));
        };
        if first.kernels.is_empty() {
            return Err(invalid("stochastic layer has no kernels".into()));
        }
        for k in &first.kernels {
            if (k.height(), k.width(), k.in_channels())
                != (first.kernel_height, first.kernel_width, first.in_channels)
            {
                return Err(invalid(
                    "stochastic kernels disagree with the layer geometry".into(),
                ));
            }
            if k.bits() != self.bits {
                return Err(invalid(format!(
                    "kernel quantized at {} bits in a {}-bit network",
                    k.bits(),
                    self.bits
                )));
            }
        }
        if first.kernel_height > height || first.kernel_width > width {
            return Err(invalid("stochastic kernel larger than the input".into()));
        }
        let mut shape = [first.kernels.len(), height, width];
        for (idx, layer) in self.layers.iter().enumerate().skip(1) {
            let at = |msg: String| invalid(format!("layer {idx} ({}): {msg}", layer.name()));
            shape = match layer {
                Layer::ScFirstConv(_) => {
                    return Err(at("only the first layer may be stochastic".into()))
                }
                Layer::Conv(c) => {
                    if c.in_channels != shape[0] {
                        return Err(at(format!(
                            "expects {} channels, gets {}",
                            c.in_channels, shape[0]
                        )));
                    }
                    if c.kernel_height == 0
                        || c.kernel_width == 0
                        || c.kernel_height > shape[1]
                        || c.kernel_width > shape[2]
                    {
                        return Err(at("kernel does not fit the input".into()));
                    }
                    if c.weights.len()
                        != c.out_channels * c.in_channels * c.kernel_height * c.kernel_width
                        || c.bias.len() != c.out_channels
                    {
                        return Err(at("parameter count does not match dimensions".into()));
                    }
                    [
                        c.out_channels,
                        shape[1] - c.kernel_height + 1,
                        shape[2] - c.kernel_width + 1,
                    ]
                }
                Layer::MaxPool2x2 => {
                    if shape[1] < 2 || shape[2] < 2 {
                        return Err(at("input smaller than 2x2".into()));
                    }
                    [shape[0], shape[1] / 2, shape[2] / 2]
                }
                Layer::Flatten => [shape.iter().product(), 1, 1],
                Layer::Dense(d) => {
                    let inputs: usize = shape.iter().product();
                    if d.in_dim != inputs {
                        return Err(at(format!("expects {} inputs, gets {inputs}", d.in_dim)));
                    }
                    if d.weights.len() != d.out_dim * d.in_dim || d.bias.len() != d.out_dim {
                        return Err(at("parameter count does not match dimensions".into()));
                    }
                    [d.out_dim, 1, 1]
                }
            };
            if shape.contains(&0) {
                return Err(at("produces an empty tensor".into()));
            }
        }
        match self.layers.last() {
            Some(Layer::Dense(d)) => Ok(d.out_dim),
            _ => Err(invalid("last layer must be dense".into())),
        }
    }

    fn first_layer(&self) -> &ScFirstConv {
        match self.layers.first() {
            Some(Layer::ScFirstConv(first)) => first,
            _ => unreachable!("validated networks start with the stochastic layer"),
        }
    }

    /// Binary-domain layers applied to the first-layer output.
    pub fn forward_binary(&self, mut x: Tensor) -> Result<Tensor> {
        for layer in &self.layers[1..] {
            x = match layer {
                Layer::ScFirstConv(_) => {
                    return Err(Error::InvalidNetwork(
                        "stochastic layer after the first".into(),
                    ))
                }
                Layer::Conv(c) => conv2d(&x, c)?,
                Layer::MaxPool2x2 => maxpool2x2(&x),
                Layer::Flatten => x.flatten(),
                Layer::Dense(d) => dense(&x, d)?,
            };
        }
        Ok(x)
    }
}

/// Overrides applied on top of the weights file at inference time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InferenceConfig {
    pub stream_len: Option<usize>,
    pub threshold: Option<u32>,
}

impl InferenceConfig {
    pub fn conv_config(&self, spec: &NetworkSpec) -> Result<ConvConfig> {
        let mut cfg = ConvConfig::new(spec.bits)?
            .with_threshold(self.threshold.unwrap_or(spec.first_layer().threshold));
        if let Some(n) = self.stream_len {
            cfg = cfg.with_stream_len(n)?;
        }
        Ok(cfg)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f32]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

fn infer_with(
    engine: &ScConvEngine,
    image: &[u8],
    height: usize,
    width: usize,
    spec: &NetworkSpec,
) -> Result<usize> {
    let first = spec.first_layer();
    let pixels = PixelImage::from_u8(image, first.in_channels, height, width, spec.bits)?;
    let maps = engine.conv_layer(&pixels, &first.kernels)?;
    let logits = spec.forward_binary(Tensor::from_feature_maps(&maps)?)?;
    Ok(argmax(&logits.data))
}

/// Classifies one 8-bit `height x width` image.
pub fn infer(
    image: &[u8],
    height: usize,
    width: usize,
    spec: &NetworkSpec,
    cfg: &InferenceConfig,
) -> Result<usize> {
    spec.validate(height, width)?;
    let engine = ScConvEngine::new(cfg.conv_config(spec)?)?;
    infer_with(&engine, image, height, width, spec)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub total: usize,
    pub errors: usize,
    pub misclassification_rate: f64,
    /// `confusion[label][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Runs [`infer`] over the first `limit` images (all by default).
pub fn evaluate(
    images: &ImageSet,
    labels: &[u8],
    spec: &NetworkSpec,
    cfg: &InferenceConfig,
    limit: Option<usize>,
) -> Result<EvalReport> {
    if images.count != labels.len() {
        return Err(Error::Shape(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let total = limit.map_or(images.count, |l| l.min(images.count));
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let classes = spec.validate(images.rows, images.cols)?;
    if classes != NUM_CLASSES {
        return Err(Error::InvalidNetwork(format!(
            "network has {classes} outputs, expected {NUM_CLASSES}"
        )));
    }
    let engine = ScConvEngine::new(cfg.conv_config(spec)?)?;
    let predictions = (0..total)
        .into_par_iter()
        .map(|i| infer_with(&engine, images.image(i), images.rows, images.cols, spec))
        .collect::<Result<Vec<_>>>()?;

    let mut confusion = vec![vec![0usize; NUM_CLASSES]; NUM_CLASSES];
    for (&label, &pred) in labels.iter().zip(&predictions) {
        let label = usize::from(label);
        if label >= NUM_CLASSES {
            return Err(Error::Shape(format!("label {label} outside 0..=9")));
        }
        confusion[label][pred] += 1;
    }
    let errors = labels
        .iter()
        .zip(&predictions)
        .filter(|(&l, &p)| usize::from(l) != p)
        .count();
    Ok(EvalReport {
        total,
        errors,
        misclassification_rate: errors as f64 / total as f64,
        confusion,
    })
}
