//! A small convolutional classifier: valid convolutions with ReLU, max
//! pooling, dense layers and a softmax output, trained with minibatch SGD on
//! mean cross-entropy. Everything is `f64`.
//!
//! Volumes are stored row-major as `height × width × channels`. Convolution
//! weights are laid out `[filter][ky][kx][channel]` and dense weights
//! `[output][input]`.

pub mod checkpoint;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Geometry(format!(
                "{} values do not fill a {shape} volume",
                data.len()
            )));
        }
        Ok(Volume { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Volume {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    /// Pixels scaled to `[0, 1]`.
    pub fn from_image(img: &ImageTensor) -> Self {
        Volume {
            shape: Shape::new(img.height, img.width, 3),
            data: img.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.shape.width + x) * self.shape.channels + c]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialLayer {
    /// Valid (unpadded) square convolution followed by ReLU.
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
}

impl SpatialLayer {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let (k, s, channels) = match *self {
            SpatialLayer::Conv {
                filters,
                kernel,
                stride,
            } => (kernel, stride, filters),
            SpatialLayer::MaxPool { window, stride } => (window, stride, input.channels),
        };
        if k == 0 || s == 0 || channels == 0 {
            return Err(Error::Geometry(format!("{self:?} has a zero size")));
        }
        if k > input.height || k > input.width {
            return Err(Error::Geometry(format!(
                "{self:?} does not fit a {input} input"
            )));
        }
        Ok(Shape::new(
            (input.height - k) / s + 1,
            (input.width - k) / s + 1,
            channels,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    /// Convolution and pooling layers in application order.
    pub layers: Vec<SpatialLayer>,
    /// Hidden dense layers (ReLU); the output layer is added from `num_classes`.
    pub dense_units: Vec<usize>,
    pub num_classes: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            layers: vec![
                SpatialLayer::Conv {
                    filters: 8,
                    kernel: 3,
                    stride: 1,
                },
                SpatialLayer::MaxPool {
                    window: 2,
                    stride: 2,
                },
                SpatialLayer::Conv {
                    filters: 16,
                    kernel: 3,
                    stride: 1,
                },
                SpatialLayer::MaxPool {
                    window: 2,
                    stride: 2,
                },
            ],
            dense_units: vec![64],
            num_classes: 4,
            learning_rate: 0.05,
            batch_size: 16,
            epochs: 30,
            seed: 0,
        }
    }
}

impl CnnConfig {
    /// Shapes after each spatial layer, starting with `input`.
    pub fn spatial_shapes(&self, input: Shape) -> Result<Vec<Shape>> {
        let mut shapes = vec![input];
        for layer in &self.layers {
            let next = layer.output_shape(*shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Input width of the first dense layer.
    pub fn dense_input_size(&self, input: Shape) -> Result<usize> {
        Ok(self.spatial_shapes(input)?.last().expect("non-empty").len())
    }

    pub fn validate(&self, input: Shape) -> Result<()> {
        if input.is_empty() {
            return Err(Error::Geometry(format!("empty input {input}")));
        }
        self.spatial_shapes(input)?;
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.dense_units.contains(&0) {
            return Err(Error::Geometry("dense layer with zero units".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Keeps the spatial layers, in order, that still fit `input`.
    ///
    /// Used when a configured stack is deeper than small images allow.
    pub fn trimmed_to(&self, input: Shape) -> CnnConfig {
        let mut cfg = self.clone();
        let mut shape = input;
        cfg.layers.clear();
        for layer in &self.layers {
            if let Ok(next) = layer.output_shape(shape) {
                cfg.layers.push(layer.clone());
                shape = next;
            }
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(filters: usize, kernel: usize, stride: usize, in_channels: usize) -> Self {
        ConvLayer {
            filters,
            kernel,
            stride,
            in_channels,
            weights: vec![0.0; filters * kernel * kernel * in_channels],
            bias: vec![0.0; filters],
        }
    }

    #[inline]
    fn w_index(&self, f: usize, ky: usize, kx: usize, c: usize) -> usize {
        ((f * self.kernel + ky) * self.kernel + kx) * self.in_channels + c
    }

    fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.channels != self.in_channels {
            return Err(Error::Geometry(format!(
                "convolution expects {} channels, got {input}",
                self.in_channels
            )));
        }
        SpatialLayer::Conv {
            filters: self.filters,
            kernel: self.kernel,
            stride: self.stride,
        }
        .output_shape(input)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub relu: bool,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    MaxPool { window: usize, stride: usize },
    Dense(DenseLayer),
}

impl Layer {
    fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Conv(c) => Some((&c.weights, &c.bias)),
            Layer::Dense(d) => Some((&d.weights, &d.bias)),
            Layer::MaxPool { .. } => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv(c) => Some((&mut c.weights, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            Layer::MaxPool { .. } => None,
        }
    }
}

/// Convolution + bias, before the activation.
fn conv_pre_activation(input: &Volume, layer: &ConvLayer) -> Result<Volume> {
    let out = layer.output_shape(input.shape)?;
    let (k, s, c) = (layer.kernel, layer.stride, layer.in_channels);
    let in_w = input.shape.width;
    let mut z = Volume::zeros(out);
    for oy in 0..out.height {
        for ox in 0..out.width {
            for f in 0..layer.filters {
                let mut acc = layer.bias[f];
                for ky in 0..k {
                    let row = ((oy * s + ky) * in_w + ox * s) * c;
                    let xs = &input.data[row..row + k * c];
                    let w0 = layer.w_index(f, ky, 0, 0);
                    let ws = &layer.weights[w0..w0 + k * c];
                    acc += xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>();
                }
                z.data[(oy * out.width + ox) * out.channels + f] = acc;
            }
        }
    }
    Ok(z)
}

fn relu(mut v: Volume) -> Volume {
    for x in &mut v.data {
        *x = x.max(0.0);
    }
    v
}

/// Valid cross-correlation plus bias, followed by ReLU.
pub fn conv_forward(input: &Volume, layer: &ConvLayer) -> Result<Volume> {
    Ok(relu(conv_pre_activation(input, layer)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pooled {
    pub output: Volume,
    /// Flat input index of the winner of each output cell.
    pub argmax: Vec<usize>,
}

/// Per-channel window maximum; ties resolve to the first cell in raster order.
pub fn maxpool_forward(input: &Volume, window: usize, stride: usize) -> Result<Pooled> {
    let out = SpatialLayer::MaxPool { window, stride }.output_shape(input.shape)?;
    let c = input.shape.channels;
    let in_w = input.shape.width;
    let mut output = Volume::zeros(out);
    let mut argmax = vec![0; out.len()];
    for oy in 0..out.height {
        for ox in 0..out.width {
            for ch in 0..c {
                let mut best_idx = (oy * stride * in_w + ox * stride) * c + ch;
                let mut best = input.data[best_idx];
                for wy in 0..window {
                    for wx in 0..window {
                        let idx = ((oy * stride + wy) * in_w + ox * stride + wx) * c + ch;
                        if input.data[idx] > best {
                            best = input.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (oy * out.width + ox) * c + ch;
                output.data[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok(Pooled { output, argmax })
}

fn dense_pre_activation(input: &[f64], layer: &DenseLayer) -> Result<Vec<f64>> {
    if input.len() != layer.inputs {
        return Err(Error::Geometry(format!(
            "dense layer expects {} inputs, got {}",
            layer.inputs,
            input.len()
        )));
    }
    Ok((0..layer.outputs)
        .map(|o| {
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            layer.bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class_probs: Vec<f64>,
    pub argmax_class: usize,
}

impl Prediction {
    fn from_logits(logits: &[f64]) -> Self {
        let class_probs = softmax(logits);
        let mut argmax_class = 0;
        for (i, &p) in class_probs.iter().enumerate() {
            if p > class_probs[argmax_class] {
                argmax_class = i;
            }
        }
        Prediction {
            class_probs,
            argmax_class,
        }
    }
}

/// Per-layer parameter gradients, aligned with [`CnnModel::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Gradients {
    fn zeros_like(model: &CnnModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| {
                    l.params()
                        .map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()]))
                })
                .collect(),
        }
    }

    fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some((aw, ab)), Some((bw, bb))) = (a, b) {
                for (x, y) in aw.iter_mut().zip(bw) {
                    *x += scale * y;
                }
                for (x, y) in ab.iter_mut().zip(bb) {
                    *x += scale * y;
                }
            }
        }
    }

    /// All gradient values in [`CnnModel::parameters`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.layers.iter().flatten() {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Intermediate values of one forward pass.
struct Trace {
    /// Input to each layer (the flattened volume for dense layers).
    inputs: Vec<Vec<f64>>,
    input_shapes: Vec<Shape>,
    /// Pre-activation output of conv and dense layers.
    pre: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
    logits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel {
    config: CnnConfig,
    input: Shape,
    layers: Vec<Layer>,
    epochs_run: usize,
    loss_history: Vec<f64>,
}

impl CnnModel {
    /// A model with every weight and bias set to zero.
    pub fn zeros(config: &CnnConfig, input: Shape) -> Result<Self> {
        config.validate(input)?;
        let shapes = config.spatial_shapes(input)?;
        let mut layers = Vec::new();
        for (spec, shape) in config.layers.iter().zip(&shapes) {
            layers.push(match *spec {
                SpatialLayer::Conv {
                    filters,
                    kernel,
                    stride,
                } => Layer::Conv(ConvLayer::zeros(filters, kernel, stride, shape.channels)),
                SpatialLayer::MaxPool { window, stride } => Layer::MaxPool { window, stride },
            });
        }
        let mut width = shapes.last().expect("non-empty").len();
        let hidden = config.dense_units.iter().map(|&u| (u, true));
        for (units, relu) in hidden.chain(std::iter::once((config.num_classes, false))) {
            layers.push(Layer::Dense(DenseLayer {
                inputs: width,
                outputs: units,
                relu,
                weights: vec![0.0; units * width],
                bias: vec![0.0; units],
            }));
            width = units;
        }
        Ok(CnnModel {
            config: config.clone(),
            input,
            layers,
            epochs_run: 0,
            loss_history: Vec::new(),
        })
    }

    /// He-normal weights and zero biases drawn from `rng`.
    pub fn initialize(config: &CnnConfig, input: Shape, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut model = Self::zeros(config, input)?;
        for layer in &mut model.layers {
            let (fan_in, weights) = match layer {
                Layer::Conv(c) => (c.kernel * c.kernel * c.in_channels, &mut c.weights),
                Layer::Dense(d) => (d.inputs, &mut d.weights),
                Layer::MaxPool { .. } => continue,
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .map_err(|e| Error::Config(e.to_string()))?;
            for w in weights.iter_mut() {
                *w = normal.sample(rng);
            }
        }
        Ok(model)
    }

    /// The seeded initialization `train` starts from.
    pub fn seeded(config: &CnnConfig, input: Shape) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::initialize(config, input, &mut rng)
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn epochs_run(&self) -> usize {
        self.epochs_run
    }

    /// Mean training loss of each epoch.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// All parameters flattened: per layer, weights then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for (w, b) in self.layers.iter().filter_map(Layer::params) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(Error::LengthMismatch {
                expected: self.num_parameters(),
                found: values.len(),
            });
        }
        let mut rest = values;
        for (w, b) in self.layers.iter_mut().filter_map(Layer::params_mut) {
            let (head, tail) = rest.split_at(w.len());
            w.copy_from_slice(head);
            let (head, tail) = tail.split_at(b.len());
            b.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub(crate) fn set_training_metadata(&mut self, epochs_run: usize, loss_history: Vec<f64>) {
        self.epochs_run = epochs_run;
        self.loss_history = loss_history;
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        if shape != self.input {
            return Err(Error::Geometry(format!(
                "model expects {} input, got {shape}",
                self.input
            )));
        }
        Ok(())
    }

    fn trace(&self, input: &Volume) -> Result<Trace> {
        self.check_input(input.shape)?;
        let n = self.layers.len();
        let mut trace = Trace {
            inputs: Vec::with_capacity(n),
            input_shapes: Vec::with_capacity(n),
            pre: vec![Vec::new(); n],
            argmax: vec![Vec::new(); n],
            logits: Vec::new(),
        };
        let mut current = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            trace.inputs.push(current.data.clone());
            trace.input_shapes.push(current.shape);
            current = match layer {
                Layer::Conv(c) => {
                    let z = conv_pre_activation(&current, c)?;
                    trace.pre[i] = z.data.clone();
                    relu(z)
                }
                Layer::MaxPool { window, stride } => {
                    let p = maxpool_forward(&current, *window, *stride)?;
                    trace.argmax[i] = p.argmax;
                    p.output
                }
                Layer::Dense(d) => {
                    let z = dense_pre_activation(&current.data, d)?;
                    trace.pre[i] = z.clone();
                    let shape = Shape::new(1, 1, z.len());
                    let v = Volume { shape, data: z };
                    if d.relu {
                        relu(v)
                    } else {
                        v
                    }
                }
            };
        }
        trace.logits = current.data;
        Ok(trace)
    }

    /// Output-layer values before the softmax.
    pub fn logits(&self, input: &Volume) -> Result<Vec<f64>> {
        Ok(self.trace(input)?.logits)
    }

    pub fn forward_volume(&self, input: &Volume) -> Result<Prediction> {
        Ok(Prediction::from_logits(&self.logits(input)?))
    }

    /// Loss and parameter gradients of a single example.
    fn example_gradients(&self, input: &Volume, label: usize) -> Result<(f64, Gradients)> {
        let trace = self.trace(input)?;
        let loss = cross_entropy(&trace.logits, label);
        let mut delta = softmax(&trace.logits);
        delta[label] -= 1.0;

        let mut grads = Gradients::zeros_like(self);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[i];
            delta = match layer {
                Layer::Dense(d) => {
                    if d.relu {
                        for (g, z) in delta.iter_mut().zip(&trace.pre[i]) {
                            if *z <= 0.0 {
                                *g = 0.0;
                            }
                        }
                    }
                    let (gw, gb) = grads.layers[i].as_mut().expect("dense has params");
                    let mut dx = vec![0.0; d.inputs];
                    for o in 0..d.outputs {
                        let g = delta[o];
                        gb[o] += g;
                        let row = o * d.inputs;
                        for j in 0..d.inputs {
                            gw[row + j] += g * x[j];
                            dx[j] += g * d.weights[row + j];
                        }
                    }
                    dx
                }
                Layer::MaxPool { .. } => {
                    let mut dx = vec![0.0; x.len()];
                    for (g, &idx) in delta.iter().zip(&trace.argmax[i]) {
                        dx[idx] += g;
                    }
                    dx
                }
                Layer::Conv(c) => {
                    for (g, z) in delta.iter_mut().zip(&trace.pre[i]) {
                        if *z <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    let in_shape = trace.input_shapes[i];
                    let out = c.output_shape(in_shape)?;
                    let (gw, gb) = grads.layers[i].as_mut().expect("conv has params");
                    let mut dx = vec![0.0; x.len()];
                    let (k, s, ch) = (c.kernel, c.stride, c.in_channels);
                    for oy in 0..out.height {
                        for ox in 0..out.width {
                            for f in 0..c.filters {
                                let g = delta[(oy * out.width + ox) * out.channels + f];
                                if g == 0.0 {
                                    continue;
                                }
                                gb[f] += g;
                                for ky in 0..k {
                                    let row = ((oy * s + ky) * in_shape.width + ox * s) * ch;
                                    let w0 = c.w_index(f, ky, 0, 0);
                                    for t in 0..k * ch {
                                        gw[w0 + t] += g * x[row + t];
                                        dx[row + t] += g * c.weights[w0 + t];
                                    }
                                }
                            }
                        }
                    }
                    dx
                }
            };
        }
        Ok((loss, grads))
    }

    fn batch_gradients(&self, batch: &[(&Volume, usize)]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::InsufficientData {
                needed: 1,
                found: 0,
            });
        }
        let per_example: Vec<Result<(f64, Gradients)>> = batch
            .par_iter()
            .map(|(v, label)| self.example_gradients(v, *label))
            .collect();
        let scale = 1.0 / batch.len() as f64;
        let mut total = Gradients::zeros_like(self);
        let mut loss = 0.0;
        // summed in batch order so results do not depend on thread scheduling
        for r in per_example {
            let (l, g) = r?;
            loss += l;
            total.add_scaled(&g, scale);
        }
        Ok((loss * scale, total))
    }

    fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            if let (Some((w, b)), Some((gw, gb))) = (layer.params_mut(), g) {
                for (p, d) in w.iter_mut().zip(gw) {
                    *p -= learning_rate * d;
                }
                for (p, d) in b.iter_mut().zip(gb) {
                    *p -= learning_rate * d;
                }
            }
        }
    }
}

fn labeled(images: &[ImageTensor], num_classes: usize) -> Result<Vec<usize>> {
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let label = img.label.ok_or(Error::Unlabeled { record: i })?;
            if label >= num_classes {
                return Err(Error::LabelRange {
                    label,
                    classes: num_classes,
                });
            }
            Ok(label)
        })
        .collect()
}

fn image_shape(img: &ImageTensor) -> Shape {
    Shape::new(img.height, img.width, 3)
}

pub fn forward(img: &ImageTensor, m: &CnnModel) -> Result<Prediction> {
    m.check_input(image_shape(img))?;
    m.forward_volume(&Volume::from_image(img))
}

pub fn predict_batch(imgs: &[ImageTensor], m: &CnnModel) -> Result<Vec<Prediction>> {
    imgs.par_iter().map(|img| forward(img, m)).collect()
}

/// Mean cross-entropy of a labeled batch and its gradients.
pub fn loss_and_gradients(batch: &[ImageTensor], m: &CnnModel) -> Result<(f64, Gradients)> {
    let labels = labeled(batch, m.config.num_classes)?;
    for img in batch {
        m.check_input(image_shape(img))?;
    }
    let volumes: Vec<Volume> = batch.iter().map(Volume::from_image).collect();
    let pairs: Vec<(&Volume, usize)> = volumes.iter().zip(labels).collect();
    m.batch_gradients(&pairs)
}

/// Minibatch SGD from a seeded He initialization.
///
/// The same seed drives initialization and the per-epoch shuffles, so the
/// result is a pure function of the image order and the config.
pub fn train(images: &[ImageTensor], cfg: &CnnConfig) -> Result<CnnModel> {
    let Some(first) = images.first() else {
        return Err(Error::InsufficientData {
            needed: 1,
            found: 0,
        });
    };
    let input = image_shape(first);
    if let Some(bad) = images.iter().find(|i| image_shape(i) != input) {
        return Err(Error::Geometry(format!(
            "mixed image sizes {input} and {}",
            image_shape(bad)
        )));
    }
    let labels = labeled(images, cfg.num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = CnnModel::initialize(cfg, input, &mut rng)?;
    let volumes: Vec<Volume> = images.iter().map(Volume::from_image).collect();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Volume, usize)> =
                chunk.iter().map(|&i| (&volumes[i], labels[i])).collect();
            let (loss, grads) = model.batch_gradients(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            model.apply_gradients(&grads, cfg.learning_rate);
        }
        let mean = epoch_loss / images.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    if !model.parameters().iter().all(|p| p.is_finite()) {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            loss: f64::NAN,
        });
    }
    model.set_training_metadata(cfg.epochs, history);
    Ok(model)
}
