//! Layer abstraction with forward and backward passes: the minimal training
//! machinery shared by the autoencoder and CNN methods.
//!
//! A model is a flat list of layers. Forward can record a tape of per-layer
//! inputs; backward walks the tape in reverse and produces gradients shaped
//! exactly like the parameters.

mod checkpoint;
mod loss;
mod optim;
mod train;

pub use checkpoint::{load_model, load_model_from_bytes, save_model, save_model_to_bytes};
pub use loss::{cross_entropy_loss, mse_loss};
pub use optim::{sgd_step, OptimizerConfig, Velocity};
pub use train::{train_epochs, LossKind, Target};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, ActivationKind, Tensor};

/// One layer of a network, by kind and hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { units: usize },
    Conv { filters: usize, kernel_h: usize, kernel_w: usize },
    MaxPool { window: usize, stride: usize },
    Activation(ActivationKind),
    Flatten,
    Softmax,
}

impl LayerSpec {
    /// Output shape for a given input shape, or why the pair cannot chain.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { units } => {
                if input.len() != 1 {
                    return Err(Error::Dimension(format!(
                        "dense layer needs a rank-1 input, got {input:?}"
                    )));
                }
                Ok(vec![units])
            }
            LayerSpec::Conv {
                filters,
                kernel_h,
                kernel_w,
            } => {
                if input.len() != 3 {
                    return Err(Error::Dimension(format!(
                        "conv layer needs a [c,h,w] input, got {input:?}"
                    )));
                }
                let (h, w) = (input[1], input[2]);
                if kernel_h > h || kernel_w > w {
                    return Err(Error::Dimension(format!(
                        "conv kernel {kernel_h}x{kernel_w} larger than input {h}x{w}"
                    )));
                }
                Ok(vec![filters, h - kernel_h + 1, w - kernel_w + 1])
            }
            LayerSpec::MaxPool { window, stride } => {
                if input.len() != 3 {
                    return Err(Error::Dimension(format!(
                        "maxpool layer needs a [c,h,w] input, got {input:?}"
                    )));
                }
                let (h, w) = (input[1], input[2]);
                if window > h || window > w || stride == 0 {
                    return Err(Error::Dimension(format!(
                        "pool window {window} stride {stride} does not fit input {h}x{w}"
                    )));
                }
                if (h - window) % stride != 0 || (w - window) % stride != 0 {
                    return Err(Error::Dimension(format!(
                        "pool window {window} stride {stride} does not tile input {h}x{w}"
                    )));
                }
                Ok(vec![
                    input[0],
                    (h - window) / stride + 1,
                    (w - window) / stride + 1,
                ])
            }
            LayerSpec::Activation(_) => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(Error::Dimension(format!(
                        "softmax layer needs a rank-1 input, got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }

    fn describe(&self) -> String {
        match *self {
            LayerSpec::Dense { units } => format!("dense units={units}"),
            LayerSpec::Conv {
                filters,
                kernel_h,
                kernel_w,
            } => format!("conv filters={filters} kernel={kernel_h}x{kernel_w}"),
            LayerSpec::MaxPool { window, stride } => {
                format!("maxpool window={window} stride={stride}")
            }
            LayerSpec::Activation(kind) => format!("act {}", kind.name()),
            LayerSpec::Flatten => "flatten".into(),
            LayerSpec::Softmax => "softmax".into(),
        }
    }
}

/// Declarative description of a network: input shape, layers, init seed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

impl ModelSpec {
    /// Per-boundary shapes: element 0 is the input shape, element i+1 the
    /// output shape of layer i. Fails on the first layer pair that does not
    /// chain.
    pub fn boundary_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::Usage("model spec has no layers".into()));
        }
        if self.input_shape.is_empty() || self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "bad input shape {:?}",
                self.input_shape
            )));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.output_shape(shapes.last().unwrap()).map_err(|e| {
                Error::Dimension(format!(
                    "layer {i} ({}) cannot follow shape {:?}: {e}",
                    layer.describe(),
                    shapes.last().unwrap()
                ))
            })?;
            shapes.push(out);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.boundary_shapes()?.pop().unwrap())
    }
}

/// Weight/bias pair for one parametric layer. Also reused for gradients and
/// optimizer velocity, which share the same shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamPair {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// A built model: spec plus per-layer parameters and training metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    spec: ModelSpec,
    params: Vec<Option<ParamPair>>,
    epochs_trained: usize,
    loss_history: Vec<f32>,
}

/// Intermediates recorded by a forward pass, consumed by backward.
pub struct Tape {
    /// inputs[i] is the input to layer i; the final entry is the output.
    inputs: Vec<Tensor>,
    /// Per layer, the argmax indices if the layer is a maxpool.
    pool_argmax: Vec<Option<Vec<usize>>>,
}

impl Tape {
    pub fn output(&self) -> &Tensor {
        self.inputs.last().unwrap()
    }
}

/// Per-layer gradient tensors, shaped exactly like the model parameters.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub per_layer: Vec<Option<ParamPair>>,
}

impl Gradients {
    pub fn zeros_like(state: &ModelState) -> Self {
        let per_layer = state
            .params
            .iter()
            .map(|p| {
                p.as_ref().map(|pair| ParamPair {
                    weights: Tensor::zeros(pair.weights.shape().to_vec()),
                    bias: Tensor::zeros(pair.bias.shape().to_vec()),
                })
            })
            .collect();
        Gradients { per_layer }
    }

    /// Accumulates `other` into self elementwise.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.per_layer.iter_mut().zip(&other.per_layer) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                for (x, y) in a.weights.data_mut().iter_mut().zip(b.weights.data()) {
                    *x += y;
                }
                for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                    *x += y;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for pair in self.per_layer.iter_mut().flatten() {
            for x in pair.weights.data_mut() {
                *x *= factor;
            }
            for x in pair.bias.data_mut() {
                *x *= factor;
            }
        }
    }
}

/// Builds a model from a spec: weights uniform in +-sqrt(6/(fan_in+fan_out))
/// drawn from the spec seed, biases zero.
pub fn build_model(spec: &ModelSpec) -> Result<ModelState> {
    let shapes = spec.boundary_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut params = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        let input = &shapes[i];
        let pair = match *layer {
            LayerSpec::Dense { units } => {
                let fan_in = input[0];
                Some(init_pair(vec![units, fan_in], fan_in, units, &mut rng))
            }
            LayerSpec::Conv {
                filters,
                kernel_h,
                kernel_w,
            } => {
                let c = input[0];
                let fan_in = c * kernel_h * kernel_w;
                let fan_out = filters * kernel_h * kernel_w;
                Some(init_pair(
                    vec![filters, c, kernel_h, kernel_w],
                    fan_in,
                    fan_out,
                    &mut rng,
                ))
            }
            _ => None,
        };
        params.push(pair);
    }
    Ok(ModelState {
        spec: spec.clone(),
        params,
        epochs_trained: 0,
        loss_history: Vec::new(),
    })
}

fn init_pair(weight_shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> ParamPair {
    let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
    let n: usize = weight_shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    let bias_len = weight_shape[0];
    ParamPair {
        weights: Tensor::new(weight_shape, data).unwrap(),
        bias: Tensor::zeros(vec![bias_len]),
    }
}

impl ModelState {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Option<ParamPair>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<ParamPair>] {
        &mut self.params
    }

    pub fn epochs_trained(&self) -> usize {
        self.epochs_trained
    }

    pub fn loss_history(&self) -> &[f32] {
        &self.loss_history
    }

    pub(crate) fn record_epoch(&mut self, mean_loss: f32) {
        self.epochs_trained += 1;
        self.loss_history.push(mean_loss);
    }

    pub(crate) fn from_parts(
        spec: ModelSpec,
        params: Vec<Option<ParamPair>>,
        epochs_trained: usize,
    ) -> Self {
        ModelState {
            spec,
            params,
            epochs_trained,
            loss_history: Vec::new(),
        }
    }

    /// Inference-only forward pass.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (out, _) = self.run_forward(input, false)?;
        Ok(out)
    }

    /// Forward pass recording the tape needed by `backward`.
    pub fn forward_with_tape(&self, input: &Tensor) -> Result<(Tensor, Tape)> {
        let (out, tape) = self.run_forward(input, true)?;
        Ok((out, tape.unwrap()))
    }

    /// Output of layer `layer_idx` (inclusive) for the given input.
    pub fn forward_to(&self, input: &Tensor, layer_idx: usize) -> Result<Tensor> {
        if layer_idx >= self.spec.layers.len() {
            return Err(Error::Usage(format!(
                "layer index {layer_idx} out of range for {} layers",
                self.spec.layers.len()
            )));
        }
        self.check_input_shape(input)?;
        let mut x = input.clone();
        for i in 0..=layer_idx {
            let (y, _) = self.apply_layer(i, &x)?;
            x = y;
        }
        Ok(x)
    }

    fn check_input_shape(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.spec.input_shape.as_slice() {
            return Err(Error::Dimension(format!(
                "input shape {:?} does not match model input {:?}",
                input.shape(),
                self.spec.input_shape
            )));
        }
        Ok(())
    }

    fn run_forward(&self, input: &Tensor, record: bool) -> Result<(Tensor, Option<Tape>)> {
        self.check_input_shape(input)?;
        let mut inputs = Vec::new();
        let mut pool_argmax = Vec::new();
        let mut x = input.clone();
        for i in 0..self.spec.layers.len() {
            let (y, argmax) = self.apply_layer(i, &x)?;
            if record {
                inputs.push(x);
                pool_argmax.push(argmax);
            }
            x = y;
        }
        if record {
            inputs.push(x.clone());
            Ok((x, Some(Tape { inputs, pool_argmax })))
        } else {
            Ok((x, None))
        }
    }

    fn apply_layer(&self, i: usize, x: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
        match self.spec.layers[i] {
            LayerSpec::Dense { units } => {
                let pair = self.params[i].as_ref().unwrap();
                let fan_in = x.len();
                let w = &pair.weights;
                let mut out = pair.bias.data().to_vec();
                for (o, out_v) in out.iter_mut().enumerate() {
                    let row = &w.data()[o * fan_in..(o + 1) * fan_in];
                    let mut acc = 0.0f32;
                    for (wv, xv) in row.iter().zip(x.data()) {
                        acc += wv * xv;
                    }
                    *out_v += acc;
                }
                Ok((Tensor::new(vec![units], out)?, None))
            }
            LayerSpec::Conv { .. } => {
                let pair = self.params[i].as_ref().unwrap();
                let out = tensor::conv2d_valid(x, &pair.weights, &pair.bias)?;
                Ok((out, None))
            }
            LayerSpec::MaxPool { window, stride } => {
                let (out, argmax) = tensor::maxpool2(x, window, stride)?;
                Ok((out, Some(argmax)))
            }
            LayerSpec::Activation(kind) => Ok((tensor::activate(x, kind), None)),
            LayerSpec::Flatten => Ok((x.clone().reshape(vec![x.len()])?, None)),
            LayerSpec::Softmax => Ok((tensor::softmax(x)?, None)),
        }
    }

    /// Backpropagates `output_grad` (gradient of the loss with respect to the
    /// network output) through the tape.
    pub fn backward(&self, tape: &Tape, output_grad: &Tensor) -> Result<Gradients> {
        self.backward_impl(tape, output_grad, false)
    }

    /// Backpropagates a gradient expressed with respect to the logits feeding
    /// the final softmax layer (the fused softmax + cross-entropy form).
    pub fn backward_from_logits(&self, tape: &Tape, logits_grad: &Tensor) -> Result<Gradients> {
        if !matches!(self.spec.layers.last(), Some(LayerSpec::Softmax)) {
            return Err(Error::Usage(
                "backward_from_logits requires a final softmax layer".into(),
            ));
        }
        self.backward_impl(tape, logits_grad, true)
    }

    fn backward_impl(
        &self,
        tape: &Tape,
        grad: &Tensor,
        skip_final_softmax: bool,
    ) -> Result<Gradients> {
        let n_layers = self.spec.layers.len();
        if tape.inputs.len() != n_layers + 1 || tape.pool_argmax.len() != n_layers {
            return Err(Error::Usage(
                "tape does not match this model; record a fresh forward pass".into(),
            ));
        }
        let start = if skip_final_softmax {
            n_layers - 1
        } else {
            n_layers
        };
        if grad.shape() != tape.inputs[start].shape() {
            return Err(Error::Dimension(format!(
                "loss gradient shape {:?} does not match {:?}",
                grad.shape(),
                tape.inputs[start].shape()
            )));
        }
        let mut grads = Gradients {
            per_layer: vec![None; n_layers],
        };
        let mut g = grad.clone();
        for i in (0..start).rev() {
            g = self.backward_layer(i, tape, &g, &mut grads)?;
        }
        Ok(grads)
    }

    fn backward_layer(
        &self,
        i: usize,
        tape: &Tape,
        g: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let x = &tape.inputs[i];
        match self.spec.layers[i] {
            LayerSpec::Dense { units } => {
                let pair = self.params[i].as_ref().unwrap();
                let fan_in = x.len();
                let mut dw = vec![0.0f32; units * fan_in];
                let mut dx = vec![0.0f32; fan_in];
                for o in 0..units {
                    let gv = g.data()[o];
                    let w_row = &pair.weights.data()[o * fan_in..(o + 1) * fan_in];
                    let dw_row = &mut dw[o * fan_in..(o + 1) * fan_in];
                    for ((dwv, dxv), (xv, wv)) in dw_row
                        .iter_mut()
                        .zip(dx.iter_mut())
                        .zip(x.data().iter().zip(w_row))
                    {
                        *dwv = gv * xv;
                        *dxv += gv * wv;
                    }
                }
                grads.per_layer[i] = Some(ParamPair {
                    weights: Tensor::new(vec![units, fan_in], dw)?,
                    bias: g.clone(),
                });
                Tensor::new(vec![fan_in], dx)
            }
            LayerSpec::Conv {
                filters,
                kernel_h,
                kernel_w,
            } => {
                let pair = self.params[i].as_ref().unwrap();
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (oh, ow) = (g.shape()[1], g.shape()[2]);
                let mut dw = vec![0.0f32; filters * c * kernel_h * kernel_w];
                let mut db = vec![0.0f32; filters];
                let mut dx = vec![0.0f32; c * h * w];
                for f in 0..filters {
                    let g_plane = &g.data()[f * oh * ow..(f + 1) * oh * ow];
                    db[f] = g_plane.iter().sum();
                    for ci in 0..c {
                        let x_plane = &x.data()[ci * h * w..(ci + 1) * h * w];
                        let dx_plane = &mut dx[ci * h * w..(ci + 1) * h * w];
                        for ky in 0..kernel_h {
                            for kx in 0..kernel_w {
                                let widx = ((f * c + ci) * kernel_h + ky) * kernel_w + kx;
                                let wv = pair.weights.data()[widx];
                                let mut acc = 0.0f32;
                                for oy in 0..oh {
                                    let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                                    let x_row =
                                        &x_plane[(oy + ky) * w + kx..(oy + ky) * w + kx + ow];
                                    let dx_row = &mut dx_plane
                                        [(oy + ky) * w + kx..(oy + ky) * w + kx + ow];
                                    for ((gv, xv), dxv) in
                                        g_row.iter().zip(x_row).zip(dx_row.iter_mut())
                                    {
                                        acc += gv * xv;
                                        *dxv += gv * wv;
                                    }
                                }
                                dw[widx] = acc;
                            }
                        }
                    }
                }
                grads.per_layer[i] = Some(ParamPair {
                    weights: Tensor::new(vec![filters, c, kernel_h, kernel_w], dw)?,
                    bias: Tensor::new(vec![filters], db)?,
                });
                Tensor::new(vec![c, h, w], dx)
            }
            LayerSpec::MaxPool { .. } => {
                let argmax = tape.pool_argmax[i].as_ref().unwrap();
                let mut dx = vec![0.0f32; x.len()];
                for (gv, &idx) in g.data().iter().zip(argmax) {
                    dx[idx] += gv;
                }
                Tensor::new(x.shape().to_vec(), dx)
            }
            LayerSpec::Activation(kind) => {
                let y = &tape.inputs[i + 1];
                let dx = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, &yv)| gv * kind.derivative_from_output(yv))
                    .collect();
                Tensor::new(x.shape().to_vec(), dx)
            }
            LayerSpec::Flatten => g.clone().reshape(x.shape().to_vec()),
            LayerSpec::Softmax => {
                // Exact softmax Jacobian: dx_j = y_j * (g_j - sum_k g_k y_k)
                let y = &tape.inputs[i + 1];
                let dot: f32 = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
                let dx = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| yv * (gv - dot))
                    .collect();
                Tensor::new(x.shape().to_vec(), dx)
            }
        }
    }
}

#[cfg(test)]
mod tests;
