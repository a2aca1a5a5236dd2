use rand::Rng;

use super::ops::{self, DropoutMask, Mode, PoolIndices};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose, StreamRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Softmax,
}

/// One layer of a sequential network.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// "Valid" convolution, stride 1.
    Conv2D {
        filters: usize,
        kernel: (usize, usize),
        activation: Activation,
    },
    /// 2x2 window, stride 2.
    MaxPool2D,
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: usize) -> Self {
        LayerSpec::Conv2D { filters, kernel: (kernel, kernel), activation: Activation::Relu }
    }

    pub fn dense(units: usize, activation: Activation) -> Self {
        LayerSpec::Dense { units, activation }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2D { .. } => "Conv2D",
            LayerSpec::MaxPool2D => "MaxPool2D",
            LayerSpec::Dropout { .. } => "Dropout",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::Dense { .. } => "Dense",
        }
    }

    fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2D { .. } | LayerSpec::Dense { .. })
    }
}

/// Weight and bias tensors of one parametrized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    weights: Tensor,
    bias: Tensor,
}

impl Params {
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        self.weights.data_mut()
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        self.bias.data_mut()
    }

    fn zeros_like(&self) -> Self {
        Params { weights: Tensor::zeros(self.weights.shape()), bias: Tensor::zeros(self.bias.shape()) }
    }

    fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Shapes of the weight and bias tensors a layer needs for a given input shape.
fn param_shapes(layer: &LayerSpec, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
    match *layer {
        LayerSpec::Conv2D { filters, kernel: (kh, kw), .. } => {
            Some((vec![kh, kw, input[2], filters], vec![filters]))
        }
        LayerSpec::Dense { units, .. } => Some((vec![input[0], units], vec![units])),
        _ => None,
    }
}

fn output_shape(layer: &LayerSpec, input: &[usize], index: usize, last: bool) -> Result<Vec<usize>> {
    let bad = |msg: String| Error::Config(format!("layer {index} ({}): {msg}", layer.name()));
    match *layer {
        LayerSpec::Conv2D { filters, kernel: (kh, kw), activation } => {
            let &[h, w, _] = input else {
                return Err(bad(format!("needs an HxWxC input, got {input:?}")));
            };
            if filters == 0 || kh == 0 || kw == 0 {
                return Err(bad("zero filters or kernel size".into()));
            }
            if kh > h || kw > w {
                return Err(bad(format!("kernel {kh}x{kw} exceeds input {h}x{w}")));
            }
            if activation == Activation::Softmax {
                return Err(bad("softmax is only valid on the output layer".into()));
            }
            Ok(vec![h - kh + 1, w - kw + 1, filters])
        }
        LayerSpec::MaxPool2D => {
            let &[h, w, c] = input else {
                return Err(bad(format!("needs an HxWxC input, got {input:?}")));
            };
            if h < 2 || w < 2 {
                return Err(bad(format!("input {h}x{w} too small to pool")));
            }
            Ok(vec![h / 2, w / 2, c])
        }
        LayerSpec::Dropout { rate } => {
            ops::check_dropout_rate(rate)?;
            Ok(input.to_vec())
        }
        LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        LayerSpec::Dense { units, activation } => {
            if input.len() != 1 {
                return Err(bad(format!("needs a flat input, got {input:?}")));
            }
            if units == 0 {
                return Err(bad("zero units".into()));
            }
            if activation == Activation::Softmax && !last {
                return Err(bad("softmax is only valid on the output layer".into()));
            }
            Ok(vec![units])
        }
    }
}

/// A sequential convolutional classifier ending in a 2-way softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<Option<Params>>,
    shapes: Vec<Vec<usize>>,
    mode: Mode,
}

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new(input_shape: [usize; 3], layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let shapes = Self::walk_shapes(&input_shape, &layers)?;
        let mut rng = rng::stream(seed, Purpose::Init, 0);
        let mut params = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            let input = if i == 0 { &input_shape[..] } else { &shapes[i - 1][..] };
            params.push(param_shapes(layer, input).map(|(ws, bs)| {
                let (fan_in, fan_out) = match *ws.as_slice() {
                    [kh, kw, c, f] => (kh * kw * c, kh * kw * f),
                    [n, m] => (n, m),
                    _ => unreachable!(),
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Tensor::from_fn(&ws, |_| (2.0 * rng.random::<f64>() - 1.0) * bound);
                Params { weights, bias: Tensor::zeros(&bs) }
            }));
        }
        Ok(Self { input_shape: input_shape.to_vec(), layers, params, shapes, mode: Mode::Eval })
    }

    /// Assembles a network from explicit parameters, in layer order, one
    /// `(weights, bias)` pair per Conv2D/Dense layer.
    pub fn from_parts(input_shape: [usize; 3], layers: Vec<LayerSpec>, mut weights: Vec<(Tensor, Tensor)>) -> Result<Self> {
        let shapes = Self::walk_shapes(&input_shape, &layers)?;
        let needed = layers.iter().filter(|l| l.has_params()).count();
        if weights.len() != needed {
            return Err(Error::Config(format!("{} parameter pairs for {needed} parametrized layers", weights.len())));
        }
        weights.reverse();
        let mut params = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            let input = if i == 0 { &input_shape[..] } else { &shapes[i - 1][..] };
            match param_shapes(layer, input) {
                None => params.push(None),
                Some((ws, bs)) => {
                    let (w, b) = weights.pop().expect("counted above");
                    if w.shape() != ws.as_slice() || b.shape() != bs.as_slice() {
                        return Err(Error::dim(
                            "network",
                            format!("layer {i}: expected {ws:?}/{bs:?}, got {:?}/{:?}", w.shape(), b.shape()),
                        ));
                    }
                    params.push(Some(Params { weights: w, bias: b }));
                }
            }
        }
        Ok(Self { input_shape: input_shape.to_vec(), layers, params, shapes, mode: Mode::Eval })
    }

    fn walk_shapes(input_shape: &[usize; 3], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
        if input_shape.contains(&0) {
            return Err(Error::Config(format!("input shape {input_shape:?} has a zero axis")));
        }
        match layers.last() {
            Some(LayerSpec::Dense { units: 2, activation: Activation::Softmax }) => {}
            _ => return Err(Error::Config("the output layer must be Dense(2) with softmax".into())),
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            current = output_shape(layer, &current, i, i + 1 == layers.len())?;
            shapes.push(current.clone());
        }
        Ok(shapes)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Output shape of every layer, in order.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn layer_params(&self, index: usize) -> Option<&Params> {
        self.params.get(index).and_then(Option::as_ref)
    }

    pub fn layer_params_mut(&mut self, index: usize) -> Option<&mut Params> {
        self.params.get_mut(index).and_then(Option::as_mut)
    }

    /// Parameter tensors in layer order: weights then bias for each layer.
    pub fn param_tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.params.iter().flatten().flat_map(|p| [&p.weights, &p.bias])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(Params::len).sum()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.param_tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::dim("set_flat_params", format!("{} values for {} parameters", values.len(), self.param_count())));
        }
        let mut rest = values;
        for p in self.params.iter_mut().flatten() {
            for t in [&mut p.weights, &mut p.bias] {
                let (head, tail) = rest.split_at(t.len());
                t.data_mut().copy_from_slice(head);
                rest = tail;
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::dim(
                "network input",
                format!("expected {:?}, got {:?}", self.input_shape, input.shape()),
            ));
        }
        Ok(())
    }

    /// Runs the network, keeping every intermediate activation for backward.
    ///
    /// In train mode `dropout_rng` must be supplied; in eval mode it is ignored.
    pub fn forward(&self, input: &Tensor, dropout_rng: Option<&mut StreamRng>) -> Result<Trace> {
        self.forward_in(self.mode, input, dropout_rng)
    }

    fn forward_in(&self, mode: Mode, input: &Tensor, mut dropout_rng: Option<&mut StreamRng>) -> Result<Trace> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        acts.push(input.clone());
        for (layer, params) in self.layers.iter().zip(&self.params) {
            let x = acts.last().expect("input pushed");
            let (out, cache) = match *layer {
                LayerSpec::Conv2D { activation, .. } => {
                    let p = params.as_ref().expect("conv params");
                    let mut y = ops::conv2d_forward(x, &p.weights, &p.bias)?;
                    if activation == Activation::Relu {
                        ops::relu_in_place(&mut y);
                    }
                    (y, Cache::None)
                }
                LayerSpec::Dense { activation, .. } => {
                    let p = params.as_ref().expect("dense params");
                    let mut y = ops::dense_forward(x, &p.weights, &p.bias)?;
                    if activation == Activation::Relu {
                        ops::relu_in_place(&mut y);
                    }
                    (y, Cache::None)
                }
                LayerSpec::MaxPool2D => {
                    let (y, idx) = ops::maxpool_forward(x)?;
                    (y, Cache::Pool(idx))
                }
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Eval => (x.clone(), Cache::Dropout(DropoutMask::identity())),
                    Mode::Train => {
                        let rng = dropout_rng.as_deref_mut().ok_or_else(|| {
                            Error::Contract("train-mode forward pass needs a dropout RNG".into())
                        })?;
                        let (y, mask) = ops::dropout(x, rate, Mode::Train, rng)?;
                        (y, Cache::Dropout(mask))
                    }
                },
                LayerSpec::Flatten => (x.clone().reshape(vec![x.len()])?, Cache::None),
            };
            acts.push(out);
            caches.push(cache);
        }
        Ok(Trace { acts, caches })
    }

    /// Accumulates parameter gradients for one example into `grads` and,
    /// when requested, the gradient with respect to the input image.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_logits: &Tensor,
        grads: &mut Gradients,
        input_grad: Option<&mut Tensor>,
    ) -> Result<()> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::Contract("trace was recorded by a different network".into()));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Contract("gradient buffer belongs to a different network".into()));
        }
        let mut g = grad_logits.clone();
        g.same_shape(trace.logits(), "backward")?;
        for i in (0..self.layers.len()).rev() {
            let input = &trace.acts[i];
            let output = &trace.acts[i + 1];
            let want_input = i > 0 || input_grad.is_some();
            let mismatch = || Error::Contract(format!("trace cache does not match layer {i}"));
            match &self.layers[i] {
                LayerSpec::Conv2D { activation, .. } | LayerSpec::Dense { activation, .. } => {
                    if *activation == Activation::Relu {
                        g = ops::relu_backward(output, &g)?;
                    }
                    let p = self.params[i].as_ref().expect("params");
                    let gp = grads.layers[i].as_mut().ok_or_else(mismatch)?;
                    let mut gi = want_input.then(|| Tensor::zeros(input.shape()));
                    if matches!(self.layers[i], LayerSpec::Conv2D { .. }) {
                        ops::conv2d_backward_accumulate(input, &p.weights, &g, &mut gp.weights, &mut gp.bias, gi.as_mut())?;
                    } else {
                        ops::dense_backward_accumulate(input, &p.weights, &g, &mut gp.weights, &mut gp.bias, gi.as_mut())?;
                    }
                    match gi {
                        Some(gi) => g = gi,
                        None => return Ok(()),
                    }
                }
                LayerSpec::MaxPool2D => {
                    let Cache::Pool(idx) = &trace.caches[i] else { return Err(mismatch()) };
                    g = ops::maxpool_backward(idx, &g)?;
                }
                LayerSpec::Dropout { .. } => {
                    let Cache::Dropout(mask) = &trace.caches[i] else { return Err(mismatch()) };
                    g = ops::dropout_backward(mask, &g)?;
                }
                LayerSpec::Flatten => g = g.reshape(input.shape().to_vec())?,
            }
        }
        if let Some(dst) = input_grad {
            dst.add_scaled(1.0, &g)?;
        }
        Ok(())
    }

    /// Pre-softmax class scores for one input, always without dropout.
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        let trace = self.forward_in(Mode::Eval, input, None)?;
        Ok(trace.acts.into_iter().last().expect("non-empty"))
    }

    /// Class probabilities `[P(real), P(bogus)]`. Requires eval mode.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        if self.mode != Mode::Eval {
            return Err(Error::Contract("predict requires a network in eval mode".into()));
        }
        Ok(ops::softmax(&self.logits(input)?))
    }

    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.layers.len() != self.params.len() {
            return Err(Error::dim("sgd", "gradient buffer belongs to a different network"));
        }
        for (p, g) in self.params.iter_mut().zip(&grads.layers) {
            match (p, g) {
                (Some(p), Some(g)) => {
                    ops::sgd_step(&mut p.weights, &g.weights, lr)?;
                    ops::sgd_step(&mut p.bias, &g.bias, lr)?;
                }
                (None, None) => {}
                _ => return Err(Error::dim("sgd", "parameter/gradient layout mismatch")),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Cache {
    None,
    Pool(PoolIndices),
    Dropout(DropoutMask),
}

/// Activations recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Tensor>,
    caches: Vec<Cache>,
}

impl Trace {
    pub fn logits(&self) -> &Tensor {
        self.acts.last().expect("non-empty")
    }

    pub fn probabilities(&self) -> Tensor {
        ops::softmax(self.logits())
    }

    /// Output of layer `index` (0-based).
    pub fn layer_output(&self, index: usize) -> &Tensor {
        &self.acts[index + 1]
    }
}

/// Parameter gradients, shape-congruent with a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Option<Params>>,
}

impl Gradients {
    pub fn zeros_like(network: &Network) -> Self {
        Self { layers: network.params.iter().map(|p| p.as_ref().map(Params::zeros_like)).collect() }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flatten().flat_map(|p| [&p.weights, &p.bias])
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::dim("gradients", "layer count"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    a.weights.add_scaled(1.0, &b.weights)?;
                    a.bias.add_scaled(1.0, &b.bias)?;
                }
                (None, None) => {}
                _ => return Err(Error::dim("gradients", "layout mismatch")),
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for p in self.layers.iter_mut().flatten() {
            p.weights.scale(alpha);
            p.bias.scale(alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}
