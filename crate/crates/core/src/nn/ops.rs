//! Layer primitives: forward and backward passes for every layer type the two
//! classifier architectures use. Image tensors are `H x W x C` (channels last),
//! convolution kernels are `kh x kw x C x F`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{axpy, Tensor};

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    f: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims(input: &Tensor, weights: &Tensor) -> Result<ConvDims> {
    let op = "conv2d";
    let &[h, w, c] = input.shape() else {
        return Err(Error::dim(op, format!("input must be HxWxC, got {:?}", input.shape())));
    };
    let &[kh, kw, kc, f] = weights.shape() else {
        return Err(Error::dim(op, format!("weights must be kh x kw x C x F, got {:?}", weights.shape())));
    };
    if kc != c {
        return Err(Error::dim(op, format!("input channels {c} vs kernel channels {kc} (axis 2)")));
    }
    if kh > h || kw > w {
        return Err(Error::dim(op, format!("kernel {kh}x{kw} larger than input {h}x{w} (axes 0,1)")));
    }
    Ok(ConvDims { w, c, kh, kw, f, oh: h - kh + 1, ow: w - kw + 1 })
}

/// "Valid" 2-D cross-correlation, stride 1:
/// `out[y,x,f] = bias[f] + sum_{u,v,c} input[y+u, x+v, c] * weights[u,v,c,f]`.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = conv_dims(input, weights)?;
    if bias.shape() != [d.f] {
        return Err(Error::dim("conv2d", format!("bias {:?} vs {} filters (axis 3)", bias.shape(), d.f)));
    }
    let (x_in, k, b) = (input.data(), weights.data(), bias.data());
    let row = d.kw * d.c;
    let mut out = vec![0.0; d.oh * d.ow * d.f];
    for y in 0..d.oh {
        for x in 0..d.ow {
            let o = &mut out[(y * d.ow + x) * d.f..][..d.f];
            o.copy_from_slice(b);
            for u in 0..d.kh {
                let seg = &x_in[((y + u) * d.w + x) * d.c..][..row];
                // For fixed u, weights[u, v, c, :] is one contiguous kw*C*F block.
                let kblock = &k[u * row * d.f..][..row * d.f];
                for (j, &a) in seg.iter().enumerate() {
                    if a != 0.0 {
                        axpy(a, &kblock[j * d.f..][..d.f], o);
                    }
                }
            }
        }
    }
    Tensor::new(vec![d.oh, d.ow, d.f], out)
}

/// Gradients of a convolution with respect to its input, weights and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(input: &Tensor, weights: &Tensor, upstream: &Tensor) -> Result<ConvGrads> {
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[weights.shape().get(3).copied().unwrap_or(1)]);
    let mut gi = Tensor::zeros(input.shape());
    conv2d_backward_accumulate(input, weights, upstream, &mut gw, &mut gb, Some(&mut gi))?;
    Ok(ConvGrads { input: gi, weights: gw, bias: gb })
}

/// Accumulates convolution gradients into existing buffers.
///
/// Only non-zero upstream entries are visited; after max pooling and ReLU the
/// upstream gradient is mostly zeros.
pub(crate) fn conv2d_backward_accumulate(
    input: &Tensor,
    weights: &Tensor,
    upstream: &Tensor,
    grad_weights: &mut Tensor,
    grad_bias: &mut Tensor,
    grad_input: Option<&mut Tensor>,
) -> Result<()> {
    let d = conv_dims(input, weights)?;
    if upstream.shape() != [d.oh, d.ow, d.f] {
        return Err(Error::dim(
            "conv2d_backward",
            format!("upstream {:?} vs forward output {:?}", upstream.shape(), [d.oh, d.ow, d.f]),
        ));
    }
    grad_weights.same_shape(weights, "conv2d_backward")?;
    if grad_bias.shape() != [d.f] {
        return Err(Error::dim("conv2d_backward", "bias gradient shape"));
    }
    if let Some(gi) = grad_input.as_deref() {
        gi.same_shape(input, "conv2d_backward")?;
    }

    let row = d.kw * d.c;
    // Filter-major copies: wt[f][u][v*C + c].
    let k = weights.data();
    let mut wt = vec![0.0; d.f * d.kh * row];
    for u in 0..d.kh {
        for j in 0..row {
            for f in 0..d.f {
                wt[(f * d.kh + u) * row + j] = k[(u * row + j) * d.f + f];
            }
        }
    }
    let mut gwt = vec![0.0; wt.len()];
    let x_in = input.data();
    let g = upstream.data();
    let gb = grad_bias.data_mut();
    let mut gi = grad_input.map(|t| t.data_mut());

    for y in 0..d.oh {
        for x in 0..d.ow {
            let grow = &g[(y * d.ow + x) * d.f..][..d.f];
            for (f, &gv) in grow.iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                gb[f] += gv;
                for u in 0..d.kh {
                    let off = ((y + u) * d.w + x) * d.c;
                    let wi = (f * d.kh + u) * row;
                    axpy(gv, &x_in[off..off + row], &mut gwt[wi..wi + row]);
                    if let Some(gi) = gi.as_deref_mut() {
                        axpy(gv, &wt[wi..wi + row], &mut gi[off..off + row]);
                    }
                }
            }
        }
    }

    let gw = grad_weights.data_mut();
    for u in 0..d.kh {
        for j in 0..row {
            for f in 0..d.f {
                gw[(u * row + j) * d.f + f] += gwt[(f * d.kh + u) * row + j];
            }
        }
    }
    Ok(())
}

/// Argmax bookkeeping from a max-pooling forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }
}

/// 2x2 max pooling with stride 2. A trailing odd row or column is dropped;
/// ties go to the first maximum in row-major window order.
pub fn maxpool_forward(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let &[h, w, c] = input.shape() else {
        return Err(Error::dim("maxpool", format!("input must be HxWxC, got {:?}", input.shape())));
    };
    if h < 2 || w < 2 {
        return Err(Error::dim("maxpool", format!("input {h}x{w} smaller than the 2x2 window")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x_in = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_i = ((2 * oy) * w + 2 * ox) * c + ch;
                let mut best = x_in[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if x_in[i] > best {
                        best = x_in[i];
                        best_i = i;
                    }
                }
                out.push(best);
                argmax.push(best_i);
            }
        }
    }
    let output_shape = vec![oh, ow, c];
    Ok((
        Tensor::new(output_shape.clone(), out)?,
        PoolIndices { input_shape: input.shape().to_vec(), output_shape, argmax },
    ))
}

/// Routes the upstream gradient to the recorded argmax positions.
pub fn maxpool_backward(indices: &PoolIndices, upstream: &Tensor) -> Result<Tensor> {
    if upstream.shape() != indices.output_shape.as_slice() {
        return Err(Error::Contract(format!(
            "pool indices recorded for output {:?}, upstream gradient is {:?}",
            indices.output_shape,
            upstream.shape()
        )));
    }
    let mut grad = Tensor::zeros(&indices.input_shape);
    let g = grad.data_mut();
    for (&i, &u) in indices.argmax.iter().zip(upstream.data()) {
        g[i] += u;
    }
    Ok(grad)
}

/// Per-element scale factors applied by a dropout pass (`None` means identity).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    scales: Option<Vec<f64>>,
}

impl DropoutMask {
    pub fn identity() -> Self {
        Self { scales: None }
    }

    pub fn kept_fraction(&self) -> f64 {
        match &self.scales {
            None => 1.0,
            Some(s) => s.iter().filter(|&&v| v != 0.0).count() as f64 / s.len() as f64,
        }
    }
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; eval mode is the identity.
pub fn dropout<R: Rng + ?Sized>(
    input: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, DropoutMask)> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval {
        return Ok((input.clone(), DropoutMask::identity()));
    }
    let keep = 1.0 / (1.0 - rate);
    let scales: Vec<f64> = (0..input.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mut out = input.clone();
    out.data_mut().iter_mut().zip(&scales).for_each(|(v, s)| *v *= s);
    Ok((out, DropoutMask { scales: Some(scales) }))
}

pub fn dropout_backward(mask: &DropoutMask, upstream: &Tensor) -> Result<Tensor> {
    let mut grad = upstream.clone();
    if let Some(scales) = &mask.scales {
        if scales.len() != upstream.len() {
            return Err(Error::Contract(format!(
                "dropout mask has {} entries, upstream gradient {}",
                scales.len(),
                upstream.len()
            )));
        }
        grad.data_mut().iter_mut().zip(scales).for_each(|(v, s)| *v *= s);
    }
    Ok(grad)
}

fn dense_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let &[n] = input.shape() else {
        return Err(Error::dim("dense", format!("input must be flat, got {:?}", input.shape())));
    };
    let &[wn, m] = weights.shape() else {
        return Err(Error::dim("dense", format!("weights must be N x M, got {:?}", weights.shape())));
    };
    if wn != n {
        return Err(Error::dim("dense", format!("input length {n} vs weight rows {wn}")));
    }
    if bias.shape() != [m] {
        return Err(Error::dim("dense", format!("bias {:?} vs {m} units", bias.shape())));
    }
    Ok((n, m))
}

/// `out = input^T . weights + bias`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, m) = dense_dims(input, weights, bias)?;
    let mut out = bias.data().to_vec();
    let k = weights.data();
    for (i, &a) in input.data().iter().enumerate() {
        if a != 0.0 {
            axpy(a, &k[i * m..(i + 1) * m], &mut out);
        }
    }
    Tensor::new(vec![m], out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(input: &Tensor, weights: &Tensor, upstream: &Tensor) -> Result<DenseGrads> {
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[weights.shape().get(1).copied().unwrap_or(1)]);
    let mut gi = Tensor::zeros(input.shape());
    dense_backward_accumulate(input, weights, upstream, &mut gw, &mut gb, Some(&mut gi))?;
    Ok(DenseGrads { input: gi, weights: gw, bias: gb })
}

pub(crate) fn dense_backward_accumulate(
    input: &Tensor,
    weights: &Tensor,
    upstream: &Tensor,
    grad_weights: &mut Tensor,
    grad_bias: &mut Tensor,
    grad_input: Option<&mut Tensor>,
) -> Result<()> {
    let (n, m) = dense_dims(input, weights, grad_bias)?;
    if upstream.shape() != [m] {
        return Err(Error::dim("dense_backward", format!("upstream {:?} vs {m} units", upstream.shape())));
    }
    grad_weights.same_shape(weights, "dense_backward")?;
    let g = upstream.data();
    axpy(1.0, g, grad_bias.data_mut());
    let gw = grad_weights.data_mut();
    for (i, &a) in input.data().iter().enumerate() {
        if a != 0.0 {
            axpy(a, g, &mut gw[i * m..(i + 1) * m]);
        }
    }
    if let Some(gi) = grad_input {
        gi.same_shape(input, "dense_backward")?;
        let k = weights.data();
        for (i, out) in gi.data_mut().iter_mut().enumerate().take(n) {
            *out += k[i * m..(i + 1) * m].iter().zip(g).map(|(w, g)| w * g).sum::<f64>();
        }
    }
    Ok(())
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub(crate) fn relu_in_place(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Passes the upstream gradient where the forward activation was positive.
/// `activation` may be either the ReLU input or its output.
pub fn relu_backward(activation: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    activation.same_shape(upstream, "relu_backward")?;
    let mut g = upstream.clone();
    g.data_mut()
        .iter_mut()
        .zip(activation.data())
        .for_each(|(g, &a)| if a <= 0.0 { *g = 0.0 });
    Ok(g)
}

/// Max-shifted softmax over a flat tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.data().iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Tensor::new(logits.shape().to_vec(), exp.into_iter().map(|e| e / total).collect())
        .expect("softmax preserves shape")
}

/// Lower clamp applied to the true-class probability before the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Returns `-ln p[label]` and the fused softmax/cross-entropy gradient with
/// respect to the logits, `p - onehot(label)`.
pub fn sparse_categorical_crossentropy(probs: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    if probs.rank() != 1 {
        return Err(Error::dim("crossentropy", format!("probabilities must be flat, got {:?}", probs.shape())));
    }
    if label >= probs.len() {
        return Err(Error::Parameter(format!("label {label} outside {} classes", probs.len())));
    }
    let loss = -probs.data()[label].max(PROB_FLOOR).ln();
    let mut grad = probs.clone();
    grad.data_mut()[label] -= 1.0;
    Ok((loss, grad))
}

/// Plain SGD: `p <- p - lr * g`.
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    param.same_shape(grad, "sgd_step")?;
    axpy(-lr, grad.data(), param.data_mut());
    Ok(())
}
