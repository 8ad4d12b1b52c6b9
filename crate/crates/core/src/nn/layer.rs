use rand::Rng as _;

use crate::error::{Error, Result};

use super::{gemm, Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// One layer of a [`super::Sequential`] stack.
///
/// Dense weights are stored `[out, in]`, convolution kernels
/// `[out_channels, in_channels, kh, kw]`. Convolutions never pad.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T = f32> {
    Dense {
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
    Conv2d {
        weight: Tensor<T>,
        bias: Tensor<T>,
        stride: (usize, usize),
    },
    MaxPool2d {
        size: (usize, usize),
        stride: (usize, usize),
    },
    /// Inverted dropout: kept activations are scaled by `1/(1-rate)` during
    /// training, identity at inference.
    Dropout {
        rate: f64,
    },
    Activation(Activation),
    Softmax,
    Flatten,
}

/// Intermediates retained by a training-mode forward pass.
#[derive(Clone, Debug)]
pub enum Cache<T> {
    Dense { input: Tensor<T> },
    Conv2d { cols: Vec<T>, input_shape: Vec<usize> },
    MaxPool2d { winners: Vec<usize>, input_shape: Vec<usize> },
    Dropout { mask: Option<Vec<T>> },
    Activation { input: Tensor<T>, output: Tensor<T> },
    Softmax { output: Tensor<T> },
    Flatten { input_shape: Vec<usize> },
}

fn glorot<T: Scalar>(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| T::of(rng.gen_range(-limit..=limit)))
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

impl<T: Scalar> Layer<T> {
    pub fn dense(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Layer::Dense {
            weight: glorot(vec![outputs, inputs], inputs, outputs, rng),
            bias: Tensor::zeros(vec![outputs]),
        }
    }

    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: (usize, usize), rng: &mut Rng) -> Self {
        let (kh, kw) = kernel;
        Layer::Conv2d {
            weight: glorot(
                vec![out_channels, in_channels, kh, kw],
                in_channels * kh * kw,
                out_channels * kh * kw,
                rng,
            ),
            bias: Tensor::zeros(vec![out_channels]),
            stride: (1, 1),
        }
    }

    pub fn max_pool(size: (usize, usize)) -> Self {
        Layer::MaxPool2d { size, stride: size }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Dropout { .. } => "dropout",
            Layer::Activation(a) => a.name(),
            Layer::Softmax => "softmax",
            Layer::Flatten => "flatten",
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => vec![weight, bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => vec![weight, bias],
            _ => Vec::new(),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |why: String| Err(Error::Config(format!("{} layer: {why}", self.kind())));
        match self {
            Layer::Dense { weight, .. } => {
                let (outs, ins) = (weight.shape()[0], weight.shape()[1]);
                if input != [ins] {
                    return bad(format!("expects input [{ins}], got {input:?}"));
                }
                Ok(vec![outs])
            }
            Layer::Conv2d { weight, stride, .. } => {
                let s = weight.shape();
                let (oc, ic, kh, kw) = (s[0], s[1], s[2], s[3]);
                match *input {
                    [c, h, w] if c == ic && h >= kh && w >= kw && stride.0 > 0 && stride.1 > 0 => {
                        Ok(vec![oc, (h - kh) / stride.0 + 1, (w - kw) / stride.1 + 1])
                    }
                    _ => bad(format!("kernel {s:?} cannot convolve input {input:?}")),
                }
            }
            Layer::MaxPool2d { size, stride } => match *input {
                [c, h, w] if h >= size.0 && w >= size.1 && stride.0 > 0 && stride.1 > 0 => {
                    Ok(vec![c, (h - size.0) / stride.0 + 1, (w - size.1) / stride.1 + 1])
                }
                _ => bad(format!("window {size:?} cannot pool input {input:?}")),
            },
            Layer::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return bad(format!("rate {rate} outside [0, 1)"));
                }
                Ok(input.to_vec())
            }
            Layer::Activation(_) => Ok(input.to_vec()),
            Layer::Softmax => {
                if input.len() != 1 {
                    return bad(format!("expects a vector input, got {input:?}"));
                }
                Ok(input.to_vec())
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Forward pass over a batch. `dropout` enables training-mode dropout;
    /// `keep` asks for the cache needed by [`Layer::backward`].
    pub fn forward(
        &self,
        x: Tensor<T>,
        dropout: Option<&mut Rng>,
        keep: bool,
    ) -> (Tensor<T>, Option<Cache<T>>) {
        let batch = x.batch();
        match self {
            Layer::Dense { weight, bias } => {
                let (outs, ins) = (weight.shape()[0], weight.shape()[1]);
                let mut out = Vec::with_capacity(batch * outs);
                for _ in 0..batch {
                    out.extend_from_slice(bias.data());
                }
                gemm(false, true, batch, outs, ins, x.data(), weight.data(), T::one(), &mut out);
                let y = Tensor::new(vec![batch, outs], out).expect("dense output");
                (y, keep.then(|| Cache::Dense { input: x }))
            }
            Layer::Conv2d { weight, bias, stride } => {
                let ws = weight.shape();
                let (oc, ic, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
                let (h, w) = (x.shape()[2], x.shape()[3]);
                let (oh, ow) = ((h - kh) / stride.0 + 1, (w - kw) / stride.1 + 1);
                let (k, p) = (ic * kh * kw, oh * ow);
                let mut cols = vec![T::zero(); batch * k * p];
                let mut out = vec![T::zero(); batch * oc * p];
                for s in 0..batch {
                    let col = &mut cols[s * k * p..(s + 1) * k * p];
                    im2col(x.row(s), (ic, h, w), (kh, kw), *stride, (oh, ow), col);
                    let o = &mut out[s * oc * p..(s + 1) * oc * p];
                    for (c, chunk) in o.chunks_mut(p).enumerate() {
                        chunk.fill(bias.data()[c]);
                    }
                    gemm(false, false, oc, p, k, weight.data(), col, T::one(), o);
                }
                let y = Tensor::new(vec![batch, oc, oh, ow], out).expect("conv output");
                let cache = keep.then(|| Cache::Conv2d {
                    cols,
                    input_shape: x.shape().to_vec(),
                });
                (y, cache)
            }
            Layer::MaxPool2d { size, stride } => {
                let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
                let (oh, ow) = ((h - size.0) / stride.0 + 1, (w - size.1) / stride.1 + 1);
                let mut out = Vec::with_capacity(batch * c * oh * ow);
                let mut winners = Vec::with_capacity(if keep { out.capacity() } else { 0 });
                let data = x.data();
                for plane in 0..batch * c {
                    let base = plane * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = base + oy * stride.0 * w + ox * stride.1;
                            for dy in 0..size.0 {
                                for dx in 0..size.1 {
                                    let idx = base + (oy * stride.0 + dy) * w + ox * stride.1 + dx;
                                    if data[idx] > data[best] {
                                        best = idx;
                                    }
                                }
                            }
                            out.push(data[best]);
                            if keep {
                                winners.push(best);
                            }
                        }
                    }
                }
                let y = Tensor::new(vec![batch, c, oh, ow], out).expect("pool output");
                let cache = keep.then(|| Cache::MaxPool2d {
                    winners,
                    input_shape: x.shape().to_vec(),
                });
                (y, cache)
            }
            Layer::Dropout { rate } => match dropout {
                Some(rng) if *rate > 0.0 => {
                    let scale = T::of(1.0 / (1.0 - rate));
                    let mask: Vec<T> = (0..x.len())
                        .map(|_| if rng.gen::<f64>() < *rate { T::zero() } else { scale })
                        .collect();
                    let mut y = x;
                    for (v, m) in y.data_mut().iter_mut().zip(&mask) {
                        *v *= *m;
                    }
                    (y, keep.then(|| Cache::Dropout { mask: Some(mask) }))
                }
                _ => (x, keep.then(|| Cache::Dropout { mask: None })),
            },
            Layer::Activation(kind) => {
                let y = match kind {
                    Activation::Tanh => x.map(|v| v.tanh()),
                    Activation::Relu => x.map(|v| v.max(T::zero())),
                };
                let cache = keep.then(|| Cache::Activation {
                    input: x,
                    output: y.clone(),
                });
                (y, cache)
            }
            Layer::Softmax => {
                let y = softmax_rows(&x);
                let cache = keep.then(|| Cache::Softmax { output: y.clone() });
                (y, cache)
            }
            Layer::Flatten => {
                let input_shape = x.shape().to_vec();
                let width = x.row_len();
                let y = x.reshape(vec![batch, width]).expect("flatten");
                (y, keep.then(|| Cache::Flatten { input_shape }))
            }
        }
    }

    /// Propagate `grad` (gradient w.r.t. this layer's output) back to the
    /// input. Returns the input gradient and one gradient per parameter
    /// tensor, in [`Layer::params`] order.
    pub fn backward(&self, cache: &Cache<T>, grad: Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mismatch = || Error::Usage(format!("cache does not belong to a {} layer", self.kind()));
        let batch = grad.batch();
        match (self, cache) {
            (Layer::Dense { weight, .. }, Cache::Dense { input }) => {
                let (outs, ins) = (weight.shape()[0], weight.shape()[1]);
                let mut dw = vec![T::zero(); outs * ins];
                gemm(true, false, outs, ins, batch, grad.data(), input.data(), T::zero(), &mut dw);
                let mut db = vec![T::zero(); outs];
                for row in grad.rows() {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += *g;
                    }
                }
                let mut dx = vec![T::zero(); batch * ins];
                gemm(false, false, batch, ins, outs, grad.data(), weight.data(), T::zero(), &mut dx);
                Ok((
                    Tensor::new(input.shape().to_vec(), dx)?,
                    vec![Tensor::new(vec![outs, ins], dw)?, Tensor::new(vec![outs], db)?],
                ))
            }
            (Layer::Conv2d { weight, stride, .. }, Cache::Conv2d { cols, input_shape }) => {
                let ws = weight.shape();
                let (oc, ic, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
                let (h, w) = (input_shape[2], input_shape[3]);
                let (oh, ow) = (grad.shape()[2], grad.shape()[3]);
                let (k, p) = (ic * kh * kw, oh * ow);
                let mut dw = vec![T::zero(); oc * k];
                let mut db = vec![T::zero(); oc];
                let mut dx = vec![T::zero(); batch * ic * h * w];
                let mut dcol = vec![T::zero(); k * p];
                for s in 0..batch {
                    let g = grad.row(s);
                    let col = &cols[s * k * p..(s + 1) * k * p];
                    gemm(false, true, oc, k, p, g, col, T::one(), &mut dw);
                    for (c, chunk) in g.chunks(p).enumerate() {
                        db[c] += chunk.iter().copied().sum::<T>();
                    }
                    gemm(true, false, k, p, oc, weight.data(), g, T::zero(), &mut dcol);
                    let dxs = &mut dx[s * ic * h * w..(s + 1) * ic * h * w];
                    col2im(&dcol, (ic, h, w), (kh, kw), *stride, (oh, ow), dxs);
                }
                Ok((
                    Tensor::new(input_shape.clone(), dx)?,
                    vec![Tensor::new(ws.to_vec(), dw)?, Tensor::new(vec![oc], db)?],
                ))
            }
            (Layer::MaxPool2d { .. }, Cache::MaxPool2d { winners, input_shape }) => {
                let mut dx = Tensor::zeros(input_shape.clone());
                let d = dx.data_mut();
                for (&idx, &g) in winners.iter().zip(grad.data()) {
                    d[idx] += g;
                }
                Ok((dx, Vec::new()))
            }
            (Layer::Dropout { .. }, Cache::Dropout { mask }) => {
                let mut dx = grad;
                if let Some(mask) = mask {
                    for (v, m) in dx.data_mut().iter_mut().zip(mask) {
                        *v *= *m;
                    }
                }
                Ok((dx, Vec::new()))
            }
            (Layer::Activation(kind), Cache::Activation { input, output }) => {
                let mut dx = grad;
                match kind {
                    Activation::Tanh => {
                        for (v, y) in dx.data_mut().iter_mut().zip(output.data()) {
                            *v *= T::one() - *y * *y;
                        }
                    }
                    Activation::Relu => {
                        for (v, x) in dx.data_mut().iter_mut().zip(input.data()) {
                            if *x <= T::zero() {
                                *v = T::zero();
                            }
                        }
                    }
                }
                Ok((dx, Vec::new()))
            }
            (Layer::Softmax, Cache::Softmax { output }) => {
                let k = output.row_len();
                let mut dx = grad;
                for (g, y) in dx.data_mut().chunks_mut(k).zip(output.rows()) {
                    let dot: T = g.iter().zip(y).map(|(a, b)| *a * *b).sum();
                    for (gi, yi) in g.iter_mut().zip(y) {
                        *gi = *yi * (*gi - dot);
                    }
                }
                Ok((dx, Vec::new()))
            }
            (Layer::Flatten, Cache::Flatten { input_shape }) => Ok((grad.reshape(input_shape.clone())?, Vec::new())),
            _ => Err(mismatch()),
        }
    }
}

/// Row-wise softmax of a `[batch, k]` tensor.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let k = x.row_len();
    let mut y = x.clone();
    for row in y.data_mut().chunks_mut(k.max(1)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    y
}

fn im2col<T: Scalar>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (oh, ow): (usize, usize),
    cols: &mut [T],
) {
    let p = oh * ow;
    for ch in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut cols[((ch * kh + ki) * kw + kj) * p..][..p];
                for oy in 0..oh {
                    let src = &x[ch * h * w + (oy * sh + ki) * w + kj..];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if sw == 1 {
                        dst.copy_from_slice(&src[..ow]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            *d = src[ox * sw];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (oh, ow): (usize, usize),
    dx: &mut [T],
) {
    let p = oh * ow;
    for ch in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &cols[((ch * kh + ki) * kw + kj) * p..][..p];
                for oy in 0..oh {
                    let base = ch * h * w + (oy * sh + ki) * w + kj;
                    for ox in 0..ow {
                        dx[base + ox * sw] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn rng() -> Rng {
        Rng::seed_from_u64(3)
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut eye = vec![0.0f64; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let layer = Layer::Dense {
            weight: Tensor::new(vec![3, 3], eye).unwrap(),
            bias: Tensor::zeros(vec![3]),
        };
        let x = Tensor::new(vec![1, 3], vec![0.5, -2.0, 7.0]).unwrap();
        let (y, _) = layer.forward(x.clone(), None, false);
        assert_eq!(y, x);
    }

    #[test]
    fn dense_weight_gradient_is_outer_product() {
        let layer = Layer::<f64>::dense(3, 2, &mut rng());
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let (_, cache) = layer.forward(x, None, true);
        let g = Tensor::new(vec![1, 2], vec![0.5, -1.0]).unwrap();
        let (_, grads) = layer.backward(&cache.unwrap(), g).unwrap();
        // [out, in] layout: dW[o][i] = g[o] * x[i]
        assert_eq!(grads[0].data(), &[0.5, 1.0, 1.5, -1.0, -2.0, -3.0]);
        assert_eq!(grads[1].data(), &[0.5, -1.0]);
    }

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let x = Tensor::<f64>::zeros(vec![2, 4]);
        let (y, _) = Layer::Softmax.forward(x, None, false);
        assert!(y.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn eval_dropout_is_identity_both_ways() {
        let layer = Layer::<f64>::Dropout { rate: 0.25 };
        let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, cache) = layer.forward(x.clone(), None, true);
        assert_eq!(y, x);
        let g = Tensor::new(vec![1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (dx, _) = layer.backward(&cache.unwrap(), g.clone()).unwrap();
        assert_eq!(dx, g);
    }

    #[test]
    fn training_dropout_keeps_expectation() {
        let layer = Layer::<f64>::Dropout { rate: 0.25 };
        let x = Tensor::filled(vec![1, 20000], 1.0);
        let (y, _) = layer.forward(x, Some(&mut rng()), false);
        let zeros = y.data().iter().filter(|v| **v == 0.0).count() as f64 / 20000.0;
        assert!((zeros - 0.25).abs() < 0.02, "drop fraction {zeros}");
        let mean: f64 = y.data().iter().sum::<f64>() / 20000.0;
        assert!((mean - 1.0).abs() < 0.03);
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let layer = Layer::<f64>::conv2d(2, 3, (3, 2), &mut rng());
        let (h, w) = (5, 4);
        let x = Tensor::new(vec![1, 2, h, w], (0..2 * h * w).map(|i| (i as f64).sin()).collect()).unwrap();
        let (y, _) = layer.forward(x.clone(), None, false);
        let Layer::Conv2d { weight, bias, .. } = &layer else { unreachable!() };
        let (oh, ow) = (3, 3);
        assert_eq!(y.shape(), &[1, 3, oh, ow]);
        for o in 0..3 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = bias.data()[o];
                    for c in 0..2 {
                        for i in 0..3 {
                            for j in 0..2 {
                                s += weight.data()[((o * 2 + c) * 3 + i) * 2 + j]
                                    * x.data()[(c * h + oy + i) * w + ox + j];
                            }
                        }
                    }
                    assert!((y.data()[(o * oh + oy) * ow + ox] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn encoder_shapes_follow_the_table() {
        let mut r = rng();
        let stack = [
            Layer::<f32>::conv2d(3, 32, (3, 3), &mut r),
            Layer::conv2d(32, 32, (3, 3), &mut r),
            Layer::max_pool((2, 2)),
            Layer::Flatten,
        ];
        let mut shape = vec![3, 28, 28];
        let mut seen = Vec::new();
        for l in &stack {
            shape = l.output_shape(&shape).unwrap();
            seen.push(shape.clone());
        }
        assert_eq!(seen, vec![vec![32, 26, 26], vec![32, 24, 24], vec![32, 12, 12], vec![4608]]);
    }

    #[test]
    fn foreign_cache_is_rejected() {
        let layer = Layer::<f64>::Softmax;
        let cache = Cache::Flatten { input_shape: vec![1, 2] };
        assert!(matches!(
            layer.backward(&cache, Tensor::zeros(vec![1, 2])),
            Err(Error::Usage(_))
        ));
    }
}
