use crate::error::{Error, Result};

use super::{Cache, Layer, Rng, Scalar, Tensor};

/// A fixed chain of layers with a declared per-sample input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential<T = f32> {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

/// Per-layer caches from [`Sequential::forward_train`].
#[derive(Debug)]
pub struct Trace<T> {
    caches: Vec<Cache<T>>,
}

impl<T: Scalar> Sequential<T> {
    /// Validates that every layer accepts its predecessor's output.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
        }
        Ok(Self {
            input_shape,
            output_shape: shape,
            layers,
        })
    }

    /// A stack with no layers; forward is the identity.
    pub fn identity(shape: Vec<usize>) -> Self {
        Self {
            output_shape: shape.clone(),
            input_shape: shape,
            layers: Vec::new(),
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn output_width(&self) -> usize {
        self.output_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() < 2 || x.shape()[1..] != self.input_shape[..] {
            let first = self.layers.first().map_or("identity", |l| l.kind());
            return Err(Error::Config(format!(
                "layer 0 ({first}): expected batch of {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Inference pass: dropout disabled, nothing cached.
    pub fn forward(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(&x)?;
        let mut y = x;
        for layer in &self.layers {
            y = layer.forward(y, None, false).0;
        }
        Ok(y)
    }

    /// Training pass retaining caches. Dropout is active only when an RNG is
    /// supplied.
    pub fn forward_train(&self, x: Tensor<T>, mut dropout: Option<&mut Rng>) -> Result<(Tensor<T>, Trace<T>)> {
        self.check_input(&x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut y = x;
        for layer in &self.layers {
            let (out, cache) = layer.forward(y, dropout.as_deref_mut(), true);
            caches.push(cache.expect("cache requested"));
            y = out;
        }
        Ok((y, Trace { caches }))
    }

    /// Backpropagate an output gradient. Parameter gradients come back in
    /// [`Sequential::params`] order.
    pub fn backward(&self, trace: &Trace<T>, grad: Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::Usage(format!(
                "trace has {} caches for {} layers",
                trace.caches.len(),
                self.layers.len()
            )));
        }
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut g = grad;
        for (layer, cache) in self.layers.iter().zip(&trace.caches).rev() {
            let (dx, pg) = layer.backward(cache, g)?;
            per_layer.push(pg);
            g = dx;
        }
        per_layer.reverse();
        Ok((g, per_layer.into_iter().flatten().collect()))
    }

    /// Manifest lines describing layer kinds and hyperparameters.
    pub fn manifest(&self, name: &str) -> Vec<String> {
        let mut lines = vec![format!(
            "stack {name} input={} layers={}",
            join_dims(&self.input_shape),
            self.layers.len()
        )];
        for layer in &self.layers {
            let line = match layer {
                Layer::Dense { weight, .. } => {
                    format!("layer dense in={} out={}", weight.shape()[1], weight.shape()[0])
                }
                Layer::Conv2d { weight, stride, .. } => {
                    let s = weight.shape();
                    format!(
                        "layer conv2d in={} out={} kernel={}x{} stride={}x{}",
                        s[1], s[0], s[2], s[3], stride.0, stride.1
                    )
                }
                Layer::MaxPool2d { size, stride } => {
                    format!("layer maxpool2d size={}x{} stride={}x{}", size.0, size.1, stride.0, stride.1)
                }
                Layer::Dropout { rate } => format!("layer dropout rate={rate}"),
                Layer::Activation(a) => format!("layer {}", a.name()),
                Layer::Softmax => "layer softmax".to_string(),
                Layer::Flatten => "layer flatten".to_string(),
            };
            lines.push(line);
        }
        lines
    }

    /// Rebuild a stack from [`Sequential::manifest`] lines and parameter
    /// tensors in manifest order. Returns the stack and the number of manifest
    /// lines and tensors consumed.
    pub fn from_manifest(lines: &[String], tensors: &mut impl Iterator<Item = Tensor<T>>) -> Result<(String, Self, usize)> {
        let bad = |why: &str| Error::Config(format!("stack manifest: {why}"));
        let head = lines.first().ok_or_else(|| bad("missing stack line"))?;
        let words: Vec<&str> = head.split_whitespace().collect();
        if words.len() != 4 || words[0] != "stack" {
            return Err(bad(&format!("bad stack line '{head}'")));
        }
        let name = words[1].to_string();
        let input = parse_dims(kv(words[2], "input").ok_or_else(|| bad("input"))?).ok_or_else(|| bad("input dims"))?;
        let count: usize = kv(words[3], "layers")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("layer count"))?;
        if lines.len() < 1 + count {
            return Err(bad("fewer layer lines than declared"));
        }
        let mut layers = Vec::with_capacity(count);
        for line in &lines[1..=count] {
            let w: Vec<&str> = line.split_whitespace().collect();
            if w.first() != Some(&"layer") || w.len() < 2 {
                return Err(bad(&format!("bad layer line '{line}'")));
            }
            let field = |key: &str| w.iter().find_map(|t| kv(t, key)).ok_or_else(|| bad(&format!("{line}: missing {key}")));
            let pair = |key: &str| -> Result<(usize, usize)> {
                let d = parse_dims(field(key)?).filter(|d| d.len() == 2).ok_or_else(|| bad(key))?;
                Ok((d[0], d[1]))
            };
            let mut take = |shape: Vec<usize>| -> Result<Tensor<T>> {
                let t = tensors.next().ok_or_else(|| bad("missing parameter tensor"))?;
                if t.shape() != shape.as_slice() {
                    return Err(bad(&format!("tensor shape {:?} != {shape:?}", t.shape())));
                }
                Ok(t)
            };
            let layer = match w[1] {
                "dense" => {
                    let i: usize = field("in")?.parse().map_err(|_| bad("in"))?;
                    let o: usize = field("out")?.parse().map_err(|_| bad("out"))?;
                    Layer::Dense {
                        weight: take(vec![o, i])?,
                        bias: take(vec![o])?,
                    }
                }
                "conv2d" => {
                    let i: usize = field("in")?.parse().map_err(|_| bad("in"))?;
                    let o: usize = field("out")?.parse().map_err(|_| bad("out"))?;
                    let (kh, kw) = pair("kernel")?;
                    let stride = pair("stride")?;
                    Layer::Conv2d {
                        weight: take(vec![o, i, kh, kw])?,
                        bias: take(vec![o])?,
                        stride,
                    }
                }
                "maxpool2d" => Layer::MaxPool2d {
                    size: pair("size")?,
                    stride: pair("stride")?,
                },
                "dropout" => Layer::Dropout {
                    rate: field("rate")?.parse().map_err(|_| bad("rate"))?,
                },
                "softmax" => Layer::Softmax,
                "flatten" => Layer::Flatten,
                other => Layer::Activation(
                    super::Activation::parse(other).ok_or_else(|| bad(&format!("unknown layer kind {other}")))?,
                ),
            };
            layers.push(layer);
        }
        Ok((name, Self::new(input, layers)?, 1 + count))
    }
}

pub(crate) fn kv<'a>(token: &'a str, key: &str) -> Option<&'a str> {
    token.strip_prefix(key).and_then(|r| r.strip_prefix('='))
}

pub(crate) fn join_dims(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

pub(crate) fn parse_dims(s: &str) -> Option<Vec<usize>> {
    s.split('x').map(|d| d.parse().ok()).collect()
}
