//! Joint attribute feature extractor.
//!
//! A shared encoder feeds one perceptron unit per attribute. Unit `i`
//! produces the attribute feature vector `h(i)`; their concatenation is the
//! combined representation `h`. Each unit carries a `k_i`-way softmax head
//! and all heads are trained together against the weighted sum of their
//! cross-entropies.

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    derive_seed, softmax_cross_entropy, softmax_rows, Activation, Block, Container, Layer, Optimizer, OptimizerKind,
    Rng, Sequential, Tensor,
};

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeSpec {
    pub name: String,
    /// Number of values (2 for a binary attribute).
    pub arity: usize,
    /// Weight of this attribute's loss in the joint objective.
    pub weight: f64,
    /// Dimension of the attribute feature vector.
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeScheme {
    attributes: Vec<AttributeSpec>,
}

impl AttributeScheme {
    pub fn new(attributes: Vec<AttributeSpec>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Config("attribute scheme needs at least one attribute".into()));
        }
        for a in &attributes {
            if a.arity < 2 || !(a.weight > 0.0) || a.dim == 0 {
                return Err(Error::Config(format!(
                    "attribute {}: arity {} weight {} dim {} (need arity >= 2, weight > 0, dim >= 1)",
                    a.name, a.arity, a.weight, a.dim
                )));
            }
        }
        Ok(Self { attributes })
    }

    /// `m` binary attributes sharing one weight and one feature dimension.
    pub fn binary(m: usize, weight: f64, dim: usize) -> Result<Self> {
        Self::new(
            (0..m)
                .map(|i| AttributeSpec {
                    name: format!("a{i}"),
                    arity: 2,
                    weight,
                    dim,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn get(&self, i: usize) -> &AttributeSpec {
        &self.attributes[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &AttributeSpec> {
        self.attributes.iter()
    }

    pub fn total_dim(&self) -> usize {
        self.attributes.iter().map(|a| a.dim).sum()
    }

    /// Start offset of each attribute's slice inside `h`.
    pub fn offsets(&self) -> Vec<usize> {
        self.attributes
            .iter()
            .scan(0, |at, a| {
                let start = *at;
                *at += a.dim;
                Some(start)
            })
            .collect()
    }

    /// Attribute `i`'s sub-vector of a combined representation.
    pub fn slice<'a>(&self, h: &'a [f32], i: usize) -> &'a [f32] {
        let start: usize = self.attributes[..i].iter().map(|a| a.dim).sum();
        &h[start..start + self.attributes[i].dim]
    }

    /// Split a combined representation into its sub-vectors.
    pub fn split<'a>(&self, h: &'a [f32]) -> Vec<&'a [f32]> {
        (0..self.len()).map(|i| self.slice(h, i)).collect()
    }

    fn check_annotation(&self, values: &[u32]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Config(format!(
                "annotation has {} entries for {} attributes",
                values.len(),
                self.len()
            )));
        }
        for (v, a) in values.iter().zip(&self.attributes) {
            if *v as usize >= a.arity {
                return Err(Error::Config(format!("attribute {} value {v} >= arity {}", a.name, a.arity)));
            }
        }
        Ok(())
    }
}

/// Concatenate attribute sub-vectors in scheme order.
pub fn concat(parts: &[&[f32]]) -> Vec<f32> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EncoderSpec {
    /// Inputs are already feature vectors; the encoder is the identity.
    Identity,
    /// Two 3×3 convolutions with 32 channels and relu, 2×2 max-pool,
    /// dropout, flatten. Expects `[3, H, W]` images.
    SmallCnn { dropout: f64 },
}

/// Encoder stack for `input_shape` samples.
pub fn build_encoder(spec: EncoderSpec, input_shape: Vec<usize>, rng: &mut Rng) -> Result<Sequential<f32>> {
    match spec {
        EncoderSpec::Identity => {
            if input_shape.len() != 1 {
                return Err(Error::Config(format!("identity encoder needs vector inputs, got {input_shape:?}")));
            }
            Ok(Sequential::identity(input_shape))
        }
        EncoderSpec::SmallCnn { dropout } => {
            let channels = *input_shape.first().unwrap_or(&0);
            Sequential::new(
                input_shape,
                vec![
                    Layer::conv2d(channels, 32, (3, 3), rng),
                    Layer::Activation(Activation::Relu),
                    Layer::conv2d(32, 32, (3, 3), rng),
                    Layer::Activation(Activation::Relu),
                    Layer::max_pool((2, 2)),
                    Layer::Dropout { rate: dropout },
                    Layer::Flatten,
                ],
            )
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitSpec {
    /// Width of the first layer of a two-layer unit; `None` for a
    /// single-layer perceptron.
    pub hidden: Option<usize>,
    pub activation: Activation,
}

impl UnitSpec {
    pub fn single(activation: Activation) -> Self {
        Self {
            hidden: None,
            activation,
        }
    }

    pub fn two_layer(hidden: usize, activation: Activation) -> Self {
        Self {
            hidden: Some(hidden),
            activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JafeModel {
    scheme: AttributeScheme,
    encoder: Sequential<f32>,
    units: Vec<Sequential<f32>>,
    heads: Vec<Sequential<f32>>,
}

/// Combined representations and attribute probabilities for a batch.
#[derive(Clone, Debug)]
pub struct JafeOutput {
    /// `[batch, total_dim]`.
    pub combined: Tensor<f32>,
    /// One `[batch, arity_i]` probability matrix per attribute.
    pub probs: Vec<Tensor<f32>>,
}

impl JafeModel {
    pub fn new(scheme: AttributeScheme, input_shape: Vec<usize>, encoder: EncoderSpec, unit: UnitSpec, seed: u64) -> Result<Self> {
        let mut rng = Rng::seed_from_u64(seed);
        let encoder = build_encoder(encoder, input_shape, &mut rng)?;
        let width = encoder.output_width();
        let mut units = Vec::with_capacity(scheme.len());
        let mut heads = Vec::with_capacity(scheme.len());
        for a in scheme.iter() {
            let layers = match unit.hidden {
                None => vec![Layer::dense(width, a.dim, &mut rng), Layer::Activation(unit.activation)],
                Some(hidden) => vec![
                    Layer::dense(width, hidden, &mut rng),
                    Layer::Activation(unit.activation),
                    Layer::dense(hidden, a.dim, &mut rng),
                    Layer::Activation(unit.activation),
                ],
            };
            units.push(Sequential::new(vec![width], layers)?);
            heads.push(Sequential::new(vec![a.dim], vec![Layer::dense(a.dim, a.arity, &mut rng)])?);
        }
        Ok(Self {
            scheme,
            encoder,
            units,
            heads,
        })
    }

    pub fn scheme(&self) -> &AttributeScheme {
        &self.scheme
    }

    pub fn input_shape(&self) -> &[usize] {
        self.encoder.input_shape()
    }

    pub fn encoder(&self) -> &Sequential<f32> {
        &self.encoder
    }

    pub fn heads_mut(&mut self) -> &mut [Sequential<f32>] {
        &mut self.heads
    }

    pub fn params(&self) -> Vec<&Tensor<f32>> {
        let mut out = self.encoder.params();
        for (u, h) in self.units.iter().zip(&self.heads) {
            out.extend(u.params());
            out.extend(h.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        let mut out = self.encoder.params_mut();
        for (u, h) in self.units.iter_mut().zip(self.heads.iter_mut()) {
            out.extend(u.params_mut());
            out.extend(h.params_mut());
        }
        out
    }

    /// Combined representation and per-attribute probabilities (inference
    /// mode).
    pub fn analyze(&self, x: Tensor<f32>) -> Result<JafeOutput> {
        let encoded = self.encoder.forward(x)?;
        let batch = encoded.batch();
        let mut parts = Vec::with_capacity(self.units.len());
        let mut probs = Vec::with_capacity(self.units.len());
        for (unit, head) in self.units.iter().zip(&self.heads) {
            let h = unit.forward(encoded.clone())?;
            probs.push(softmax_rows(&head.forward(h.clone())?));
            parts.push(h);
        }
        let total = self.scheme.total_dim();
        let mut combined = Vec::with_capacity(batch * total);
        for b in 0..batch {
            for p in &parts {
                combined.extend_from_slice(p.row(b));
            }
        }
        Ok(JafeOutput {
            combined: Tensor::new(vec![batch, total], combined)?,
            probs,
        })
    }

    /// Combined representation `h = concat(h(1), ..., h(m))`.
    pub fn extract(&self, x: Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.analyze(x)?.combined)
    }

    pub fn predict_attributes(&self, x: Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
        Ok(self.analyze(x)?.probs)
    }

    /// Weighted joint loss over a batch (inference mode).
    pub fn joint_loss(&self, x: Tensor<f32>, annotations: &[&[u32]]) -> Result<f64> {
        if annotations.is_empty() {
            return Err(Error::Usage("joint loss of an empty batch".into()));
        }
        for a in annotations {
            self.scheme.check_annotation(a)?;
        }
        let out = self.analyze(x)?;
        let mut total = 0.0;
        for (i, probs) in out.probs.iter().enumerate() {
            let mut sum = 0.0;
            for (row, ann) in probs.rows().zip(annotations) {
                sum += crate::nn::categorical_cross_entropy(row, ann[i] as usize)?;
            }
            total += self.scheme.get(i).weight * sum / annotations.len() as f64;
        }
        Ok(total)
    }

    /// One joint forward/backward pass. Returns the batch loss, the per
    /// attribute losses and gradients in [`JafeModel::params`] order.
    pub fn loss_and_gradients(
        &self,
        x: Tensor<f32>,
        annotations: &[&[u32]],
        dropout: Option<&mut Rng>,
    ) -> Result<(f64, Vec<f64>, Vec<Tensor<f32>>)> {
        let mut dropout = dropout;
        let (encoded, enc_trace) = self.encoder.forward_train(x, dropout.as_deref_mut())?;
        let mut d_encoded = Tensor::<f32>::zeros(encoded.shape().to_vec());
        let mut unit_grads = Vec::with_capacity(self.units.len());
        let mut losses = Vec::with_capacity(self.units.len());
        let mut total = 0.0;
        for (i, (unit, head)) in self.units.iter().zip(&self.heads).enumerate() {
            let labels: Vec<usize> = annotations.iter().map(|a| a[i] as usize).collect();
            let (h, unit_trace) = unit.forward_train(encoded.clone(), dropout.as_deref_mut())?;
            let (logits, head_trace) = head.forward_train(h, None)?;
            let (loss, mut dlogits) = softmax_cross_entropy(&logits, &labels)?;
            let weight = self.scheme.get(i).weight as f32;
            dlogits.data_mut().iter_mut().for_each(|g| *g *= weight);
            let (dh, head_grads) = head.backward(&head_trace, dlogits)?;
            let (denc, ugrads) = unit.backward(&unit_trace, dh)?;
            for (acc, g) in d_encoded.data_mut().iter_mut().zip(denc.data()) {
                *acc += *g;
            }
            unit_grads.push((ugrads, head_grads));
            losses.push(loss);
            total += self.scheme.get(i).weight * loss;
        }
        let mut grads = if self.encoder.is_empty() {
            Vec::new()
        } else {
            self.encoder.backward(&enc_trace, d_encoded)?.1
        };
        for (u, h) in unit_grads {
            grads.extend(u);
            grads.extend(h);
        }
        Ok((total, losses, grads))
    }

    pub fn to_container(&self, config_hash: &str) -> Container {
        let mut c = Container::new("jafe");
        c.push(format!("config_hash {config_hash}"));
        c.push(format!("attributes {}", self.scheme.len()));
        for a in self.scheme.iter() {
            c.push(format!("attribute {} arity={} weight={} dim={}", a.name, a.arity, a.weight, a.dim));
        }
        let stacks = std::iter::once(("encoder".to_string(), &self.encoder)).chain(
            self.units
                .iter()
                .zip(&self.heads)
                .enumerate()
                .flat_map(|(i, (u, h))| [(format!("unit{i}"), u), (format!("head{i}"), h)]),
        );
        for (name, stack) in stacks {
            c.header.extend(stack.manifest(&name));
            for (j, p) in stack.params().into_iter().enumerate() {
                c.blocks.push(Block::tensor(format!("{name}.{j}"), p));
            }
        }
        c
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let bad = |why: String| Error::Config(format!("jafe checkpoint: {why}"));
        let mut attributes = Vec::new();
        for line in c.header.iter().filter_map(|l| l.strip_prefix("attribute ")) {
            let w: Vec<&str> = line.split_whitespace().collect();
            let field = |key: &str| {
                w.iter()
                    .find_map(|t| crate::nn::kv(t, key))
                    .ok_or_else(|| bad(format!("attribute line lacks {key}")))
            };
            attributes.push(AttributeSpec {
                name: w.first().unwrap_or(&"").to_string(),
                arity: field("arity")?.parse().map_err(|_| bad("arity".into()))?,
                weight: field("weight")?.parse().map_err(|_| bad("weight".into()))?,
                dim: field("dim")?.parse().map_err(|_| bad("dim".into()))?,
            });
        }
        let scheme = AttributeScheme::new(attributes)?;
        let mut tensors = c.blocks.into_iter().map(|b| b.into_tensor()).collect::<Result<Vec<_>>>()?.into_iter();
        let starts: Vec<usize> = (0..c.header.len()).filter(|&i| c.header[i].starts_with("stack ")).collect();
        let mut stacks = Vec::new();
        for s in starts {
            let (_, stack, _) = Sequential::from_manifest(&c.header[s..], &mut tensors)?;
            stacks.push(stack);
        }
        if stacks.len() != 1 + 2 * scheme.len() || tensors.next().is_some() {
            return Err(bad("stack or tensor count does not match the scheme".into()));
        }
        let mut it = stacks.into_iter();
        let encoder = it.next().unwrap();
        let (mut units, mut heads) = (Vec::new(), Vec::new());
        while let (Some(u), Some(h)) = (it.next(), it.next()) {
            units.push(u);
            heads.push(h);
        }
        Ok(Self {
            scheme,
            encoder,
            units,
            heads,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainSettings {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            optimizer: OptimizerKind::ADAM,
            learning_rate: 1e-3,
            seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Joint loss of the untrained model on (up to 2048 of) the training
    /// samples.
    pub initial_loss: f64,
    /// Mean mini-batch joint loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Jointly train encoder, units and heads on attribute annotations. Class
/// labels are never read.
pub fn train_jafe(model: &mut JafeModel, data: &Dataset, settings: &TrainSettings) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::Usage("cannot train on an empty dataset".into()));
    }
    if settings.batch_size == 0 {
        return Err(Error::Usage("batch size must be positive".into()));
    }
    if data.sample_shape() != model.input_shape() {
        return Err(Error::Config(format!(
            "dataset samples {:?} do not fit encoder input {:?}",
            data.sample_shape(),
            model.input_shape()
        )));
    }
    for i in 0..data.len() {
        model.scheme.check_annotation(data.sample(i).attributes)?;
    }
    let probe: Vec<usize> = (0..data.len().min(2048)).collect();
    let mut initial = 0.0;
    for chunk in probe.chunks(256) {
        let ann: Vec<&[u32]> = chunk.iter().map(|&i| data.sample(i).attributes).collect();
        initial += model.joint_loss(data.batch(chunk), &ann)? * chunk.len() as f64;
    }
    let mut log = TrainLog {
        initial_loss: initial / probe.len() as f64,
        epoch_losses: Vec::with_capacity(settings.epochs),
    };

    let mut order_rng = Rng::seed_from_u64(derive_seed(settings.seed, 0));
    let mut dropout_rng = Rng::seed_from_u64(derive_seed(settings.seed, 1));
    let mut optimizer = Optimizer::<f32>::new(settings.optimizer, settings.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..settings.epochs {
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(settings.batch_size) {
            let ann: Vec<&[u32]> = chunk.iter().map(|&i| data.sample(i).attributes).collect();
            let (loss, _, grads) = model.loss_and_gradients(data.batch(chunk), &ann, Some(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite joint loss in epoch {epoch}")));
            }
            optimizer.step(model.params_mut(), &grads)?;
            sum += loss;
            batches += 1;
        }
        let mean = sum / batches as f64;
        log::info!("jafe epoch {} joint loss {mean:.5}", epoch + 1);
        log.epoch_losses.push(mean);
    }
    Ok(log)
}

/// Representations and attribute probabilities for every sample of a
/// dataset, in dataset order.
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub dim: usize,
    /// `len × dim` combined representations.
    pub combined: Vec<f32>,
    /// Per attribute, `len × arity` probabilities.
    pub probs: Vec<Vec<f32>>,
    pub arities: Vec<usize>,
}

impl Extraction {
    pub fn len(&self) -> usize {
        self.combined.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.combined.is_empty()
    }

    pub fn representation(&self, i: usize) -> &[f32] {
        &self.combined[i * self.dim..(i + 1) * self.dim]
    }

    pub fn probabilities(&self, i: usize, attr: usize) -> &[f32] {
        let k = self.arities[attr];
        &self.probs[attr][i * k..(i + 1) * k]
    }
}

pub fn extract_dataset(model: &JafeModel, data: &Dataset, batch_size: usize) -> Result<Extraction> {
    let dim = model.scheme.total_dim();
    let arities: Vec<usize> = model.scheme.iter().map(|a| a.arity).collect();
    let mut combined = Vec::with_capacity(data.len() * dim);
    let mut probs: Vec<Vec<f32>> = arities.iter().map(|k| Vec::with_capacity(data.len() * k)).collect();
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let out = model.analyze(data.batch(chunk))?;
        combined.extend_from_slice(out.combined.data());
        for (acc, p) in probs.iter_mut().zip(&out.probs) {
            acc.extend_from_slice(p.data());
        }
    }
    Ok(Extraction {
        dim,
        combined,
        probs,
        arities,
    })
}
