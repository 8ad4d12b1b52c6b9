//! Softmax class predictor trained on pseudo representations, with the
//! iterative generation strategy and validation-based model selection.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::jafe::JafeModel;
use crate::nn::{
    argmax, derive_seed, softmax_cross_entropy, softmax_rows, Block, Container, Layer, Optimizer, OptimizerKind, Rng,
    Sequential, Tensor,
};
use crate::repository::CognitiveRepository;
use crate::synthesis::{synthesize_all, ClassDescription, PseudoSet};

/// Single dense layer followed by softmax over `classes.len()` outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorModel {
    /// Class label of every output row.
    classes: Vec<usize>,
    net: Sequential<f32>,
}

impl PredictorModel {
    pub fn new(input_dim: usize, classes: Vec<usize>, seed: u64) -> Result<Self> {
        let distinct: HashSet<_> = classes.iter().collect();
        if classes.is_empty() || distinct.len() != classes.len() {
            return Err(Error::Config("predictor classes must be non-empty and distinct".into()));
        }
        if input_dim == 0 {
            return Err(Error::Config("predictor input dimension must be positive".into()));
        }
        let mut rng = Rng::seed_from_u64(seed);
        let net = Sequential::new(vec![input_dim], vec![Layer::dense(input_dim, classes.len(), &mut rng)])?;
        Ok(Self { classes, net })
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_shape()[0]
    }

    fn dense(&self) -> (&Tensor<f32>, &Tensor<f32>) {
        match &self.net.layers()[0] {
            Layer::Dense { weight, bias } => (weight, bias),
            _ => unreachable!("predictor is a single dense layer"),
        }
    }

    /// `[rows, classes]` logits.
    pub fn logits(&self, h: Tensor<f32>) -> Result<Tensor<f32>> {
        if h.row_len() != self.input_dim() {
            return Err(Error::Config(format!(
                "representation width {} does not match predictor input {}",
                h.row_len(),
                self.input_dim()
            )));
        }
        self.net.forward(h)
    }

    /// `[rows, classes]` softmax scores.
    pub fn scores(&self, h: Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(softmax_rows(&self.logits(h)?))
    }

    /// Predicted class label per row; ties go to the lowest row index.
    pub fn predict(&self, h: Tensor<f32>) -> Result<Vec<usize>> {
        let logits = self.logits(h)?;
        Ok(logits.rows().map(|r| self.classes[argmax(r)]).collect())
    }

    fn rows_of(&self, labels: &[usize]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.classes
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| Error::Config(format!("class {l} is not an output of the predictor")))
            })
            .collect()
    }

    /// One pass over `(features, labels)` in shuffled mini-batches; returns
    /// the mean batch loss.
    pub fn fit_epoch(
        &mut self,
        features: &[f32],
        labels: &[usize],
        batch_size: usize,
        optimizer: &mut Optimizer<f32>,
        rng: &mut Rng,
    ) -> Result<f64> {
        let d = self.input_dim();
        if labels.is_empty() || batch_size == 0 || features.len() != labels.len() * d {
            return Err(Error::Usage(format!(
                "cannot fit {} labels over {} values with batch size {batch_size}",
                labels.len(),
                features.len()
            )));
        }
        let rows = self.rows_of(labels)?;
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(rng);
        let (mut sum, mut batches) = (0.0, 0);
        for chunk in order.chunks(batch_size) {
            let mut x = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                x.extend_from_slice(&features[i * d..(i + 1) * d]);
            }
            let targets: Vec<usize> = chunk.iter().map(|&i| rows[i]).collect();
            let (out, trace) = self.net.forward_train(Tensor::new(vec![chunk.len(), d], x)?, None)?;
            let (loss, grad) = softmax_cross_entropy(&out, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Numeric("non-finite predictor loss".into()));
            }
            let (_, grads) = self.net.backward(&trace, grad)?;
            optimizer.step(self.net.params_mut(), &grads)?;
            sum += loss;
            batches += 1;
        }
        Ok(sum / batches as f64)
    }

    /// Predictor over `keep` only; its rows are verbatim copies of this
    /// model's rows for those classes.
    pub fn cutdown(&self, keep: &[usize]) -> Result<Self> {
        let rows = self.rows_of(keep)?;
        let (weight, bias) = self.dense();
        let d = self.input_dim();
        let mut w = Vec::with_capacity(rows.len() * d);
        let mut b = Vec::with_capacity(rows.len());
        for &r in &rows {
            w.extend_from_slice(weight.row(r));
            b.push(bias.data()[r]);
        }
        let layer = Layer::Dense {
            weight: Tensor::new(vec![rows.len(), d], w)?,
            bias: Tensor::new(vec![rows.len()], b)?,
        };
        Ok(Self {
            classes: keep.to_vec(),
            net: Sequential::new(vec![d], vec![layer])?,
        })
    }

    pub fn to_container(&self, config_hash: &str) -> Container {
        let mut c = Container::new("predictor");
        c.push(format!("config_hash {config_hash}"));
        let classes: Vec<String> = self.classes.iter().map(|c| c.to_string()).collect();
        c.push(format!("classes {}", classes.join(",")));
        c.header.extend(self.net.manifest("predictor"));
        for (j, p) in self.net.params().into_iter().enumerate() {
            c.blocks.push(Block::tensor(format!("predictor.{j}"), p));
        }
        c
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("predictor checkpoint: {why}"));
        let classes = c
            .value("classes")
            .ok_or_else(|| bad("missing classes"))?
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|_| bad("bad class label")))
            .collect::<Result<Vec<_>>>()?;
        let start = c
            .header
            .iter()
            .position(|l| l.starts_with("stack "))
            .ok_or_else(|| bad("missing layer stack"))?;
        let mut tensors = c
            .blocks
            .into_iter()
            .map(|b| b.into_tensor())
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let (_, net, _) = Sequential::from_manifest(&c.header[start..], &mut tensors)?;
        let dense_only = net.layers().len() == 1 && matches!(net.layers()[0], Layer::Dense { .. });
        if !dense_only || net.output_width() != classes.len() || tensors.next().is_some() {
            return Err(bad("layers do not form a predictor over the listed classes"));
        }
        Ok(Self { classes, net })
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        self.to_container(config_hash).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::read_kind(path, "predictor")?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingPlan {
    pub iterations: usize,
    pub epochs_per_iteration: usize,
    /// Pseudo representations per class and iteration.
    pub pseudo_size: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainingPlan {
    pub fn new(iterations: usize, epochs_per_iteration: usize, pseudo_size: usize, seed: u64) -> Self {
        Self {
            iterations,
            epochs_per_iteration,
            pseudo_size,
            batch_size: 64,
            optimizer: OptimizerKind::ADAM,
            learning_rate: 1e-3,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.epochs_per_iteration == 0 || self.pseudo_size == 0 || self.batch_size == 0 {
            return Err(Error::Config("training plan counts must all be at least 1".into()));
        }
        Ok(())
    }
}

/// Real representations of the held-out validation classes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationData {
    pub dim: usize,
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `None` when no validation classes were held out.
    pub val_accuracy: Option<f64>,
    /// Mean batch loss of the iteration's last epoch.
    pub train_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorTraining {
    /// Selected model over unseen and validation classes.
    pub model: PredictorModel,
    pub log: Vec<IterationRecord>,
    /// Index into `log` of the selected checkpoint.
    pub selected: usize,
}

impl PredictorTraining {
    pub fn log_csv(&self) -> String {
        validation_log_csv(&self.log)
    }
}

pub fn validation_log_csv(log: &[IterationRecord]) -> String {
    let mut s = String::from("iteration,val_accuracy,train_loss\n");
    for r in log {
        let acc = r.val_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        let _ = writeln!(s, "{},{acc},{:.6}", r.iteration, r.train_loss);
    }
    s
}

/// Train over `unseen ∪ validation` classes. Each iteration draws a fresh
/// pseudo set for every class, trains for the planned epochs and measures
/// accuracy on the real validation representations. The iteration with
/// the highest validation accuracy is returned (the earliest on ties); with
/// no validation classes the last iteration is returned.
pub fn train_predictor(
    repo: &CognitiveRepository,
    unseen: &[ClassDescription],
    validation: &[ClassDescription],
    validation_data: &ValidationData,
    plan: &TrainingPlan,
) -> Result<PredictorTraining> {
    train_predictor_from(repo, unseen, validation, validation_data, plan, None)
}

/// Pseudo set the first training iteration draws.
pub fn first_pseudo_set(
    repo: &CognitiveRepository,
    unseen: &[ClassDescription],
    validation: &[ClassDescription],
    plan: &TrainingPlan,
) -> Result<PseudoSet> {
    let descriptions: Vec<ClassDescription> = unseen.iter().chain(validation).cloned().collect();
    synthesize_all(repo, &descriptions, plan.pseudo_size, iteration_seed(plan, 0))
}

fn iteration_seed(plan: &TrainingPlan, iteration: usize) -> u64 {
    derive_seed(plan.seed, 2 + iteration as u64)
}

/// As [`train_predictor`], with the first iteration's pseudo set supplied
/// by the caller (it must cover the same classes, grouped in the same
/// order).
pub fn train_predictor_from(
    repo: &CognitiveRepository,
    unseen: &[ClassDescription],
    validation: &[ClassDescription],
    validation_data: &ValidationData,
    plan: &TrainingPlan,
    first: Option<PseudoSet>,
) -> Result<PredictorTraining> {
    plan.validate()?;
    let descriptions: Vec<ClassDescription> = unseen.iter().chain(validation).cloned().collect();
    let classes: Vec<usize> = descriptions.iter().map(|d| d.label).collect();
    let val_classes: HashSet<usize> = validation.iter().map(|d| d.label).collect();
    if let Some(l) = validation_data.labels.iter().find(|l| !val_classes.contains(l)) {
        return Err(Error::Usage(format!("validation sample of class {l} which is not held out")));
    }
    if !validation.is_empty() && validation_data.labels.is_empty() {
        return Err(Error::Usage("validation classes given without validation samples".into()));
    }
    let dim = repo.total_dim();
    if !validation_data.labels.is_empty()
        && (validation_data.dim != dim || validation_data.features.len() != validation_data.labels.len() * dim)
    {
        return Err(Error::Config(format!("validation representations do not have width {dim}")));
    }

    let mut model = PredictorModel::new(dim, classes, derive_seed(plan.seed, 0))?;
    let mut optimizer = Optimizer::<f32>::new(plan.optimizer, plan.learning_rate);
    let mut order_rng = Rng::seed_from_u64(derive_seed(plan.seed, 1));
    let mut log = Vec::with_capacity(plan.iterations);
    let mut best: Option<(f64, usize, PredictorModel)> = None;
    let mut first = first;
    if let Some(set) = &first {
        let labels: HashSet<usize> = set.labels.iter().copied().collect();
        if set.dim != dim || labels != model.classes().iter().copied().collect::<HashSet<_>>() {
            return Err(Error::Config("supplied pseudo set does not cover the predictor classes".into()));
        }
    }
    for it in 0..plan.iterations {
        let pseudo = match first.take() {
            Some(set) => set,
            None => synthesize_all(repo, &descriptions, plan.pseudo_size, iteration_seed(plan, it))?,
        };
        let mut loss = 0.0;
        for _ in 0..plan.epochs_per_iteration {
            loss = model.fit_epoch(&pseudo.features, &pseudo.labels, plan.batch_size, &mut optimizer, &mut order_rng)?;
        }
        let val_accuracy = if validation_data.labels.is_empty() {
            None
        } else {
            let h = Tensor::new(vec![validation_data.labels.len(), dim], validation_data.features.clone())?;
            let predicted = model.predict(h)?;
            let hits = predicted.iter().zip(&validation_data.labels).filter(|(p, l)| p == l).count();
            Some(hits as f64 / predicted.len() as f64)
        };
        log::info!(
            "predictor iteration {} loss {loss:.5} validation accuracy {}",
            it + 1,
            val_accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into())
        );
        log.push(IterationRecord {
            iteration: it + 1,
            val_accuracy,
            train_loss: loss,
        });
        let score = val_accuracy.unwrap_or(f64::INFINITY);
        let improves = match &best {
            None => true,
            Some((b, _, _)) => val_accuracy.is_none() || score > *b,
        };
        if improves {
            best = Some((score, it, model.clone()));
        }
    }
    let (_, selected, model) = best.expect("at least one iteration");
    Ok(PredictorTraining { model, log, selected })
}

/// Chained inference: predicted label and score row for every sample in `x`.
pub fn infer(jafe: &JafeModel, predictor: &PredictorModel, x: Tensor<f32>) -> Result<(Vec<usize>, Tensor<f32>)> {
    if x.shape()[1..] != *jafe.input_shape() {
        return Err(Error::Config(format!(
            "input shape {:?} does not match encoder input {:?}",
            &x.shape()[1..],
            jafe.input_shape()
        )));
    }
    let scores = predictor.scores(jafe.extract(x)?)?;
    let labels = scores.rows().map(|r| predictor.classes()[argmax(r)]).collect();
    Ok((labels, scores))
}

/// `|data| × classes` softmax scores, in dataset order.
pub fn score_matrix(jafe: &JafeModel, predictor: &PredictorModel, data: &Dataset, batch_size: usize) -> Result<Tensor<f32>> {
    let c = predictor.classes().len();
    let mut out = Vec::with_capacity(data.len() * c);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (_, s) = infer(jafe, predictor, data.batch(chunk))?;
        out.extend_from_slice(s.data());
    }
    Tensor::new(vec![data.len(), c], out)
}
