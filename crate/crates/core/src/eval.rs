//! Accuracy, ranked retrieval metrics, the end-to-end supervised baseline
//! and the experiment drivers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::jafe::{build_encoder, extract_dataset, train_jafe, AttributeScheme, EncoderSpec, JafeModel, TrainLog, TrainSettings, UnitSpec};
use crate::nn::{
    argmax, derive_seed, softmax_cross_entropy, Activation, Layer, Optimizer, OptimizerKind, Rng, Sequential, Tensor,
};
use crate::predictor::{train_predictor, IterationRecord, PredictorModel, TrainingPlan, ValidationData};
use crate::repository::{build_repository, build_topscore_repository, CognitiveRepository, ConfidenceMargins, RepositoryOptions};
use crate::synthesis::ClassDescription;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCount {
    pub correct: usize,
    pub total: usize,
}

impl ClassCount {
    pub fn rate(&self) -> f64 {
        self.correct as f64 / self.total.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Accuracy {
    pub overall: f64,
    /// Keyed by true class.
    pub per_class: BTreeMap<usize, ClassCount>,
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<Accuracy> {
    if predicted.len() != truth.len() {
        return Err(Error::Usage(format!("{} predictions for {} labels", predicted.len(), truth.len())));
    }
    if truth.is_empty() {
        return Err(Error::Usage("accuracy of an empty set".into()));
    }
    let mut per_class: BTreeMap<usize, ClassCount> = BTreeMap::new();
    let mut correct = 0;
    for (&p, &t) in predicted.iter().zip(truth) {
        let e = per_class.entry(t).or_default();
        e.total += 1;
        if p == t {
            e.correct += 1;
            correct += 1;
        }
    }
    Ok(Accuracy {
        overall: correct as f64 / truth.len() as f64,
        per_class,
    })
}

/// Non-interpolated average precision: the mean of precision@k over the
/// ranks `k` of relevant items. Zero when nothing is relevant.
pub fn average_precision(relevance: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &r) in relevance.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn mean_average_precision(aps: &[f64]) -> f64 {
    if aps.is_empty() {
        return 0.0;
    }
    aps.iter().sum::<f64>() / aps.len() as f64
}

/// `(recall, precision)` after each rank.
pub fn pr_curve(relevance: &[bool]) -> Vec<(f64, f64)> {
    let total = relevance.iter().filter(|&&r| r).count();
    let mut hits = 0usize;
    relevance
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            hits += usize::from(r);
            let recall = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
            (recall, hits as f64 / (k + 1) as f64)
        })
        .collect()
}

/// Item indices by descending score; equal scores keep ascending index
/// order and NaN scores go last.
pub fn rank_by_score(scores: &[f32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (scores[a], scores[b]);
        match (x.is_nan(), y.is_nan()) {
            (true, true) => a.cmp(&b),
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            _ => y.partial_cmp(&x).unwrap().then(a.cmp(&b)),
        }
    });
    order
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassRetrieval {
    pub class: usize,
    /// Relevance of the ranked test items.
    pub relevance: Vec<bool>,
    pub relevant: usize,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Retrieval {
    pub per_class: Vec<ClassRetrieval>,
    /// Mean AP over the classes with at least one relevant item.
    pub map: f64,
    /// Classes left out of the mean for lack of relevant items.
    pub excluded: Vec<usize>,
}

/// Rank all items along each class column of an `items × classes` score
/// matrix.
pub fn retrieval(scores: &Tensor<f32>, truth: &[usize], classes: &[usize]) -> Result<Retrieval> {
    let (n, c) = (scores.batch(), scores.row_len());
    if n != truth.len() || c != classes.len() {
        return Err(Error::Usage(format!("{n}×{c} scores for {} items and {} classes", truth.len(), classes.len())));
    }
    let mut per_class = Vec::with_capacity(c);
    let mut excluded = Vec::new();
    let mut aps = Vec::new();
    for (j, &class) in classes.iter().enumerate() {
        let column: Vec<f32> = (0..n).map(|i| scores.data()[i * c + j]).collect();
        let relevance: Vec<bool> = rank_by_score(&column).into_iter().map(|i| truth[i] == class).collect();
        let relevant = relevance.iter().filter(|&&r| r).count();
        let ap = average_precision(&relevance);
        if relevant == 0 {
            excluded.push(class);
        } else {
            aps.push(ap);
        }
        per_class.push(ClassRetrieval {
            class,
            relevance,
            relevant,
            ap,
        });
    }
    Ok(Retrieval {
        per_class,
        map: mean_average_precision(&aps),
        excluded,
    })
}

/// End-to-end baseline with the same architecture as the full model: the
/// encoder, one perceptron layer and a softmax classifier, trained directly
/// on class labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CslmSettings {
    pub encoder: EncoderSpec,
    pub hidden: usize,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub seed: u64,
}

impl CslmSettings {
    pub fn new(encoder: EncoderSpec, hidden: usize, seed: u64) -> Self {
        Self {
            encoder,
            hidden,
            activation: Activation::Tanh,
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerKind::ADAM,
            learning_rate: 1e-3,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cslm {
    classes: Vec<usize>,
    net: Sequential<f32>,
}

impl Cslm {
    pub fn new(input_shape: Vec<usize>, classes: Vec<usize>, settings: &CslmSettings) -> Result<Self> {
        let mut rng = Rng::seed_from_u64(derive_seed(settings.seed, 0));
        let encoder = build_encoder(settings.encoder, input_shape.clone(), &mut rng)?;
        let width = encoder.output_width();
        let mut layers = encoder.layers().to_vec();
        layers.push(Layer::dense(width, settings.hidden, &mut rng));
        layers.push(Layer::Activation(settings.activation));
        layers.push(Layer::dense(settings.hidden, classes.len(), &mut rng));
        Ok(Self {
            classes,
            net: Sequential::new(input_shape, layers)?,
        })
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Train on every sample of `data`; returns the mean batch loss per
    /// epoch.
    pub fn fit(&mut self, data: &Dataset, settings: &CslmSettings) -> Result<Vec<f64>> {
        if settings.batch_size == 0 {
            return Err(Error::Usage("batch size must be positive".into()));
        }
        let index: BTreeMap<usize, usize> = self.classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let targets = data
            .labels()
            .iter()
            .map(|l| index.get(l).copied().ok_or_else(|| Error::Config(format!("class {l} is not a baseline output"))))
            .collect::<Result<Vec<_>>>()?;
        let mut order_rng = Rng::seed_from_u64(derive_seed(settings.seed, 1));
        let mut dropout_rng = Rng::seed_from_u64(derive_seed(settings.seed, 2));
        let mut optimizer = Optimizer::<f32>::new(settings.optimizer, settings.learning_rate);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut losses = Vec::with_capacity(settings.epochs);
        for epoch in 0..settings.epochs {
            order.shuffle(&mut order_rng);
            let (mut sum, mut batches) = (0.0, 0);
            for chunk in order.chunks(settings.batch_size) {
                let (out, trace) = self.net.forward_train(data.batch(chunk), Some(&mut dropout_rng))?;
                let t: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
                let (loss, grad) = softmax_cross_entropy(&out, &t)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("non-finite baseline loss in epoch {epoch}")));
                }
                let (_, grads) = self.net.backward(&trace, grad)?;
                optimizer.step(self.net.params_mut(), &grads)?;
                sum += loss;
                batches += 1;
            }
            let mean = sum / batches.max(1) as f64;
            log::info!("baseline epoch {} loss {mean:.5}", epoch + 1);
            losses.push(mean);
        }
        Ok(losses)
    }

    pub fn predict(&self, data: &Dataset, batch_size: usize) -> Result<Vec<usize>> {
        let indices: Vec<usize> = (0..data.len()).collect();
        let mut out = Vec::with_capacity(data.len());
        for chunk in indices.chunks(batch_size.max(1)) {
            let logits = self.net.forward(data.batch(chunk))?;
            out.extend(logits.rows().map(|r| self.classes[argmax(r)]));
        }
        Ok(out)
    }
}

/// Train the baseline on `train` and return its accuracy on `test`.
pub fn run_cslm_baseline(train: &Dataset, test: &Dataset, settings: &CslmSettings) -> Result<f64> {
    let classes: Vec<usize> = train.labels().iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut model = Cslm::new(train.sample_shape().to_vec(), classes, settings)?;
    model.fit(train, settings)?;
    Ok(accuracy(&model.predict(test, 256)?, test.labels())?.overall)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RepositoryRule {
    Margins(ConfidenceMargins),
    TopScore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub scheme: AttributeScheme,
    pub encoder: EncoderSpec,
    pub unit: UnitSpec,
    pub jafe: TrainSettings,
    pub rule: RepositoryRule,
    pub repository: RepositoryOptions,
    pub plan: TrainingPlan,
    /// Batch size for feature extraction.
    pub extract_batch: usize,
}

impl PipelineConfig {
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("attributes".to_string(), self.scheme.len().to_string()),
            ("representation_dim".to_string(), self.scheme.total_dim().to_string()),
            ("encoder".to_string(), format!("{:?}", self.encoder)),
            ("unit".to_string(), format!("{:?}", self.unit)),
            ("jafe_epochs".to_string(), self.jafe.epochs.to_string()),
            ("jafe_batch".to_string(), self.jafe.batch_size.to_string()),
            ("jafe_optimizer".to_string(), self.jafe.optimizer.name().to_string()),
            ("jafe_lr".to_string(), self.jafe.learning_rate.to_string()),
            ("jafe_seed".to_string(), self.jafe.seed.to_string()),
        ];
        out.push((
            "repository_rule".to_string(),
            match self.rule {
                RepositoryRule::Margins(m) => format!("margins({}, {})", m.positive(), m.negative()),
                RepositoryRule::TopScore => "top-score".to_string(),
            },
        ));
        out.push(("fallback_q".to_string(), self.repository.fallback_q.to_string()));
        out.extend([
            ("iterations".to_string(), self.plan.iterations.to_string()),
            ("epochs_per_iteration".to_string(), self.plan.epochs_per_iteration.to_string()),
            ("pseudo_size".to_string(), self.plan.pseudo_size.to_string()),
            ("predictor_batch".to_string(), self.plan.batch_size.to_string()),
            ("predictor_optimizer".to_string(), self.plan.optimizer.name().to_string()),
            ("predictor_lr".to_string(), self.plan.learning_rate.to_string()),
            ("predictor_seed".to_string(), self.plan.seed.to_string()),
        ]);
        out
    }
}

/// JAFE and repository learned from the seen classes.
#[derive(Clone, Debug)]
pub struct SeenStage {
    pub jafe: JafeModel,
    pub jafe_log: TrainLog,
    pub repository: CognitiveRepository,
}

/// Untrained JAFE for `input_shape` samples.
pub fn init_jafe(config: &PipelineConfig, input_shape: Vec<usize>) -> Result<JafeModel> {
    JafeModel::new(
        config.scheme.clone(),
        input_shape,
        config.encoder,
        config.unit,
        derive_seed(config.jafe.seed, 0x1AFE),
    )
}

/// Repository from the representations of the training samples.
pub fn repository_from(jafe: &JafeModel, train: &Dataset, config: &PipelineConfig) -> Result<CognitiveRepository> {
    let extraction = extract_dataset(jafe, train, config.extract_batch).map_err(|e| e.in_stage("extraction"))?;
    let repository = match config.rule {
        RepositoryRule::Margins(m) => build_repository(&config.scheme, &extraction, train.annotations(), m, config.repository),
        RepositoryRule::TopScore => build_topscore_repository(&config.scheme, &extraction, train.annotations(), config.repository),
    }
    .map_err(|e| e.in_stage("repository"))?;
    log::info!("repository sizes {:?}", repository.sizes());
    Ok(repository)
}

pub fn train_seen_stage(train: &Dataset, config: &PipelineConfig) -> Result<SeenStage> {
    let mut jafe = init_jafe(config, train.sample_shape().to_vec()).map_err(|e| e.in_stage("jafe"))?;
    let jafe_log = train_jafe(&mut jafe, train, &config.jafe).map_err(|e| e.in_stage("jafe"))?;
    let repository = repository_from(&jafe, train, config)?;
    Ok(SeenStage {
        jafe,
        jafe_log,
        repository,
    })
}

/// Accuracy and ranked retrieval of a predictor on labeled samples.
pub fn measure(jafe: &JafeModel, predictor: &PredictorModel, test: &Dataset, batch: usize) -> Result<(Accuracy, Retrieval)> {
    let scores = crate::predictor::score_matrix(jafe, predictor, test, batch)?;
    let classes = predictor.classes();
    let predicted: Vec<usize> = scores.rows().map(|r| classes[argmax(r)]).collect();
    Ok((accuracy(&predicted, test.labels())?, retrieval(&scores, test.labels(), classes)?))
}

/// What the predictor is trained and judged on.
#[derive(Clone, Copy, Debug)]
pub struct ZslTask<'a> {
    pub unseen: &'a [ClassDescription],
    pub validation: &'a [ClassDescription],
    /// Real samples of the validation classes.
    pub validation_data: &'a Dataset,
    /// Test samples of the unseen classes.
    pub test: &'a Dataset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub config: Vec<(String, String)>,
    pub seed: u64,
    pub accuracy: Accuracy,
    pub retrieval: Retrieval,
    pub jafe_losses: Vec<f64>,
    pub predictor_log: Vec<IterationRecord>,
    pub selected_iteration: usize,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    /// Structured text report. The wall-clock line is last.
    pub fn to_text(&self) -> String {
        let mut s = String::from("[config]\n");
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        s.push_str("\n[jafe]\n");
        for (i, l) in self.jafe_losses.iter().enumerate() {
            let _ = writeln!(s, "epoch {} loss {l:.6}", i + 1);
        }
        s.push_str("\n[predictor]\n");
        for r in &self.predictor_log {
            let acc = r.val_accuracy.map(|a| format!("{a:.6}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(s, "iteration {} val_accuracy {acc} train_loss {:.6}", r.iteration, r.train_loss);
        }
        let _ = writeln!(s, "selected iteration {}", self.selected_iteration + 1);
        s.push_str("\n[results]\n");
        let _ = writeln!(s, "test_items = {}", self.accuracy.per_class.values().map(|c| c.total).sum::<usize>());
        let _ = writeln!(s, "accuracy = {:.6}", self.accuracy.overall);
        let _ = writeln!(s, "map = {:.6}", self.retrieval.map);
        if !self.retrieval.excluded.is_empty() {
            let ex: Vec<String> = self.retrieval.excluded.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "excluded_from_map = {}", ex.join(","));
        }
        let _ = writeln!(s, "\nwall_clock_seconds = {:.1}", self.wall_clock_seconds);
        s
    }

    /// `class,test_items,correct,accuracy,relevant,ap`
    pub fn per_class_csv(&self) -> String {
        let mut s = String::from("class,test_items,correct,accuracy,relevant,ap\n");
        for r in &self.retrieval.per_class {
            let count = self.accuracy.per_class.get(&r.class).copied().unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{},{:.6}",
                r.class,
                count.total,
                count.correct,
                count.rate(),
                r.relevant,
                r.ap
            );
        }
        s
    }

    /// `class,rank,recall,precision`
    pub fn pr_csv(&self) -> String {
        let mut s = String::from("class,rank,recall,precision\n");
        for r in &self.retrieval.per_class {
            for (k, (recall, precision)) in pr_curve(&r.relevance).into_iter().enumerate() {
                let _ = writeln!(s, "{},{},{recall:.6},{precision:.6}", r.class, k + 1);
            }
        }
        s
    }

    /// `report.txt`, `per_class.csv`, `pr.csv` and `predictor_log.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("report.txt", self.to_text()),
            ("per_class.csv", self.per_class_csv()),
            ("pr.csv", self.pr_csv()),
            ("predictor_log.csv", crate::predictor::validation_log_csv(&self.predictor_log)),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Validation representations of the real validation samples.
pub fn validation_data(jafe: &JafeModel, data: &Dataset, batch: usize) -> Result<ValidationData> {
    if data.is_empty() {
        return Ok(ValidationData {
            dim: jafe.scheme().total_dim(),
            ..Default::default()
        });
    }
    let ext = extract_dataset(jafe, data, batch)?;
    Ok(ValidationData {
        dim: ext.dim,
        features: ext.combined,
        labels: data.labels().to_vec(),
    })
}

#[derive(Clone, Debug)]
pub struct UnseenStage {
    /// Cutdown predictor over the unseen classes.
    pub predictor: PredictorModel,
    pub report: ExperimentReport,
}

/// Train the predictor from the seen-stage repository and evaluate it on
/// the unseen test samples.
pub fn evaluate_unseen(seen: &SeenStage, task: &ZslTask<'_>, config: &PipelineConfig) -> Result<UnseenStage> {
    let start = Instant::now();
    let val = validation_data(&seen.jafe, task.validation_data, config.extract_batch).map_err(|e| e.in_stage("validation"))?;
    let trained = train_predictor(&seen.repository, task.unseen, task.validation, &val, &config.plan)
        .map_err(|e| e.in_stage("predictor"))?;
    let unseen: Vec<usize> = task.unseen.iter().map(|d| d.label).collect();
    let predictor = trained.model.cutdown(&unseen).map_err(|e| e.in_stage("predictor"))?;
    let (acc, ret) = measure(&seen.jafe, &predictor, task.test, config.extract_batch).map_err(|e| e.in_stage("evaluation"))?;
    log::info!("unseen accuracy {:.4} map {:.4}", acc.overall, ret.map);
    let report = ExperimentReport {
        config: config.echo(),
        seed: config.plan.seed,
        accuracy: acc,
        retrieval: ret,
        jafe_losses: seen.jafe_log.epoch_losses.clone(),
        predictor_log: trained.log,
        selected_iteration: trained.selected,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(UnseenStage { predictor, report })
}

#[derive(Clone, Debug)]
pub struct ZslOutcome {
    pub seen: SeenStage,
    pub unseen: UnseenStage,
}

/// Full zero-shot pipeline: JAFE training on `train`, repository,
/// synthesis, predictor training and evaluation.
pub fn run_zsl_experiment(train: &Dataset, task: &ZslTask<'_>, config: &PipelineConfig) -> Result<ZslOutcome> {
    let start = Instant::now();
    let seen = train_seen_stage(train, config)?;
    let mut unseen = evaluate_unseen(&seen, task, config)?;
    unseen.report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(ZslOutcome { seen, unseen })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedReport {
    pub classes: usize,
    pub images_per_class: f64,
    pub total_images: usize,
    pub baseline_accuracy: f64,
    /// `(pseudo size, accuracy)`.
    pub gpfr: Vec<(usize, f64)>,
}

impl SupervisedReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,pseudo_size,images_per_class,total_images,accuracy\n");
        let _ = writeln!(s, "cslm,,{:.2},{},{:.6}", self.images_per_class, self.total_images, self.baseline_accuracy);
        for (n, a) in &self.gpfr {
            let _ = writeln!(s, "gpfr,{n},{:.2},{},{a:.6}", self.images_per_class, self.total_images);
        }
        s
    }
}

/// Supervised comparison: the full model, with a predictor trained only on
/// pseudo representations of every class, against the end-to-end baseline
/// trained on the same images. No classes are held out for validation, so
/// the last predictor iteration is used.
pub fn run_supervised_comparison(
    train: &Dataset,
    test: &Dataset,
    descriptions: &[ClassDescription],
    config: &PipelineConfig,
    pseudo_sizes: &[usize],
    baseline: &CslmSettings,
) -> Result<SupervisedReport> {
    let classes: Vec<usize> = descriptions.iter().map(|d| d.label).collect();
    let seen = train_seen_stage(train, config)?;
    let ext = extract_dataset(&seen.jafe, test, config.extract_batch).map_err(|e| e.in_stage("evaluation"))?;
    let h = Tensor::new(vec![ext.len(), ext.dim], ext.combined)?;
    let mut gpfr = Vec::with_capacity(pseudo_sizes.len());
    for &n in pseudo_sizes {
        let plan = TrainingPlan {
            pseudo_size: n,
            ..config.plan
        };
        let trained = train_predictor(&seen.repository, descriptions, &[], &ValidationData::default(), &plan)
            .map_err(|e| e.in_stage("predictor"))?;
        let predicted = trained.model.predict(h.clone())?;
        let acc = accuracy(&predicted, test.labels())?.overall;
        log::info!("supervised gpfr pseudo size {n}: accuracy {acc:.4}");
        gpfr.push((n, acc));
    }
    let mut model = Cslm::new(train.sample_shape().to_vec(), classes.clone(), baseline).map_err(|e| e.in_stage("baseline"))?;
    model.fit(train, baseline).map_err(|e| e.in_stage("baseline"))?;
    let baseline_accuracy = accuracy(&model.predict(test, config.extract_batch)?, test.labels())?.overall;
    log::info!("supervised baseline accuracy {baseline_accuracy:.4}");
    Ok(SupervisedReport {
        classes: classes.len(),
        images_per_class: train.len() as f64 / classes.len().max(1) as f64,
        total_images: train.len(),
        baseline_accuracy,
        gpfr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        let a = accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap();
        assert_eq!(a.overall, 1.0);
        let truth: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let a = accuracy(&[4; 100], &truth).unwrap();
        assert!((a.overall - 0.1).abs() < 1e-12);
        assert_eq!(a.per_class[&4], ClassCount { correct: 10, total: 10 });
        assert!(matches!(accuracy(&[], &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, true, false, false]), 1.0);
        assert_eq!(average_precision(&[false, true]), 0.5);
        assert_eq!(average_precision(&[false, false]), 0.0);
    }

    #[test]
    fn pr_curve_examples() {
        assert!(pr_curve(&[true, true, false]).iter().take(2).all(|&(_, p)| p == 1.0));
        assert_eq!(pr_curve(&[true, false, true])[0], (0.5, 1.0));
        assert_eq!(pr_curve(&[false, true])[0], (0.0, 0.0));
    }

    #[test]
    fn ranking_is_stable() {
        assert_eq!(rank_by_score(&[0.5, 0.9, 0.5, f32::NAN, 0.9]), vec![1, 4, 0, 2, 3]);
    }

    #[test]
    fn retrieval_flags_classes_without_items() {
        let scores = Tensor::new(vec![3, 2], vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4]).unwrap();
        let r = retrieval(&scores, &[7, 7, 7], &[7, 8]).unwrap();
        assert_eq!(r.excluded, vec![8]);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn untrained_baseline_is_near_chance() {
        let classes: Vec<usize> = (0..10).collect();
        let n = 200;
        let data = Dataset::new(
            vec![4],
            (0..n * 4).map(|i| ((i * 7919) % 13) as f32 / 13.0).collect(),
            (0..n).map(|i| i % 10).collect(),
            vec![],
            0,
        )
        .unwrap();
        let settings = CslmSettings { epochs: 0, ..CslmSettings::new(EncoderSpec::Identity, 8, 1) };
        let mut m = Cslm::new(vec![4], classes, &settings).unwrap();
        assert!(m.fit(&data, &settings).unwrap().is_empty());
        let acc = accuracy(&m.predict(&data, 64).unwrap(), data.labels()).unwrap().overall;
        assert!(acc < 0.35, "untrained accuracy {acc}");
    }
}
