//! Pipeline stages. Each stage reads its predecessor's artifact from the
//! output directory, checks that it was produced under the same
//! configuration hash, and writes one artifact plus one log.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Result};
use gpfr_core::cmnist::{self, CMnist, ColorPalette};
use gpfr_core::dataio::{self, FeatureTable, SplitSpec};
use gpfr_core::eval::{self, ExperimentReport, PipelineConfig};
use gpfr_core::jafe::{extract_dataset, train_jafe, JafeModel};
use gpfr_core::nn::{derive_seed, Container};
use gpfr_core::predictor::{self, IterationRecord, PredictorModel};
use gpfr_core::repository::CognitiveRepository;
use gpfr_core::synthesis::{ClassDescription, PseudoSet};
use gpfr_core::{Dataset, Error};

use crate::config::RunConfig;

pub const JAFE_FILE: &str = "jafe.ckpt";
pub const REPOSITORY_FILE: &str = "repository.bin";
pub const PSEUDO_FILE: &str = "pseudo.bin";
pub const PREDICTOR_FILE: &str = "predictor.ckpt";

/// Samples and class descriptions a run works on.
pub struct RunData {
    pub split: SplitSpec,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    /// Index of every test sample in its source file.
    pub test_source: Vec<usize>,
    pub unseen: Vec<ClassDescription>,
    pub validation_descriptions: Vec<ClassDescription>,
    pub pipeline: PipelineConfig,
}

fn cmnist_files(dir: &Path) -> Result<(CMnist, CMnist)> {
    Ok((CMnist::read(&dir.join("train.cmn"))?, CMnist::read(&dir.join("test.cmn"))?))
}

fn cmnist_names() -> Vec<String> {
    cmnist::ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect()
}

fn required(config: &RunConfig, key: &str) -> Result<PathBuf> {
    config
        .path(key)
        .ok_or_else(|| Error::Usage(format!("dataset = table needs {key}")).into())
}

pub fn load_data(config: &RunConfig) -> Result<RunData> {
    let seed: u64 = config.num("seed")?;
    let v: usize = config.num("validation")?;
    match config.get("dataset") {
        "cmnist" => {
            let dir = config.path("cmnist_dir").unwrap_or_default();
            let (train, test) = cmnist_files(&dir)?;
            let split = cmnist::make_split(config.num("seen")?, Some(config.num("unseen")?), seed)?;
            let split = SplitSpec::new(split.seen, split.unseen, vec![])?.with_validation(v, derive_seed(seed, 7))?;
            let test_source = test.indices_of(&split.unseen);
            Ok(RunData {
                train: train.to_dataset(&train.indices_of(&split.training()))?,
                validation: train.to_dataset(&train.indices_of(&split.validation))?,
                test: test.to_dataset(&test_source)?,
                test_source,
                unseen: split.unseen.iter().map(|&c| cmnist::description(c)).collect(),
                validation_descriptions: split.validation.iter().map(|&c| cmnist::description(c)).collect(),
                pipeline: config.pipeline(config.scheme(&cmnist_names(), 10)?)?,
                split,
            })
        }
        "table" => {
            let table = FeatureTable::load(
                &required(config, "features")?,
                &required(config, "labels")?,
                Some(&required(config, "attributes")?),
            )?;
            let mut split = SplitSpec::read(&required(config, "split")?)?;
            if split.validation.is_empty() && v > 0 {
                split = split.with_validation(v, derive_seed(seed, 7))?;
            }
            let threshold: f32 = config.num("threshold")?;
            let test_source = table.indices_of(&split.unseen);
            Ok(RunData {
                train: table.to_dataset(&table.indices_of(&split.training()), threshold)?,
                validation: table.to_dataset(&table.indices_of(&split.validation), threshold)?,
                test: table.to_dataset(&test_source, threshold)?,
                test_source,
                unseen: table.class_descriptions(&split.unseen)?,
                validation_descriptions: table.class_descriptions(&split.validation)?,
                pipeline: config.pipeline(config.scheme(&table.attribute_names, 2)?)?,
                split,
            })
        }
        other => bail!(Error::Usage(format!("unknown dataset kind '{other}'"))),
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.out_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Read an artifact and refuse it when it came from another configuration.
fn read_artifact(config: &RunConfig, name: &str, kind: &str) -> Result<Container> {
    let path = config.out_dir().join(name);
    let c = Container::read_kind(&path, kind)?;
    let found = c.value("config_hash").unwrap_or("none");
    if found != config.hash() {
        bail!(Error::Usage(format!(
            "{} was produced under configuration {found}, current configuration is {}",
            path.display(),
            config.hash()
        )));
    }
    Ok(c)
}

fn load_jafe(config: &RunConfig) -> Result<(JafeModel, Vec<f64>)> {
    let c = read_artifact(config, JAFE_FILE, "jafe")?;
    let losses = c
        .header
        .iter()
        .filter_map(|l| l.strip_prefix("epoch_loss "))
        .filter_map(|v| v.parse().ok())
        .collect();
    Ok((JafeModel::from_container(c)?, losses))
}

fn load_repository(config: &RunConfig) -> Result<CognitiveRepository> {
    Ok(CognitiveRepository::from_container(read_artifact(config, REPOSITORY_FILE, "repository")?)?)
}

fn load_predictor(config: &RunConfig) -> Result<(PredictorModel, Vec<IterationRecord>, usize)> {
    let c = read_artifact(config, PREDICTOR_FILE, "predictor")?;
    let mut log = Vec::new();
    for line in c.header.iter().filter_map(|l| l.strip_prefix("iteration ")) {
        let w: Vec<&str> = line.split_whitespace().collect();
        if let [it, acc, loss] = w[..] {
            log.push(IterationRecord {
                iteration: it.parse().unwrap_or(0),
                val_accuracy: acc.parse().ok(),
                train_loss: loss.parse().unwrap_or(f64::NAN),
            });
        }
    }
    let selected = c.value("selected").and_then(|v| v.parse().ok()).unwrap_or(0);
    Ok((PredictorModel::from_container(c)?, log, selected))
}

pub fn cmnist_gen(mnist_dir: &Path, out: &Path, seed: u64) -> Result<()> {
    let start = Instant::now();
    let (train, test) = cmnist::load_mnist(mnist_dir)?;
    let palette = ColorPalette::generate(seed);
    let (ctrain, ctest) = cmnist::generate(&train, &test, &palette, seed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    ctrain.write(&out.join("train.cmn"))?;
    ctest.write(&out.join("test.cmn"))?;
    let mut meta = cmnist::metadata_text(&palette, seed);
    let _ = writeln!(meta, "train_images {}\ntest_images {}", ctrain.len(), ctest.len());
    write(&out.join("metadata.txt"), &meta)?;
    log::info!(
        "wrote {} training and {} test images to {} in {:.1}s",
        ctrain.len(),
        ctest.len(),
        out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn split_log(data: &RunData) -> String {
    format!(
        "seen {}\nvalidation {}\nunseen {}\ntraining_samples {}\nvalidation_samples {}\ntest_samples {}\n",
        data.split.seen.len(),
        data.split.validation.len(),
        data.split.unseen.len(),
        data.train.len(),
        data.validation.len(),
        data.test.len()
    )
}

pub fn stage_train_jafe(config: &RunConfig, data: &RunData) -> Result<()> {
    let dir = out_dir(config)?;
    data.split.write(&dir.join("split.csv"))?;
    let mut jafe = eval::init_jafe(&data.pipeline, data.train.sample_shape().to_vec())?;
    let log = train_jafe(&mut jafe, &data.train, &data.pipeline.jafe)?;
    let mut c = jafe.to_container(&config.hash());
    for l in &log.epoch_losses {
        c.push(format!("epoch_loss {l}"));
    }
    c.write(&dir.join(JAFE_FILE))?;
    let mut text = split_log(data);
    let _ = writeln!(text, "initial_loss {:.6}", log.initial_loss);
    for (i, l) in log.epoch_losses.iter().enumerate() {
        let _ = writeln!(text, "epoch {} loss {l:.6}", i + 1);
    }
    write(&dir.join("train-jafe.log"), &text)
}

pub fn stage_build_repo(config: &RunConfig, data: &RunData) -> Result<()> {
    let dir = out_dir(config)?;
    let (jafe, _) = load_jafe(config)?;
    let repo = eval::repository_from(&jafe, &data.train, &data.pipeline)?;
    repo.save(&dir.join(REPOSITORY_FILE), &config.hash())?;
    write(&dir.join("build-repo.log"), &repo.size_report())
}

pub fn stage_synth(config: &RunConfig, data: &RunData) -> Result<()> {
    let dir = out_dir(config)?;
    let repo = load_repository(config)?;
    let set = predictor::first_pseudo_set(&repo, &data.unseen, &data.validation_descriptions, &data.pipeline.plan)?;
    set.save(&dir.join(PSEUDO_FILE), &config.hash())?;
    write(
        &dir.join("synth.log"),
        &format!(
            "classes {}\nper_class {}\nrepresentations {}\ndim {}\n",
            data.unseen.len() + data.validation_descriptions.len(),
            set.per_class,
            set.len(),
            set.dim
        ),
    )
}

pub fn stage_train_pred(config: &RunConfig, data: &RunData) -> Result<()> {
    let dir = out_dir(config)?;
    let (jafe, _) = load_jafe(config)?;
    let repo = load_repository(config)?;
    let first = PseudoSet::from_container(read_artifact(config, PSEUDO_FILE, "pseudo")?)?;
    let val = eval::validation_data(&jafe, &data.validation, data.pipeline.extract_batch)?;
    let trained = predictor::train_predictor_from(
        &repo,
        &data.unseen,
        &data.validation_descriptions,
        &val,
        &data.pipeline.plan,
        Some(first),
    )?;
    let unseen: Vec<usize> = data.unseen.iter().map(|d| d.label).collect();
    let cut = trained.model.cutdown(&unseen)?;
    let mut c = cut.to_container(&config.hash());
    for r in &trained.log {
        let acc = r.val_accuracy.map(|a| a.to_string()).unwrap_or_else(|| "-".into());
        c.push(format!("iteration {} {acc} {}", r.iteration, r.train_loss));
    }
    c.push(format!("selected {}", trained.selected));
    c.write(&dir.join(PREDICTOR_FILE))?;
    write(&dir.join("predictor_log.csv"), &trained.log_csv())
}

pub fn stage_eval(config: &RunConfig, data: &RunData) -> Result<ExperimentReport> {
    let start = Instant::now();
    let dir = out_dir(config)?;
    let (jafe, jafe_losses) = load_jafe(config)?;
    let (predictor, predictor_log, selected) = load_predictor(config)?;
    let (accuracy, retrieval) = eval::measure(&jafe, &predictor, &data.test, data.pipeline.extract_batch)?;
    let mut entries = config.entries();
    entries.retain(|(k, _)| k != "out");
    entries.push(("config_hash".into(), config.hash()));
    let report = ExperimentReport {
        config: entries,
        seed: config.num("seed")?,
        accuracy,
        retrieval,
        jafe_losses,
        predictor_log,
        selected_iteration: selected,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    report.write(&dir.join("report"))?;
    log::info!("unseen accuracy {:.4}, mAP {:.4}", report.accuracy.overall, report.retrieval.map);
    Ok(report)
}

pub fn stage_supervised(config: &RunConfig) -> Result<()> {
    if config.get("dataset") != "cmnist" {
        bail!(Error::Usage("supervised mode runs on the cmnist dataset".into()));
    }
    let dir = out_dir(config)?;
    let (train, test) = cmnist_files(&config.path("cmnist_dir").unwrap_or_default())?;
    let per_class: usize = config.num("images_per_class")?;
    let mut counts = vec![0usize; cmnist::CLASSES];
    let picked: Vec<usize> = (0..train.len())
        .filter(|&i| {
            let c = train.class_of(i);
            counts[c] += 1;
            counts[c] <= per_class
        })
        .collect();
    let train_ds = train.to_dataset(&picked)?;
    let test_ds = test.to_dataset(&(0..test.len()).collect::<Vec<_>>())?;
    let descriptions: Vec<ClassDescription> = (0..cmnist::CLASSES).map(cmnist::description).collect();
    let pipeline = config.pipeline(config.scheme(&cmnist_names(), 10)?)?;
    let report = eval::run_supervised_comparison(
        &train_ds,
        &test_ds,
        &descriptions,
        &pipeline,
        &config.list("pseudo_sizes")?,
        &config.baseline()?,
    )?;
    write(&dir.join("supervised.csv"), &report.to_csv())
}

pub fn stage_retrieve(config: &RunConfig, data: &RunData, top: usize) -> Result<PathBuf> {
    let dir = out_dir(config)?;
    let (jafe, _) = load_jafe(config)?;
    let (predictor, _, _) = load_predictor(config)?;
    let scores = predictor::score_matrix(&jafe, &predictor, &data.test, data.pipeline.extract_batch)?;
    let c = predictor.classes().len();
    let mut csv = String::from("class,rank,item,true_class,score\n");
    for (j, &class) in predictor.classes().iter().enumerate() {
        let column: Vec<f32> = (0..data.test.len()).map(|i| scores.data()[i * c + j]).collect();
        for (rank, i) in eval::rank_by_score(&column).into_iter().take(top).enumerate() {
            let _ = writeln!(csv, "{class},{},{},{},{}", rank + 1, data.test_source[i], data.test.labels()[i], column[i]);
        }
    }
    let path = dir.join(format!("retrieval_top{top}.csv"));
    write(&path, &csv)?;
    Ok(path)
}

/// Write combined representations of one part of the data as a feature
/// file plus labels.
pub fn stage_export(config: &RunConfig, data: &RunData, part: &str) -> Result<PathBuf> {
    let dir = out_dir(config)?;
    let (jafe, _) = load_jafe(config)?;
    let set = match part {
        "train" => &data.train,
        "validation" => &data.validation,
        "test" => &data.test,
        other => bail!(Error::Usage(format!("unknown part '{other}' (train, validation or test)"))),
    };
    let ext = extract_dataset(&jafe, set, data.pipeline.extract_batch)?;
    let path = dir.join(format!("features_{part}.gpft"));
    dataio::write_features(&path, ext.dim, &ext.combined)?;
    dataio::write_labels(&dir.join(format!("labels_{part}.csv")), set.labels())?;
    Ok(path)
}
