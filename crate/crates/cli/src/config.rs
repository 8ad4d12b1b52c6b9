//! Key-value run configuration.
//!
//! One `key = value` pair per line; `#` starts a comment. Flags given on
//! the command line override file values. Every key has a default, so an
//! empty file describes the C-MNIST zero-shot run with 200 seen and 50
//! unseen classes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use gpfr_core::eval::{CslmSettings, PipelineConfig, RepositoryRule};
use gpfr_core::jafe::{AttributeScheme, AttributeSpec, EncoderSpec, TrainSettings, UnitSpec};
use gpfr_core::nn::{Activation, OptimizerKind};
use gpfr_core::predictor::TrainingPlan;
use gpfr_core::repository::{ConfidenceMargins, RepositoryOptions};
use gpfr_core::Error;
use sha2::{Digest, Sha256};

const DEFAULTS: &[(&str, &str)] = &[
    ("dataset", "cmnist"),
    ("cmnist_dir", "data/cmnist"),
    ("features", ""),
    ("labels", ""),
    ("attributes", ""),
    ("split", ""),
    ("seen", "200"),
    ("unseen", "50"),
    ("validation", "10"),
    ("seed", "1"),
    ("attribute_dim", "32"),
    ("attribute_weights", "1,0.1,0.1"),
    ("threshold", "0.5"),
    ("encoder", "cnn"),
    ("dropout", "0.25"),
    ("unit", "slp"),
    ("hidden", "64"),
    ("activation", "auto"),
    ("jafe_epochs", "10"),
    ("jafe_batch", "32"),
    ("jafe_lr", "0.001"),
    ("optimizer", "adam"),
    ("rule", "top-score"),
    ("margin_pos", "0.7"),
    ("margin_neg", "0.2"),
    ("fallback_q", "10"),
    ("iterations", "5"),
    ("epochs_per_iteration", "1"),
    ("pseudo_size", "100"),
    ("predictor_batch", "32"),
    ("predictor_lr", "0.001"),
    ("extract_batch", "256"),
    ("images_per_class", "10"),
    ("pseudo_sizes", "50,100"),
    ("baseline_epochs", "30"),
    ("baseline_hidden", "96"),
    ("out", "runs/default"),
];

/// Keys that only say where results go; they do not enter the hash.
const UNHASHED: &[&str] = &["out"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn usage(msg: String) -> anyhow::Error {
    Error::Usage(msg).into()
}

impl RunConfig {
    pub fn defaults() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut config = Self::defaults();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("{origin}:{}: expected key = value", n + 1)))?;
            config.set(k.trim(), v.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::defaults()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(usage(format!("unknown configuration key '{key}'"))),
        }
    }

    /// Apply a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("override '{pair}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)
            .parse()
            .map_err(|_| usage(format!("{key} = '{}' is not a valid number", self.get(key))))
    }

    pub fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.get(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| usage(format!("{key} = '{}' is not a list of numbers", self.get(key))))
            })
            .collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        self.values.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical hashed entries.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            if !UNHASHED.contains(&k.as_str()) {
                h.update(format!("{k}={v}\n"));
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn optimizer(&self) -> Result<OptimizerKind> {
        OptimizerKind::parse(self.get("optimizer")).ok_or_else(|| usage(format!("unknown optimizer '{}'", self.get("optimizer"))))
    }

    pub fn encoder(&self) -> Result<EncoderSpec> {
        match self.get("encoder") {
            "cnn" => Ok(EncoderSpec::SmallCnn { dropout: self.num("dropout")? }),
            "identity" => Ok(EncoderSpec::Identity),
            other => bail!(usage(format!("unknown encoder '{other}'"))),
        }
    }

    /// `auto` is tanh for single-layer units and relu for two-layer ones.
    fn activation(&self) -> Result<Activation> {
        match self.get("activation") {
            "auto" if self.get("unit") == "two-layer" => Ok(Activation::Relu),
            "auto" => Ok(Activation::Tanh),
            other => Activation::parse(other).ok_or_else(|| usage(format!("unknown activation '{other}'"))),
        }
    }

    /// Attribute scheme for `names` with the given arity.
    pub fn scheme(&self, names: &[String], arity: usize) -> Result<AttributeScheme> {
        let weights: Vec<f64> = self.list("attribute_weights")?;
        let dim: usize = self.num("attribute_dim")?;
        let weight = |i: usize| match weights.len() {
            1 => Ok(weights[0]),
            n if n == names.len() => Ok(weights[i]),
            n => Err(usage(format!("{n} attribute weights for {} attributes", names.len()))),
        };
        let specs = names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                Ok(AttributeSpec {
                    name: name.clone(),
                    arity,
                    weight: weight(i)?,
                    dim,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AttributeScheme::new(specs)?)
    }

    pub fn pipeline(&self, scheme: AttributeScheme) -> Result<PipelineConfig> {
        let seed: u64 = self.num("seed")?;
        let unit = match self.get("unit") {
            "slp" => UnitSpec::single(self.activation()?),
            "two-layer" => UnitSpec::two_layer(self.num("hidden")?, self.activation()?),
            other => bail!(usage(format!("unknown unit '{other}'"))),
        };
        let rule = match self.get("rule") {
            "top-score" => RepositoryRule::TopScore,
            "margins" => RepositoryRule::Margins(ConfidenceMargins::new(self.num("margin_pos")?, self.num("margin_neg")?)?),
            other => bail!(usage(format!("unknown repository rule '{other}'"))),
        };
        let jafe = TrainSettings {
            optimizer: self.optimizer()?,
            learning_rate: self.num("jafe_lr")?,
            ..TrainSettings::new(self.num("jafe_epochs")?, self.num("jafe_batch")?, seed)
        };
        let plan = TrainingPlan {
            batch_size: self.num("predictor_batch")?,
            optimizer: self.optimizer()?,
            learning_rate: self.num("predictor_lr")?,
            ..TrainingPlan::new(self.num("iterations")?, self.num("epochs_per_iteration")?, self.num("pseudo_size")?, seed)
        };
        if plan.iterations == 0 || plan.epochs_per_iteration == 0 || plan.pseudo_size == 0 || plan.batch_size == 0 {
            bail!(usage("iterations, epochs_per_iteration, pseudo_size and predictor_batch must be at least 1".into()));
        }
        if jafe.batch_size == 0 {
            bail!(usage("jafe_batch must be at least 1".into()));
        }
        Ok(PipelineConfig {
            scheme,
            encoder: self.encoder()?,
            unit,
            jafe,
            rule,
            repository: RepositoryOptions {
                fallback_q: self.num("fallback_q")?,
                topscore_floor: 0.0,
            },
            plan,
            extract_batch: self.num::<usize>("extract_batch")?.max(1),
        })
    }

    pub fn baseline(&self) -> Result<CslmSettings> {
        Ok(CslmSettings {
            epochs: self.num("baseline_epochs")?,
            batch_size: self.num("jafe_batch")?,
            optimizer: self.optimizer()?,
            learning_rate: self.num("jafe_lr")?,
            activation: self.activation()?,
            ..CslmSettings::new(self.encoder()?, self.num("baseline_hidden")?, self.num("seed")?)
        })
    }

    /// Validate every typed value once, before any stage runs.
    pub fn validate(&self) -> Result<()> {
        for key in ["seen", "unseen", "validation", "attribute_dim", "fallback_q", "images_per_class"] {
            self.num::<usize>(key)?;
        }
        self.num::<u64>("seed")?;
        self.num::<f32>("threshold")?;
        self.list::<usize>("pseudo_sizes")?;
        self.baseline()?;
        let names: Vec<String> = (0..self.list::<f64>("attribute_weights")?.len()).map(|i| format!("a{i}")).collect();
        self.pipeline(self.scheme(&names, 2)?)?;
        match self.get("dataset") {
            "cmnist" | "table" => Ok(()),
            other => Err(usage(format!("unknown dataset kind '{other}'"))),
        }
    }
}
