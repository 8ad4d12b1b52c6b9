//! Pseudo feature representations for classes without training images.
//!
//! For every draw and attribute `i`, a uniform `ε ∈ (0, 1)` selects the
//! positive bucket when `ε <= z_i` and the negative bucket otherwise; one
//! vector is then picked uniformly (with replacement) from that bucket. A
//! categorical description first samples a value, then a vector from that
//! value's bucket. The picked sub-vectors are concatenated in attribute
//! order.
//!
//! Each class draws from its own ChaCha8 stream (stream id = class label)
//! under the master seed, so a class's pseudo set does not depend on which
//! other classes are synthesized alongside it.

use std::path::Path;

use rand::distributions::Open01;
use rand::{Rng as _, SeedableRng};

use crate::error::{Error, Result};
use crate::nn::{Block, Container, Rng};
use crate::repository::{CognitiveRepository, Entry};

#[derive(Clone, Debug, PartialEq)]
pub enum AttributeDescription {
    /// Probability that a binary attribute is present.
    Presence(f64),
    /// Distribution over the values of an attribute.
    Distribution(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassDescription {
    pub label: usize,
    pub attributes: Vec<AttributeDescription>,
}

impl ClassDescription {
    pub fn presence(label: usize, z: &[f64]) -> Self {
        Self {
            label,
            attributes: z.iter().map(|&p| AttributeDescription::Presence(p)).collect(),
        }
    }

    /// Exact description: each attribute takes one known value.
    pub fn one_hot(label: usize, values: &[usize], arities: &[usize]) -> Self {
        Self {
            label,
            attributes: values
                .iter()
                .zip(arities)
                .map(|(&v, &k)| {
                    let mut row = vec![0.0; k];
                    row[v] = 1.0;
                    AttributeDescription::Distribution(row)
                })
                .collect(),
        }
    }

    pub fn validate(&self, arities: &[usize]) -> Result<()> {
        let bad = |why: String| Err(Error::Config(format!("class {} description: {why}", self.label)));
        if self.attributes.len() != arities.len() {
            return bad(format!("{} entries for {} attributes", self.attributes.len(), arities.len()));
        }
        for (i, (d, &k)) in self.attributes.iter().zip(arities).enumerate() {
            match d {
                AttributeDescription::Presence(p) => {
                    if k != 2 {
                        return bad(format!("presence given for {k}-way attribute {i}"));
                    }
                    if !(0.0..=1.0).contains(p) {
                        return bad(format!("attribute {i} probability {p} outside [0, 1]"));
                    }
                }
                AttributeDescription::Distribution(row) => {
                    if row.len() != k {
                        return bad(format!("attribute {i} row has {} values, arity {k}", row.len()));
                    }
                    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                        return bad(format!("attribute {i} row has entries outside [0, 1]"));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-6 {
                        return bad(format!("attribute {i} row sums to {sum}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Values with nonzero probability for attribute `i`.
    fn needed_values(&self, i: usize) -> Vec<usize> {
        match &self.attributes[i] {
            AttributeDescription::Presence(p) => {
                let mut v = Vec::new();
                if *p < 1.0 {
                    v.push(0);
                }
                if *p > 0.0 {
                    v.push(1);
                }
                v
            }
            AttributeDescription::Distribution(row) => (0..row.len()).filter(|&v| row[v] > 0.0).collect(),
        }
    }
}

/// Labeled synthetic representations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PseudoSet {
    pub dim: usize,
    /// `len × dim`, grouped by class in request order.
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
    pub per_class: usize,
    pub seed: u64,
}

impl PseudoSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn representation(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_container(&self, config_hash: &str) -> Container {
        let mut c = Container::new("pseudo");
        c.push(format!("config_hash {config_hash}"));
        c.push(format!("per_class {}", self.per_class));
        c.push(format!("seed {}", self.seed));
        c.blocks.push(Block::f32("features", vec![self.len(), self.dim], self.features.clone()));
        c.blocks.push(Block::u32(
            "labels",
            vec![self.len()],
            self.labels.iter().map(|&l| l as u32).collect(),
        ));
        c
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        let num = |key: &str| -> Result<u64> {
            c.value(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("pseudo file lacks {key}")))
        };
        let per_class = num("per_class")? as usize;
        let seed = num("seed")?;
        let features = c.take_block("features")?;
        let dim = features.dims.get(1).copied().unwrap_or(0);
        let features = features.into_f32()?;
        let labels = c.take_block("labels")?.into_u32()?.into_iter().map(|l| l as usize).collect();
        Ok(Self {
            dim,
            features,
            labels,
            per_class,
            seed,
        })
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        self.to_container(config_hash).write(path)
    }
}

/// Resolve, per attribute and value, the entries a draw may pick from.
fn resolve<'r>(repo: &'r CognitiveRepository, desc: &ClassDescription) -> Result<Vec<Vec<&'r [Entry]>>> {
    let mut pools = Vec::with_capacity(repo.len());
    for (i, attr) in repo.attributes().iter().enumerate() {
        let mut per_value: Vec<&[Entry]> = vec![&[]; attr.arity()];
        for v in desc.needed_values(i) {
            per_value[v] = if !attr.buckets[v].is_empty() {
                &attr.buckets[v]
            } else if !attr.fallback[v].is_empty() {
                log::warn!(
                    "class {}: attribute {i} value {v} bucket is empty, using {} fallback vectors",
                    desc.label,
                    attr.fallback[v].len()
                );
                &attr.fallback[v]
            } else {
                return Err(Error::Synthesis {
                    attribute: i,
                    class: desc.label,
                });
            };
        }
        pools.push(per_value);
    }
    Ok(pools)
}

/// Generate `n` pseudo representations for one class.
pub fn synthesize_class(repo: &CognitiveRepository, desc: &ClassDescription, n: usize, seed: u64) -> Result<PseudoSet> {
    let arities: Vec<usize> = repo.attributes().iter().map(|a| a.arity()).collect();
    desc.validate(&arities)?;
    let pools = resolve(repo, desc)?;
    let dim = repo.total_dim();
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(desc.label as u64);
    let mut features = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for (i, d) in desc.attributes.iter().enumerate() {
            let value = match d {
                AttributeDescription::Presence(z) => {
                    let eps: f64 = rng.sample(Open01);
                    usize::from(eps <= *z)
                }
                AttributeDescription::Distribution(row) => sample_value(row, &mut rng),
            };
            let pool = pools[i][value];
            let pick = &pool[rng.gen_range(0..pool.len())];
            features.extend_from_slice(&pick.vector);
        }
    }
    Ok(PseudoSet {
        dim,
        features,
        labels: vec![desc.label; n],
        per_class: n,
        seed,
    })
}

fn sample_value(row: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = 0;
    for (v, &p) in row.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = v;
            if u < cum {
                return v;
            }
        }
    }
    last
}

/// Generate `n` pseudo representations for each described class, in the
/// order given.
pub fn synthesize_all(repo: &CognitiveRepository, descriptions: &[ClassDescription], n: usize, seed: u64) -> Result<PseudoSet> {
    let mut out = PseudoSet {
        dim: repo.total_dim(),
        per_class: n,
        seed,
        ..Default::default()
    };
    for desc in descriptions {
        let part = synthesize_class(repo, desc, n, seed)?;
        out.features.extend(part.features);
        out.labels.extend(part.labels);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jafe::{AttributeScheme, Extraction};
    use crate::repository::{build_repository, ConfidenceMargins, RepositoryOptions};

    /// Two binary attributes with dim 1; sample j has representation
    /// (j, 100 + j) so every sub-vector identifies its source.
    fn repo(n: usize) -> CognitiveRepository {
        let scheme = AttributeScheme::binary(2, 1.0, 1).unwrap();
        let combined = (0..n).flat_map(|j| [j as f32, 100.0 + j as f32]).collect();
        let labels: Vec<u32> = (0..n).flat_map(|j| [(j % 2) as u32, ((j / 2) % 2) as u32]).collect();
        let probs = (0..2)
            .map(|a| {
                (0..n)
                    .flat_map(|j| if labels[j * 2 + a] == 1 { [0.05, 0.95] } else { [0.95, 0.05] })
                    .collect()
            })
            .collect();
        let ext = Extraction { dim: 2, combined, probs, arities: vec![2, 2] };
        build_repository(&scheme, &ext, &labels, ConfidenceMargins::default(), RepositoryOptions::default()).unwrap()
    }

    #[test]
    fn extreme_descriptions_pick_one_side() {
        let r = repo(8);
        let all = synthesize_class(&r, &ClassDescription::presence(3, &[1.0, 1.0]), 200, 1).unwrap();
        let none = synthesize_class(&r, &ClassDescription::presence(3, &[0.0, 0.0]), 200, 1).unwrap();
        for i in 0..200 {
            let h = all.representation(i);
            assert_eq!(h[0] as usize % 2, 1);
            assert_eq!((h[1] as usize - 100) / 2 % 2, 1);
            let h = none.representation(i);
            assert_eq!(h[0] as usize % 2, 0);
            assert_eq!((h[1] as usize - 100) / 2 % 2, 0);
        }
    }

    #[test]
    fn classes_do_not_perturb_each_other() {
        let r = repo(8);
        let a = ClassDescription::presence(1, &[0.3, 0.6]);
        let b = ClassDescription::presence(2, &[0.9, 0.1]);
        let both = synthesize_all(&r, &[a.clone(), b.clone()], 50, 7).unwrap();
        let only_b = synthesize_all(&r, &[b], 50, 7).unwrap();
        assert_eq!(&both.features[50 * 2..], only_b.features.as_slice());
        assert_eq!(both.len(), 100);
        assert_eq!(synthesize_all(&r, &[a.clone()], 50, 7).unwrap().features, both.features[..100].to_vec());
    }

    #[test]
    fn empty_side_is_a_synthesis_error() {
        // only positive samples for attribute 0: negative side has no vectors at all
        let scheme = AttributeScheme::binary(1, 1.0, 1).unwrap();
        let ext = Extraction { dim: 1, combined: vec![0.0, 1.0], probs: vec![vec![0.1, 0.9, 0.2, 0.8]], arities: vec![2] };
        let r = build_repository(&scheme, &ext, &[1, 1], ConfidenceMargins::default(), RepositoryOptions::default()).unwrap();
        let err = synthesize_class(&r, &ClassDescription::presence(9, &[0.5]), 10, 0).unwrap_err();
        assert!(matches!(err, Error::Synthesis { attribute: 0, class: 9 }));
        assert!(synthesize_class(&r, &ClassDescription::presence(9, &[1.0]), 10, 0).is_ok());
    }

    #[test]
    fn empty_bucket_falls_back_to_best_label_side() {
        let scheme = AttributeScheme::binary(1, 1.0, 1).unwrap();
        // negatives exist but none clears the margin
        let ext = Extraction { dim: 1, combined: vec![0.0, 1.0, 2.0], probs: vec![vec![0.1, 0.9, 0.6, 0.4, 0.55, 0.45]], arities: vec![2] };
        let opts = RepositoryOptions { fallback_q: 1, topscore_floor: 0.0 };
        let r = build_repository(&scheme, &ext, &[1, 0, 0], ConfidenceMargins::default(), opts).unwrap();
        assert!(r.attribute(0).negative().is_empty());
        let set = synthesize_class(&r, &ClassDescription::presence(0, &[0.0]), 20, 0).unwrap();
        assert!(set.features.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn invalid_descriptions_are_rejected() {
        let r = repo(4);
        assert!(synthesize_class(&r, &ClassDescription::presence(0, &[1.2, 0.0]), 1, 0).is_err());
        assert!(synthesize_class(&r, &ClassDescription::presence(0, &[0.5]), 1, 0).is_err());
        let skewed = ClassDescription {
            label: 0,
            attributes: vec![AttributeDescription::Distribution(vec![0.5, 0.6]), AttributeDescription::Presence(0.5)],
        };
        assert!(synthesize_class(&r, &skewed, 1, 0).is_err());
    }

    #[test]
    fn container_round_trip() {
        let r = repo(6);
        let set = synthesize_all(&r, &[ClassDescription::presence(4, &[0.5, 0.5])], 5, 3).unwrap();
        let back = Container::from_bytes(&set.to_container("x").to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(PseudoSet::from_container(back).unwrap(), set);
    }
}
