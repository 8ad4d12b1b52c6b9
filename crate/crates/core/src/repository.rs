//! Cognitive repository: per-attribute buckets of attribute feature vectors
//! whose prediction was confident and agreed with the annotation.
//!
//! Buckets are indexed by attribute value. For a binary attribute bucket 1
//! is the positive set and bucket 0 the negative set:
//!
//! * positive: annotation 1 and `p >= margin_pos`
//! * negative: annotation 0 and `p <= margin_neg`
//!
//! where `p` is the predicted probability of the positive value. k-way
//! attributes use the top-score rule: bucket `v` holds the vectors whose
//! annotation is `v` and whose most probable predicted value is `v`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::jafe::{AttributeScheme, Extraction};
use crate::nn::{argmax, Block, Container};

/// `(margin_pos, margin_neg)` with `margin_pos ∈ [0.5, 1)` and
/// `margin_neg ∈ (0, 0.5]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceMargins {
    positive: f64,
    negative: f64,
}

impl ConfidenceMargins {
    pub fn new(positive: f64, negative: f64) -> Result<Self> {
        if !(0.5..1.0).contains(&positive) || !(negative > 0.0 && negative <= 0.5) {
            return Err(Error::Config(format!(
                "margins ({positive}, {negative}) outside [0.5, 1) × (0, 0.5]"
            )));
        }
        Ok(Self { positive, negative })
    }

    pub fn positive(&self) -> f64 {
        self.positive
    }

    pub fn negative(&self) -> f64 {
        self.negative
    }

    /// Binary admission predicate for positive probability `p` and
    /// annotation `label`; returns the bucket the vector belongs to.
    pub fn admit(&self, p: f32, label: u32) -> Option<u32> {
        match label {
            1 if p >= self.positive as f32 => Some(1),
            0 if p <= self.negative as f32 => Some(0),
            _ => None,
        }
    }
}

impl Default for ConfidenceMargins {
    fn default() -> Self {
        Self {
            positive: 0.7,
            negative: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rule {
    Margins(ConfidenceMargins),
    /// Argmax must equal the annotation and its probability must reach
    /// `floor`.
    TopScore { floor: f64 },
}

impl Rule {
    /// Bucket for a sample with probability vector `probs` and annotation
    /// `label`, if admitted.
    pub fn admit(&self, probs: &[f32], label: u32) -> Option<u32> {
        match self {
            Rule::Margins(m) => m.admit(probs[1], label),
            Rule::TopScore { floor } => {
                let top = argmax(probs);
                (top == label as usize && probs[top] >= *floor as f32).then_some(label)
            }
        }
    }

    /// Score stored as provenance: the positive probability under margins,
    /// the annotated value's probability under the top-score rule.
    fn score(&self, probs: &[f32], label: u32) -> f32 {
        match self {
            Rule::Margins(_) => probs[1],
            Rule::TopScore { .. } => probs[label as usize],
        }
    }

    /// How strongly a sample supports its annotated side, for ranking
    /// fallback candidates.
    fn side_score(&self, probs: &[f32], label: u32) -> f32 {
        match self {
            Rule::Margins(_) if label == 0 => 1.0 - probs[1],
            Rule::Margins(_) => probs[1],
            Rule::TopScore { .. } => probs[label as usize],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    /// Index of the source sample in the dataset the repository was built
    /// from.
    pub sample: usize,
    pub score: f32,
    pub vector: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeBuckets {
    pub rule: Rule,
    pub dim: usize,
    /// Admitted entries per attribute value.
    pub buckets: Vec<Vec<Entry>>,
    /// Per value, the best-supported label-consistent entries regardless of
    /// the rule; used when a bucket is empty.
    pub fallback: Vec<Vec<Entry>>,
}

impl AttributeBuckets {
    pub fn arity(&self) -> usize {
        self.buckets.len()
    }

    pub fn positive(&self) -> &[Entry] {
        &self.buckets[1]
    }

    pub fn negative(&self) -> &[Entry] {
        &self.buckets[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RepositoryOptions {
    /// Size of the per-value fallback pools.
    pub fallback_q: usize,
    /// Minimum probability for top-score admission.
    pub topscore_floor: f64,
}

impl Default for RepositoryOptions {
    fn default() -> Self {
        Self {
            fallback_q: 10,
            topscore_floor: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CognitiveRepository {
    attributes: Vec<AttributeBuckets>,
}

/// Build with confidence margins for binary attributes. Attributes with more
/// than two values use the top-score rule.
pub fn build_repository(
    scheme: &AttributeScheme,
    extraction: &Extraction,
    annotations: &[u32],
    margins: ConfidenceMargins,
    options: RepositoryOptions,
) -> Result<CognitiveRepository> {
    let rules = scheme
        .iter()
        .map(|a| {
            if a.arity == 2 {
                Rule::Margins(margins)
            } else {
                Rule::TopScore {
                    floor: options.topscore_floor,
                }
            }
        })
        .collect::<Vec<_>>();
    CognitiveRepository::build(scheme, extraction, annotations, &rules, options.fallback_q)
}

/// Build with the top-score rule for every attribute.
pub fn build_topscore_repository(
    scheme: &AttributeScheme,
    extraction: &Extraction,
    annotations: &[u32],
    options: RepositoryOptions,
) -> Result<CognitiveRepository> {
    let rules = vec![
        Rule::TopScore {
            floor: options.topscore_floor
        };
        scheme.len()
    ];
    CognitiveRepository::build(scheme, extraction, annotations, &rules, options.fallback_q)
}

impl CognitiveRepository {
    pub fn build(
        scheme: &AttributeScheme,
        extraction: &Extraction,
        annotations: &[u32],
        rules: &[Rule],
        fallback_q: usize,
    ) -> Result<Self> {
        let m = scheme.len();
        let n = extraction.len();
        if annotations.len() != n * m || rules.len() != m || extraction.probs.len() != m {
            return Err(Error::Config(format!(
                "repository inputs disagree: {n} samples, {} annotations, {} rules, {m} attributes",
                annotations.len(),
                rules.len()
            )));
        }
        let mut attributes = Vec::with_capacity(m);
        for (a, spec) in scheme.iter().enumerate() {
            let rule = rules[a];
            let k = spec.arity;
            let mut buckets = vec![Vec::new(); k];
            let mut candidates: Vec<Vec<(f32, usize)>> = vec![Vec::new(); k];
            for j in 0..n {
                let label = annotations[j * m + a];
                if label as usize >= k {
                    return Err(Error::Config(format!("sample {j}: attribute {a} value {label} >= {k}")));
                }
                let probs = extraction.probabilities(j, a);
                let vector = || scheme.slice(extraction.representation(j), a).to_vec();
                if let Some(bucket) = rule.admit(probs, label) {
                    buckets[bucket as usize].push(Entry {
                        sample: j,
                        score: rule.score(probs, label),
                        vector: vector(),
                    });
                }
                candidates[label as usize].push((rule.side_score(probs, label), j));
            }
            let fallback = candidates
                .into_iter()
                .map(|mut c| {
                    c.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
                    c.into_iter()
                        .take(fallback_q)
                        .map(|(_, j)| {
                            let probs = extraction.probabilities(j, a);
                            let label = annotations[j * m + a];
                            Entry {
                                sample: j,
                                score: rule.score(probs, label),
                                vector: scheme.slice(extraction.representation(j), a).to_vec(),
                            }
                        })
                        .collect()
                })
                .collect();
            attributes.push(AttributeBuckets {
                rule,
                dim: spec.dim,
                buckets,
                fallback,
            });
        }
        let repo = Self { attributes };
        for (a, line) in repo.size_report().lines().enumerate().skip(1) {
            log::debug!("repository bucket {a}: {line}");
        }
        Ok(repo)
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attribute(&self, i: usize) -> &AttributeBuckets {
        &self.attributes[i]
    }

    pub fn attributes(&self) -> &[AttributeBuckets] {
        &self.attributes
    }

    pub fn dims(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| a.dim).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.attributes.iter().map(|a| a.dim).sum()
    }

    /// Bucket sizes per attribute and value.
    pub fn sizes(&self) -> Vec<Vec<usize>> {
        self.attributes
            .iter()
            .map(|a| a.buckets.iter().map(Vec::len).collect())
            .collect()
    }

    /// CSV of bucket sizes: `attribute,value,size`.
    pub fn size_report(&self) -> String {
        let mut out = String::from("attribute,value,size\n");
        for (a, sizes) in self.sizes().iter().enumerate() {
            for (v, s) in sizes.iter().enumerate() {
                let _ = writeln!(out, "{a},{v},{s}");
            }
        }
        out
    }

    /// Re-check every stored entry against the extraction it was built from.
    /// Returns a description of each violated membership predicate.
    pub fn audit(&self, scheme: &AttributeScheme, extraction: &Extraction, annotations: &[u32]) -> Vec<String> {
        let m = self.attributes.len();
        let mut problems = Vec::new();
        for (a, attr) in self.attributes.iter().enumerate() {
            for (v, bucket) in attr.buckets.iter().enumerate() {
                for e in bucket {
                    let probs = extraction.probabilities(e.sample, a);
                    let label = annotations[e.sample * m + a];
                    if attr.rule.admit(probs, label) != Some(v as u32) {
                        problems.push(format!("attribute {a} value {v}: sample {} fails the rule", e.sample));
                    }
                    if attr.rule.score(probs, label) != e.score {
                        problems.push(format!("attribute {a} value {v}: sample {} score drifted", e.sample));
                    }
                    if scheme.slice(extraction.representation(e.sample), a) != e.vector.as_slice() {
                        problems.push(format!("attribute {a} value {v}: sample {} vector differs", e.sample));
                    }
                }
            }
        }
        problems
    }

    pub fn to_container(&self, config_hash: &str) -> Container {
        let mut c = Container::new("repository");
        c.push(format!("config_hash {config_hash}"));
        c.push(format!("attributes {}", self.attributes.len()));
        for (a, attr) in self.attributes.iter().enumerate() {
            let rule = match attr.rule {
                Rule::Margins(m) => format!("rule=margins pos={} neg={}", m.positive, m.negative),
                Rule::TopScore { floor } => format!("rule=topscore floor={floor}"),
            };
            let sizes: Vec<String> = attr.buckets.iter().map(|b| b.len().to_string()).collect();
            c.push(format!(
                "attribute {a} arity={} dim={} sizes={} {rule}",
                attr.arity(),
                attr.dim,
                sizes.join(",")
            ));
            for (kind, lists) in [("bucket", &attr.buckets), ("fallback", &attr.fallback)] {
                for (v, entries) in lists.iter().enumerate() {
                    let name = format!("a{a}.v{v}.{kind}");
                    let vectors = entries.iter().flat_map(|e| e.vector.iter().copied()).collect();
                    c.blocks.push(Block::f32(format!("{name}.vectors"), vec![entries.len(), attr.dim], vectors));
                    c.blocks.push(Block::u32(
                        format!("{name}.samples"),
                        vec![entries.len()],
                        entries.iter().map(|e| e.sample as u32).collect(),
                    ));
                    c.blocks.push(Block::f32(
                        format!("{name}.scores"),
                        vec![entries.len()],
                        entries.iter().map(|e| e.score).collect(),
                    ));
                }
            }
        }
        c
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        let bad = |why: String| Error::Config(format!("repository file: {why}"));
        let lines: Vec<String> = c
            .header
            .iter()
            .filter_map(|l| l.strip_prefix("attribute ").map(str::to_string))
            .collect();
        let mut attributes = Vec::with_capacity(lines.len());
        for (a, line) in lines.iter().enumerate() {
            let w: Vec<&str> = line.split_whitespace().collect();
            let field = |key: &str| -> Result<&str> {
                w.iter()
                    .find_map(|t| crate::nn::kv(t, key))
                    .ok_or_else(|| bad(format!("attribute {a} lacks {key}")))
            };
            let num = |key: &str| -> Result<f64> { field(key)?.parse().map_err(|_| bad(format!("bad {key}"))) };
            let arity = num("arity")? as usize;
            let dim = num("dim")? as usize;
            let rule = match field("rule")? {
                "margins" => Rule::Margins(ConfidenceMargins::new(num("pos")?, num("neg")?)?),
                "topscore" => Rule::TopScore { floor: num("floor")? },
                other => return Err(bad(format!("unknown rule {other}"))),
            };
            let mut read = |kind: &str| -> Result<Vec<Vec<Entry>>> {
                (0..arity)
                    .map(|v| {
                        let name = format!("a{a}.v{v}.{kind}");
                        let vectors = c.take_block(&format!("{name}.vectors"))?.into_f32()?;
                        let samples = c.take_block(&format!("{name}.samples"))?.into_u32()?;
                        let scores = c.take_block(&format!("{name}.scores"))?.into_f32()?;
                        if samples.len() != scores.len() || vectors.len() != samples.len() * dim {
                            return Err(bad(format!("{name}: inconsistent block sizes")));
                        }
                        Ok(samples
                            .iter()
                            .zip(&scores)
                            .zip(vectors.chunks(dim.max(1)))
                            .map(|((&s, &score), v)| Entry {
                                sample: s as usize,
                                score,
                                vector: v.to_vec(),
                            })
                            .collect())
                    })
                    .collect()
            };
            let buckets = read("bucket")?;
            let fallback = read("fallback")?;
            attributes.push(AttributeBuckets {
                rule,
                dim,
                buckets,
                fallback,
            });
        }
        Ok(Self { attributes })
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        self.to_container(config_hash).write(path)
    }

    pub fn load(path: &Path) -> Result<(Self, Option<String>)> {
        let c = Container::read_kind(path, "repository")?;
        let hash = c.value("config_hash").map(str::to_string);
        Ok((Self::from_container(c)?, hash))
    }
}
