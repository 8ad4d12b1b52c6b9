//! Precomputed feature tables, attribute annotations and class splits.
//!
//! Feature files (`GPFT`): magic, `u16` version, `u64` row count, `u64`
//! width, `u64` checksum of the payload, then row-major little-endian
//! `f32`. The checksum is the first eight bytes (little-endian) of the
//! payload's SHA-256. Labels, attributes and splits are CSV files with a
//! one-line header.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::Rng;
use crate::synthesis::ClassDescription;

const MAGIC: &[u8; 4] = b"GPFT";
const VERSION: u16 = 1;
const HEADER: usize = 4 + 2 + 8 + 8 + 8;

pub fn checksum(payload: &[u8]) -> u64 {
    let digest = Sha256::digest(payload);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn features_to_bytes(dim: usize, features: &[f32]) -> Vec<u8> {
    let n = if dim == 0 { 0 } else { features.len() / dim };
    let mut payload = Vec::with_capacity(features.len() * 4);
    for v in features {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let mut out = Vec::with_capacity(HEADER + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    out.extend_from_slice(&checksum(&payload).to_le_bytes());
    out.extend(payload);
    out
}

/// Parse a feature file; returns `(rows, width, values)`.
pub fn features_from_bytes(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bad = |reason: String| Error::MalformedHeader { path: path.into(), reason };
    if bytes.len() < HEADER {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("missing GPFT magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let (n, d, expected_sum) = (word(6), word(14), word(22));
    if d == 0 {
        return Err(bad("feature width is zero".into()));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| bad(format!("{n} x {d} overflows")))?;
    let payload = &bytes[HEADER..];
    if (payload.len() as u64) < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found: payload.len() as u64,
        });
    }
    if payload.len() as u64 > expected {
        return Err(bad(format!("{} trailing bytes after the payload", payload.len() as u64 - expected)));
    }
    let actual = checksum(payload);
    if actual != expected_sum {
        return Err(Error::ChecksumMismatch {
            path: path.into(),
            expected: expected_sum,
            actual,
        });
    }
    let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((n as usize, d as usize, values))
}

pub fn write_features(path: &Path, dim: usize, features: &[f32]) -> Result<()> {
    fs::write(path, features_to_bytes(dim, features)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    features_from_bytes(&bytes, path)
}

/// `N × d` features with class labels and optional `N × m` image-level
/// attribute strengths in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
    pub attribute_names: Vec<String>,
    pub attributes: Vec<f32>,
}

impl FeatureTable {
    pub fn new(dim: usize, features: Vec<f32>, labels: Vec<usize>, attribute_names: Vec<String>, attributes: Vec<f32>) -> Result<Self> {
        let n = labels.len();
        if dim == 0 || features.len() != n * dim {
            return Err(Error::Config(format!("{} feature values for {n} rows of width {dim}", features.len())));
        }
        if attributes.len() != n * attribute_names.len() {
            return Err(Error::Config(format!(
                "{} attribute values for {n} rows × {} attributes",
                attributes.len(),
                attribute_names.len()
            )));
        }
        if let Some(v) = attributes.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("attribute value {v} outside [0, 1]")));
        }
        Ok(Self {
            dim,
            features,
            labels,
            attribute_names,
            attributes,
        })
    }

    /// Load features plus label and (optionally) attribute CSV files.
    pub fn load(features: &Path, labels: &Path, attributes: Option<&Path>) -> Result<Self> {
        let (n, dim, values) = read_features(features)?;
        let labels = read_labels(labels)?;
        if labels.len() != n {
            return Err(Error::Config(format!("{} labels for {n} feature rows", labels.len())));
        }
        let (names, attrs) = match attributes {
            Some(p) => read_attributes(p)?,
            None => (Vec::new(), Vec::new()),
        };
        Self::new(dim, values, labels, names, attrs)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn attribute_count(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn attribute_row(&self, i: usize) -> &[f32] {
        let m = self.attribute_count();
        &self.attributes[i * m..(i + 1) * m]
    }

    pub fn indices_of(&self, classes: &[usize]) -> Vec<usize> {
        let set: BTreeSet<usize> = classes.iter().copied().collect();
        (0..self.len()).filter(|&i| set.contains(&self.labels[i])).collect()
    }

    /// Dataset of the chosen rows with attributes binarized at `threshold`.
    pub fn to_dataset(&self, indices: &[usize], threshold: f32) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut attributes = Vec::with_capacity(indices.len() * self.attribute_count());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            attributes.extend(binarize_attributes(self.attribute_row(i), threshold));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(vec![self.dim], features, labels, attributes, self.attribute_count())
    }

    /// Presence descriptions of `classes` from the mean of their rows.
    pub fn class_descriptions(&self, classes: &[usize]) -> Result<Vec<ClassDescription>> {
        classes
            .iter()
            .map(|&c| {
                let rows: Vec<&[f32]> = (0..self.len()).filter(|&i| self.labels[i] == c).map(|i| self.attribute_row(i)).collect();
                let z = class_level_description(&rows).map_err(|_| Error::Usage(format!("class {c} has no rows")))?;
                Ok(ClassDescription::presence(c, &z))
            })
            .collect()
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))
}

fn csv_records(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut reader = csv_reader(path)?;
    let header = reader
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let records = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::parse(path, e.to_string()))?;
    Ok((header, records))
}

/// One class label per row under a `label` header.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let (_, records) = csv_records(path)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.get(0)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(path, format!("row {} is not a class label", i + 2)))
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut s = String::from("label\n");
    for l in labels {
        s.push_str(&format!("{l}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Attribute matrix with attribute names as header; returns names and the
/// flat values.
pub fn read_attributes(path: &Path) -> Result<(Vec<String>, Vec<f32>)> {
    let (names, records) = csv_records(path)?;
    let mut values = Vec::with_capacity(records.len() * names.len());
    for (i, r) in records.iter().enumerate() {
        if r.len() != names.len() {
            return Err(Error::parse(path, format!("row {} has {} fields, header {}", i + 2, r.len(), names.len())));
        }
        for v in r {
            values.push(v.parse::<f32>().map_err(|_| Error::parse(path, format!("row {}: '{v}' is not a number", i + 2)))?);
        }
    }
    Ok((names, values))
}

pub fn write_attributes(path: &Path, names: &[String], values: &[f32]) -> Result<()> {
    let mut s = names.join(",");
    s.push('\n');
    for row in values.chunks(names.len().max(1)) {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Mean of the image-level rows of one class, clamped to `[0, 1]`.
pub fn class_level_description(rows: &[&[f32]]) -> Result<Vec<f64>> {
    let first = rows.first().ok_or_else(|| Error::Usage("class has no annotated rows".into()))?;
    let mut z = vec![0.0f64; first.len()];
    for r in rows {
        if r.len() != z.len() {
            return Err(Error::Usage("attribute rows differ in length".into()));
        }
        for (acc, &v) in z.iter_mut().zip(r.iter()) {
            *acc += v as f64;
        }
    }
    Ok(z.into_iter().map(|s| (s / rows.len() as f64).clamp(0.0, 1.0)).collect())
}

/// `1` where the value reaches `threshold`, else `0`.
pub fn binarize_attributes(values: &[f32], threshold: f32) -> Vec<u32> {
    values.iter().map(|&v| u32::from(v >= threshold)).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitSpec {
    /// All seen classes, including the validation classes.
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    /// Seen classes held out for validating the predictor.
    pub validation: Vec<usize>,
}

impl SplitSpec {
    pub fn new(seen: Vec<usize>, unseen: Vec<usize>, validation: Vec<usize>) -> Result<Self> {
        let s: BTreeSet<_> = seen.iter().collect();
        let u: BTreeSet<_> = unseen.iter().collect();
        let v: BTreeSet<_> = validation.iter().collect();
        if s.len() != seen.len() || u.len() != unseen.len() || v.len() != validation.len() {
            return Err(Error::Config("a class is listed twice in the split".into()));
        }
        if let Some(c) = s.intersection(&u).next() {
            return Err(Error::Config(format!("class {c} is both seen and unseen")));
        }
        if let Some(c) = v.difference(&s).next() {
            return Err(Error::Config(format!("validation class {c} is not a seen class")));
        }
        Ok(Self { seen, unseen, validation })
    }

    /// Seen classes that are not held out for validation.
    pub fn training(&self) -> Vec<usize> {
        let v: BTreeSet<_> = self.validation.iter().collect();
        self.seen.iter().copied().filter(|c| !v.contains(c)).collect()
    }

    /// Draw `v` validation classes out of the seen ones.
    pub fn with_validation(mut self, v: usize, seed: u64) -> Result<Self> {
        if v > self.seen.len() {
            return Err(Error::Usage(format!("{v} validation classes requested, {} seen classes", self.seen.len())));
        }
        let mut pool = self.seen.clone();
        pool.sort_unstable();
        pool.shuffle(&mut Rng::seed_from_u64(seed));
        self.validation = pool[..v].to_vec();
        Ok(self)
    }

    /// Rows `class,role` with role `seen`, `unseen` or `validation`.
    pub fn read(path: &Path) -> Result<Self> {
        let (_, records) = csv_records(path)?;
        let mut roles: BTreeMap<usize, String> = BTreeMap::new();
        let (mut seen, mut unseen, mut validation) = (Vec::new(), Vec::new(), Vec::new());
        for (i, r) in records.iter().enumerate() {
            let class: usize = r
                .get(0)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(path, format!("row {}: bad class", i + 2)))?;
            let role = r.get(1).unwrap_or("");
            if let Some(prev) = roles.insert(class, role.to_string()) {
                return Err(Error::Config(format!("class {class} listed as both {prev} and {role}")));
            }
            match role {
                "seen" => seen.push(class),
                "unseen" => unseen.push(class),
                "validation" => {
                    seen.push(class);
                    validation.push(class);
                }
                other => return Err(Error::parse(path, format!("row {}: unknown role '{other}'", i + 2))),
            }
        }
        Self::new(seen, unseen, validation)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let v: BTreeSet<_> = self.validation.iter().collect();
        let mut s = String::from("class,role\n");
        for c in &self.seen {
            s.push_str(&format!("{c},{}\n", if v.contains(c) { "validation" } else { "seen" }));
        }
        for c in &self.unseen {
            s.push_str(&format!("{c},unseen\n"));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_counts_and_truncation() {
        let p = Path::new("mem");
        let bytes = features_to_bytes(3, &(0..12).map(|i| i as f32).collect::<Vec<_>>());
        let (n, d, v) = features_from_bytes(&bytes, p).unwrap();
        assert_eq!((n, d, v.len()), (4, 3, 12));
        assert!(matches!(features_from_bytes(&bytes[..bytes.len() - 4], p), Err(Error::Truncated { .. })));
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 1;
        assert!(matches!(features_from_bytes(&flipped, p), Err(Error::ChecksumMismatch { .. })));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(features_from_bytes(&magic, p), Err(Error::MalformedHeader { .. })));
    }

    #[test]
    fn class_description_examples() {
        let z = class_level_description(&[&[1.0, 0.0], &[1.0, 1.0]]).unwrap();
        assert_eq!(z, vec![1.0, 0.5]);
        assert_eq!(class_level_description(&[&[0.25, 0.75]]).unwrap(), vec![0.25, 0.75]);
        assert!(matches!(class_level_description(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn binarize_is_inclusive_and_idempotent() {
        assert_eq!(binarize_attributes(&[0.5, 0.49, 0.0, 1.0], 0.5), vec![1, 0, 0, 1]);
        let b: Vec<f32> = binarize_attributes(&[0.2, 0.9], 0.5).iter().map(|&v| v as f32).collect();
        assert_eq!(binarize_attributes(&b, 0.5), vec![0, 1]);
    }

    #[test]
    fn split_roles_must_be_disjoint() {
        assert!(SplitSpec::new(vec![1, 2], vec![2, 3], vec![]).is_err());
        assert!(SplitSpec::new(vec![1, 2], vec![3], vec![4]).is_err());
        let s = SplitSpec::new(vec![1, 2, 5], vec![3], vec![5]).unwrap();
        assert_eq!(s.training(), vec![1, 2]);
        assert!(matches!(s.clone().with_validation(4, 0), Err(Error::Usage(_))));
        assert_eq!(s.with_validation(3, 0).unwrap().training(), Vec::<usize>::new());
    }
}
