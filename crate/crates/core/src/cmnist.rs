//! Colored MNIST: digits painted with one of 10 background and one of 10
//! foreground colors, giving 1000 classes `100·digit + 10·background +
//! foreground`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::jafe::{AttributeScheme, AttributeSpec};
use crate::nn::{derive_seed, Rng};
use crate::synthesis::ClassDescription;

pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;
pub const CLASSES: usize = 1000;
pub const ATTRIBUTE_NAMES: [&str; 3] = ["digit", "background", "foreground"];

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;
const CMN_MAGIC: &[u8; 4] = b"CMN1";

pub type Rgb = [u8; 3];

/// Seen-class count from which splits must cover every attribute value.
pub const COVERAGE_MIN: usize = 50;

pub fn class_id(digit: u8, background: u8, foreground: u8) -> usize {
    100 * digit as usize + 10 * background as usize + foreground as usize
}

/// `(digit, background, foreground)` of a class id.
pub fn class_triple(id: usize) -> (u8, u8, u8) {
    ((id / 100) as u8, (id / 10 % 10) as u8, (id % 10) as u8)
}

/// Grayscale MNIST images and their digit labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Mnist {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Mnist {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * PIXELS..(i + 1) * PIXELS]
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_idx_images(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let bad = |reason: String| Error::MalformedHeader { path: path.into(), reason };
    if bytes.len() < 16 {
        return Err(bad("shorter than an idx3 header".into()));
    }
    if be_u32(&bytes, 0) != IMAGE_MAGIC {
        return Err(bad(format!("magic {} is not {IMAGE_MAGIC}", be_u32(&bytes, 0))));
    }
    let (n, rows, cols) = (be_u32(&bytes, 4) as usize, be_u32(&bytes, 8) as usize, be_u32(&bytes, 12) as usize);
    if rows != SIDE || cols != SIDE {
        return Err(bad(format!("images are {rows}x{cols}, not {SIDE}x{SIDE}")));
    }
    let expected = n * PIXELS;
    if bytes.len() - 16 < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected: expected as u64,
            found: (bytes.len() - 16) as u64,
        });
    }
    Ok(bytes[16..16 + expected].to_vec())
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let bad = |reason: String| Error::MalformedHeader { path: path.into(), reason };
    if bytes.len() < 8 {
        return Err(bad("shorter than an idx1 header".into()));
    }
    if be_u32(&bytes, 0) != LABEL_MAGIC {
        return Err(bad(format!("magic {} is not {LABEL_MAGIC}", be_u32(&bytes, 0))));
    }
    let n = be_u32(&bytes, 4) as usize;
    if bytes.len() - 8 < n {
        return Err(Error::Truncated {
            path: path.into(),
            expected: n as u64,
            found: (bytes.len() - 8) as u64,
        });
    }
    let labels = bytes[8..8 + n].to_vec();
    if let Some(l) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::parse(path, format!("digit label {l}")));
    }
    Ok(labels)
}

fn load_pair(dir: &Path, images: &str, labels: &str) -> Result<Mnist> {
    let mnist = Mnist {
        images: read_idx_images(&dir.join(images))?,
        labels: read_idx_labels(&dir.join(labels))?,
    };
    if mnist.images.len() != mnist.labels.len() * PIXELS {
        return Err(Error::Config(format!(
            "{} has {} images but {} has {} labels",
            images,
            mnist.images.len() / PIXELS,
            labels,
            mnist.labels.len()
        )));
    }
    Ok(mnist)
}

/// Load the standard uncompressed MNIST files from `dir`; returns
/// `(train, test)`.
pub fn load_mnist(dir: &Path) -> Result<(Mnist, Mnist)> {
    Ok((
        load_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        load_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    ))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorPalette {
    pub background: [Rgb; 10],
    pub foreground: [Rgb; 10],
}

fn distance2(a: Rgb, b: Rgb) -> u32 {
    a.iter().zip(&b).map(|(&x, &y)| (x as i32 - y as i32).pow(2) as u32).sum()
}

impl ColorPalette {
    /// 20 well separated colors: greedy farthest-point selection from random
    /// candidates, shuffled and split into background and foreground.
    pub fn generate(seed: u64) -> Self {
        let mut rng = Rng::seed_from_u64(derive_seed(seed, 0xC010));
        let candidates: Vec<Rgb> = (0..4096).map(|_| rng.gen()).collect();
        let mut chosen = vec![candidates[0]];
        let mut nearest: Vec<u32> = candidates.iter().map(|&c| distance2(c, candidates[0])).collect();
        while chosen.len() < 20 {
            let far = (0..candidates.len()).max_by_key(|&i| (nearest[i], std::cmp::Reverse(i))).unwrap();
            let c = candidates[far];
            chosen.push(c);
            for (n, &x) in nearest.iter_mut().zip(&candidates) {
                *n = (*n).min(distance2(x, c));
            }
        }
        chosen.shuffle(&mut rng);
        Self {
            background: chosen[..10].try_into().unwrap(),
            foreground: chosen[10..].try_into().unwrap(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all: Vec<Rgb> = self.background.iter().chain(&self.foreground).copied().collect();
        for i in 0..all.len() {
            if all[i + 1..].contains(&all[i]) {
                return Err(Error::Config(format!("palette color {:?} appears twice", all[i])));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (role, colors) in [("background", &self.background), ("foreground", &self.foreground)] {
            for (i, c) in colors.iter().enumerate() {
                let _ = writeln!(s, "{role} {i} {} {} {}", c[0], c[1], c[2]);
            }
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut palette = Self {
            background: [[0; 3]; 10],
            foreground: [[0; 3]; 10],
        };
        let mut seen = [[false; 10]; 2];
        for line in text.lines() {
            let w: Vec<&str> = line.split_whitespace().collect();
            let role = match w.first() {
                Some(&"background") => 0,
                Some(&"foreground") => 1,
                _ => continue,
            };
            let nums = w[1..]
                .iter()
                .map(|t| t.parse::<u8>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(path, format!("bad palette line '{line}'")))?;
            if nums.len() != 4 || nums[0] > 9 {
                return Err(Error::parse(path, format!("bad palette line '{line}'")));
            }
            let slot = if role == 0 { &mut palette.background } else { &mut palette.foreground };
            slot[nums[0] as usize] = [nums[1], nums[2], nums[3]];
            seen[role][nums[0] as usize] = true;
        }
        if seen.iter().flatten().any(|s| !s) {
            return Err(Error::parse(path, "palette lists fewer than 10+10 colors"));
        }
        palette.validate()?;
        Ok(palette)
    }
}

/// Blend one channel: intensity 0 gives the background, 255 the
/// foreground, rounded to the nearest 8-bit value.
pub fn blend(intensity: u8, foreground: u8, background: u8) -> u8 {
    let i = intensity as u32;
    ((i * foreground as u32 + (255 - i) * background as u32 + 127) / 255) as u8
}

/// Colored images in channel-major `3×28×28` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CMnist {
    pub images: Vec<u8>,
    pub digits: Vec<u8>,
    pub backgrounds: Vec<u8>,
    pub foregrounds: Vec<u8>,
}

pub const IMAGE_BYTES: usize = 3 * PIXELS;

impl CMnist {
    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]
    }

    pub fn class_of(&self, i: usize) -> usize {
        class_id(self.digits[i], self.backgrounds[i], self.foregrounds[i])
    }

    /// Indices of the samples whose class is in `classes`, in order.
    pub fn indices_of(&self, classes: &[usize]) -> Vec<usize> {
        let mut member = vec![false; CLASSES];
        for &c in classes {
            member[c] = true;
        }
        (0..self.len()).filter(|&i| member[self.class_of(i)]).collect()
    }

    /// Float dataset (values scaled to `[0, 1]`) of the chosen samples, with
    /// class-id labels and `(digit, background, foreground)` annotations.
    pub fn to_dataset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * IMAGE_BYTES);
        let mut labels = Vec::with_capacity(indices.len());
        let mut attributes = Vec::with_capacity(indices.len() * 3);
        for &i in indices {
            features.extend(self.image(i).iter().map(|&v| v as f32 / 255.0));
            labels.push(self.class_of(i));
            attributes.extend([self.digits[i] as u32, self.backgrounds[i] as u32, self.foregrounds[i] as u32]);
        }
        Dataset::new(vec![3, SIDE, SIDE], features, labels, attributes, 3)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.len() * (3 + IMAGE_BYTES));
        out.extend_from_slice(CMN_MAGIC);
        for v in [1u32, self.len() as u32, 3, SIDE as u32, SIDE as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for i in 0..self.len() {
            out.extend([self.digits[i], self.backgrounds[i], self.foregrounds[i]]);
            out.extend_from_slice(self.image(i));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::MalformedHeader { path: path.into(), reason };
        if bytes.len() < 24 || &bytes[..4] != CMN_MAGIC {
            return Err(bad("missing CMN1 magic".into()));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
        if word(0) != 1 {
            return Err(bad(format!("unsupported version {}", word(0))));
        }
        if (word(2), word(3), word(4)) != (3, SIDE as u32, SIDE as u32) {
            return Err(bad("image shape is not 3x28x28".into()));
        }
        let n = word(1) as usize;
        let record = 3 + IMAGE_BYTES;
        let body = &bytes[24..];
        if body.len() < n * record {
            return Err(Error::Truncated {
                path: path.into(),
                expected: (n * record) as u64,
                found: body.len() as u64,
            });
        }
        let mut set = CMnist {
            images: Vec::with_capacity(n * IMAGE_BYTES),
            digits: Vec::with_capacity(n),
            backgrounds: Vec::with_capacity(n),
            foregrounds: Vec::with_capacity(n),
        };
        for r in body[..n * record].chunks(record) {
            if r[..3].iter().any(|&v| v > 9) {
                return Err(Error::parse(path, format!("attribute triple {:?} out of range", &r[..3])));
            }
            set.digits.push(r[0]);
            set.backgrounds.push(r[1]);
            set.foregrounds.push(r[2]);
            set.images.extend_from_slice(&r[3..]);
        }
        Ok(set)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

fn colorize(source: &Mnist, palette: &ColorPalette, rng: &mut Rng) -> CMnist {
    let n = source.len();
    let mut set = CMnist {
        images: Vec::with_capacity(n * IMAGE_BYTES),
        digits: source.labels.clone(),
        backgrounds: Vec::with_capacity(n),
        foregrounds: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (b, f) = (rng.gen_range(0..10u8), rng.gen_range(0..10u8));
        let (bg, fg) = (palette.background[b as usize], palette.foreground[f as usize]);
        for c in 0..3 {
            set.images.extend(source.image(i).iter().map(|&v| blend(v, fg[c], bg[c])));
        }
        set.backgrounds.push(b);
        set.foregrounds.push(f);
    }
    set
}

/// Colorize the train and test splits; each image gets a uniformly drawn
/// `(background, foreground)` pair.
pub fn generate(train: &Mnist, test: &Mnist, palette: &ColorPalette, seed: u64) -> Result<(CMnist, CMnist)> {
    palette.validate()?;
    let mut train_rng = Rng::seed_from_u64(derive_seed(seed, 0xC011));
    let mut test_rng = Rng::seed_from_u64(derive_seed(seed, 0xC012));
    Ok((colorize(train, palette, &mut train_rng), colorize(test, palette, &mut test_rng)))
}

/// Dataset metadata: seed and palette, one item per line.
pub fn metadata_text(palette: &ColorPalette, seed: u64) -> String {
    format!("seed {seed}\n{}", palette.to_text())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassSplit {
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
}

fn covers_all_values(classes: &[usize]) -> bool {
    let mut hit = [[false; 10]; 3];
    for &c in classes {
        let (d, b, f) = class_triple(c);
        hit[0][d as usize] = true;
        hit[1][b as usize] = true;
        hit[2][f as usize] = true;
    }
    hit.iter().flatten().all(|&h| h)
}

/// Random seen/unseen split of the 1000 classes. `n_unseen` defaults to all
/// remaining classes. With at least `COVERAGE_MIN` seen classes the seen set is
/// guaranteed to contain every digit and color value; otherwise the split
/// is redrawn under a derived seed.
pub fn make_split(n_seen: usize, n_unseen: Option<usize>, seed: u64) -> Result<ClassSplit> {
    if n_seen == 0 || n_seen > CLASSES {
        return Err(Error::Usage(format!("seen class count {n_seen} outside 1..={CLASSES}")));
    }
    let n_unseen = n_unseen.unwrap_or(CLASSES - n_seen);
    if n_seen + n_unseen > CLASSES {
        return Err(Error::Usage(format!("{n_seen} seen + {n_unseen} unseen classes exceed {CLASSES}")));
    }
    for attempt in 0..1000u64 {
        let mut rng = Rng::seed_from_u64(derive_seed(seed, attempt));
        let mut ids: Vec<usize> = (0..CLASSES).collect();
        ids.shuffle(&mut rng);
        let seen = ids[..n_seen].to_vec();
        if n_seen >= COVERAGE_MIN && !covers_all_values(&seen) {
            log::debug!("split attempt {attempt} misses an attribute value, redrawing");
            continue;
        }
        let unseen = ids[n_seen..n_seen + n_unseen].to_vec();
        return Ok(ClassSplit { seen, unseen });
    }
    Err(Error::Usage(format!("no covering split of {n_seen} seen classes found")))
}

/// Three 10-way attributes with `dim`-dimensional feature vectors.
pub fn scheme(dim: usize) -> Result<AttributeScheme> {
    AttributeScheme::new(
        ATTRIBUTE_NAMES
            .iter()
            .map(|n| AttributeSpec {
                name: n.to_string(),
                arity: 10,
                weight: 1.0,
                dim,
            })
            .collect(),
    )
}

/// Exact one-hot description of a class.
pub fn description(class: usize) -> ClassDescription {
    let (d, b, f) = class_triple(class);
    ClassDescription::one_hot(class, &[d as usize, b as usize, f as usize], &[10, 10, 10])
}
