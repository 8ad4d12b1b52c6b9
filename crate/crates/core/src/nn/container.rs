//! Self-describing binary container shared by model checkpoints, cognitive
//! repositories and pseudo sets.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"GPFR" | u16 version | u32 manifest length | manifest (UTF-8 lines) | payload
//! ```
//!
//! Manifest lines starting with `block <name> <dtype> <dims>` declare payload
//! blocks in order; `dtype` is `f32` or `u32`, `dims` is `AxBxC`. Every other
//! line is free-form metadata owned by the writer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::sequential::{join_dims, parse_dims};
use super::Tensor;

pub const MAGIC: &[u8; 4] = b"GPFR";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum BlockData {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: BlockData,
}

impl Block {
    pub fn f32(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            dims,
            data: BlockData::F32(data),
        }
    }

    pub fn u32(name: impl Into<String>, dims: Vec<usize>, data: Vec<u32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            dims,
            data: BlockData::U32(data),
        }
    }

    pub fn tensor(name: impl Into<String>, t: &Tensor<f32>) -> Self {
        Self::f32(name, t.shape().to_vec(), t.data().to_vec())
    }

    pub fn into_tensor(self) -> Result<Tensor<f32>> {
        match self.data {
            BlockData::F32(v) => Tensor::new(self.dims, v),
            BlockData::U32(_) => Err(Error::Config(format!("block {} is not f32", self.name))),
        }
    }

    pub fn into_f32(self) -> Result<Vec<f32>> {
        match self.data {
            BlockData::F32(v) => Ok(v),
            BlockData::U32(_) => Err(Error::Config(format!("block {} is not f32", self.name))),
        }
    }

    pub fn into_u32(self) -> Result<Vec<u32>> {
        match self.data {
            BlockData::U32(v) => Ok(v),
            BlockData::F32(_) => Err(Error::Config(format!("block {} is not u32", self.name))),
        }
    }

    fn dtype(&self) -> &'static str {
        match self.data {
            BlockData::F32(_) => "f32",
            BlockData::U32(_) => "u32",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub header: Vec<String>,
    pub blocks: Vec<Block>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Self {
            header: vec![format!("kind {kind}")],
            blocks: Vec::new(),
        }
    }

    pub fn kind(&self) -> Option<&str> {
        self.value("kind")
    }

    /// First header line of the form `key rest`; returns `rest`.
    pub fn value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
    }

    pub fn push(&mut self, line: impl Into<String>) {
        self.header.push(line.into());
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        for line in &self.header {
            manifest.push_str(line);
            manifest.push('\n');
        }
        for b in &self.blocks {
            manifest.push_str(&format!("block {} {} {}\n", b.name, b.dtype(), join_dims(&b.dims)));
        }
        let mut out = Vec::with_capacity(10 + manifest.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for b in &self.blocks {
            match &b.data {
                BlockData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                BlockData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let malformed = |reason: &str| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(malformed("missing GPFR magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(malformed(&format!("unsupported version {version}")));
        }
        let mlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let manifest = bytes
            .get(10..10 + mlen)
            .ok_or_else(|| malformed("manifest runs past end of file"))?;
        let manifest = std::str::from_utf8(manifest).map_err(|_| malformed("manifest is not UTF-8"))?;
        let mut header = Vec::new();
        let mut decls = Vec::new();
        for line in manifest.lines() {
            match line.strip_prefix("block ") {
                Some(rest) => {
                    let w: Vec<&str> = rest.split_whitespace().collect();
                    let [name, dtype, dims] = w[..] else {
                        return Err(malformed(&format!("bad block line '{line}'")));
                    };
                    let dims = parse_dims(dims).ok_or_else(|| malformed(&format!("bad dims in '{line}'")))?;
                    if dtype != "f32" && dtype != "u32" {
                        return Err(malformed(&format!("unknown dtype {dtype}")));
                    }
                    decls.push((name.to_string(), dtype == "f32", dims));
                }
                None => header.push(line.to_string()),
            }
        }
        let payload = &bytes[10 + mlen..];
        let expected: u64 = decls
            .iter()
            .map(|(_, _, d)| 4 * d.iter().product::<usize>() as u64)
            .sum();
        if payload.len() as u64 != expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found: payload.len() as u64,
            });
        }
        let mut at = 0;
        let mut blocks = Vec::with_capacity(decls.len());
        for (name, is_f32, dims) in decls {
            let n: usize = dims.iter().product();
            let words = payload[at..at + 4 * n].chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
            let data = if is_f32 {
                BlockData::F32(words.map(f32::from_le_bytes).collect())
            } else {
                BlockData::U32(words.map(u32::from_le_bytes).collect())
            };
            at += 4 * n;
            blocks.push(Block { name, dims, data });
        }
        Ok(Self { header, blocks })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Read and require a specific `kind`.
    pub fn read_kind(path: &Path, kind: &str) -> Result<Self> {
        let c = Self::read(path)?;
        if c.kind() != Some(kind) {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                reason: format!("expected a {kind} file, found {:?}", c.kind()),
            });
        }
        Ok(c)
    }

    pub fn take_block(&mut self, name: &str) -> Result<Block> {
        let pos = self
            .blocks
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::Config(format!("missing block {name}")))?;
        Ok(self.blocks.remove(pos))
    }
}
