//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "STCK"  u32 version
//! u32 metadata byte length, then UTF-8 lines `key=value\n`
//!         (`\\`, `\n` and `\=` escaped inside keys and values)
//! u32 entry count, then per entry:
//!   u32 name length, name bytes, u8 dtype (1 = f32, 2 = f64),
//!   u8 rank, rank × u64 dims, raw values
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::autodiff::{Adam, AdamConfig, Parameters, Real, Tensor};
use crate::error::{invalid, Error, Result};
use crate::model::SelfTimeModel;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const OPTIM_M: &str = "optim.m.";
const OPTIM_V: &str = "optim.v.";

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    fn dtype(&self) -> u8 {
        match self {
            ArrayData::F32(_) => f32::DTYPE,
            ArrayData::F64(_) => f64::DTYPE,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values in `F`, exact when `F` matches the stored type.
    pub fn to_vec<F: Real>(&self) -> Vec<F> {
        match self {
            ArrayData::F32(v) => v.iter().map(|&x| F::lit(x as f64)).collect(),
            ArrayData::F64(v) => v.iter().map(|&x| F::lit(x)).collect(),
        }
    }

    fn from_slice<F: Real>(v: &[F]) -> Self {
        if F::DTYPE == f32::DTYPE {
            ArrayData::F32(v.iter().map(|x| x.as_f64() as f32).collect())
        } else {
            ArrayData::F64(v.iter().map(|x| x.as_f64()).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

/// Named arrays plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelCheckpoint {
    pub metadata: BTreeMap<String, String>,
    pub entries: Vec<CheckpointEntry>,
}

impl ModelCheckpoint {
    /// Every tensor of `model` (parameters and running statistics).
    pub fn from_model<F: Real>(model: &SelfTimeModel<F>) -> Self {
        let mut ckpt = Self::default();
        model.visit("", &mut |name, t| {
            ckpt.push(name, t.shape().to_vec(), ArrayData::from_slice(t.data()))
        });
        ckpt.metadata.insert("architecture".into(), ARCHITECTURE.into());
        ckpt.metadata.insert("C".into(), model.class_count.to_string());
        ckpt
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: ArrayData) {
        self.entries.push(CheckpointEntry {
            name: name.into(),
            dims,
            data,
        });
    }

    pub fn entry(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    /// Parses a numeric metadata value.
    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.meta(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Format(format!("metadata `{key}` has invalid value `{v}`")))
            })
            .transpose()
    }

    /// Rebuilds the model; every model tensor must be present with its shape.
    pub fn to_model<F: Real>(&self) -> Result<SelfTimeModel<F>> {
        if let Some(arch) = self.meta("architecture") {
            if arch != ARCHITECTURE {
                return Err(Error::Format(format!(
                    "checkpoint holds a `{arch}` model, expected `{ARCHITECTURE}`"
                )));
            }
        }
        let classes = self
            .meta_parse::<usize>("C")?
            .or_else(|| self.entry("head_intra.fc2.bias").map(|e| e.data.len()))
            .ok_or_else(|| Error::Format("checkpoint does not record the relation class count".into()))?;
        let mut model = SelfTimeModel::<F>::new(classes, 0)?;
        let mut result = Ok(());
        model.visit_mut("", &mut |name, t| {
            if result.is_err() {
                return;
            }
            result = match self.entry(&name) {
                None => Err(Error::Format(format!("checkpoint is missing `{name}`"))),
                Some(e) if e.dims != t.shape() => Err(Error::Format(format!(
                    "`{name}` has shape {:?} in the checkpoint, model expects {:?}",
                    e.dims,
                    t.shape()
                ))),
                Some(e) => {
                    t.data_mut().copy_from_slice(&e.data.to_vec::<F>());
                    Ok(())
                }
            };
        });
        result.map(|_| model)
    }

    /// Adds Adam moments and step count.
    pub fn store_optimizer<F: Real>(&mut self, adam: &Adam<F>) {
        self.entries
            .retain(|e| !e.name.starts_with(OPTIM_M) && !e.name.starts_with(OPTIM_V));
        for (prefix, map) in [(OPTIM_M, &adam.m), (OPTIM_V, &adam.v)] {
            for (name, v) in map {
                self.push(format!("{prefix}{name}"), vec![v.len()], ArrayData::from_slice(v));
            }
        }
        self.set_meta("optim.step", adam.step_count);
        self.set_meta("optim.lr", adam.config.lr);
    }

    /// Adam state saved by [`ModelCheckpoint::store_optimizer`], if any.
    pub fn optimizer<F: Real>(&self, config: AdamConfig) -> Result<Option<Adam<F>>> {
        let Some(step) = self.meta_parse::<u64>("optim.step")? else {
            return Ok(None);
        };
        let mut adam = Adam::new(config);
        adam.step_count = step;
        for e in &self.entries {
            if let Some(name) = e.name.strip_prefix(OPTIM_M) {
                adam.m.insert(name.to_string(), e.data.to_vec());
            } else if let Some(name) = e.name.strip_prefix(OPTIM_V) {
                adam.v.insert(name.to_string(), e.data.to_vec());
            }
        }
        Ok(Some(adam))
    }

    /// Bytes as written by [`save_checkpoint`].
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            if k.is_empty() {
                return Err(invalid!("empty metadata key"));
            }
            meta.push_str(&escape(k));
            meta.push('=');
            meta.push_str(&escape(v));
            meta.push('\n');
        }
        put_u32(&mut out, meta.len(), "metadata")?;
        out.extend_from_slice(meta.as_bytes());
        put_u32(&mut out, self.entries.len(), "entry count")?;
        for e in &self.entries {
            let numel: usize = e.dims.iter().product();
            if numel != e.data.len() {
                return Err(invalid!(
                    "entry `{}` has dims {:?} but {} values",
                    e.name,
                    e.dims,
                    e.data.len()
                ));
            }
            put_u32(&mut out, e.name.len(), "entry name")?;
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.data.dtype());
            out.push(u8::try_from(e.dims.len()).map_err(|_| invalid!("entry `{}` has too many dims", e.name))?);
            for &d in &e.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &e.data {
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r
            .take(4)
            .ok_or_else(|| Error::Format("file too short for a checkpoint header".into()))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(magic),
                "STCK"
            )));
        }
        let header = |what: &str| Error::Corrupt {
            entry: "<header>".into(),
            message: format!("truncated {what}"),
        };
        let version = r.u32().ok_or_else(|| header("version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let meta_len = r.u32().ok_or_else(|| header("metadata length"))? as usize;
        let meta = r.take(meta_len).ok_or_else(|| header("metadata"))?;
        let meta = std::str::from_utf8(meta).map_err(|_| header("metadata text"))?;
        let mut metadata = BTreeMap::new();
        for line in meta.lines() {
            let (k, v) = split_unescaped(line).ok_or_else(|| Error::Corrupt {
                entry: "<metadata>".into(),
                message: format!("line `{line}` is not key=value"),
            })?;
            metadata.insert(unescape(k), unescape(v));
        }
        let count = r.u32().ok_or_else(|| header("entry count"))?;
        let mut entries = Vec::with_capacity(count.min(1 << 16) as usize);
        for i in 0..count {
            let unnamed = format!("#{i}");
            let corrupt = |entry: &str, message: &str| Error::Corrupt {
                entry: entry.to_string(),
                message: message.to_string(),
            };
            let name_len = r.u32().ok_or_else(|| corrupt(&unnamed, "truncated name length"))? as usize;
            let name = r.take(name_len).ok_or_else(|| corrupt(&unnamed, "truncated name"))?;
            let name = String::from_utf8(name.to_vec()).map_err(|_| corrupt(&unnamed, "name is not UTF-8"))?;
            let dtype = r.u8().ok_or_else(|| corrupt(&name, "truncated dtype"))?;
            let rank = r.u8().ok_or_else(|| corrupt(&name, "truncated rank"))?;
            let mut dims = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                let d = r.u64().ok_or_else(|| corrupt(&name, "truncated dims"))?;
                dims.push(usize::try_from(d).map_err(|_| corrupt(&name, "dimension too large"))?);
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| corrupt(&name, "element count overflows"))?;
            let width = match dtype {
                1 => 4,
                2 => 8,
                other => return Err(corrupt(&name, &format!("unknown dtype code {other}"))),
            };
            let raw = numel
                .checked_mul(width)
                .and_then(|n| r.take(n))
                .ok_or_else(|| corrupt(&name, &format!("truncated values: expected {numel} elements")))?;
            let data = if width == 4 {
                ArrayData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            } else {
                ArrayData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            };
            entries.push(CheckpointEntry { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last entry",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { metadata, entries })
    }

    /// The tensors of one named entry as a graph tensor.
    pub fn tensor<F: Real>(&self, name: &str) -> Option<Tensor<F>> {
        self.entry(name)
            .and_then(|e| Tensor::new(e.dims.clone(), e.data.to_vec()).ok())
    }
}

/// Architecture tag stored in every checkpoint.
pub const ARCHITECTURE: &str = "selftime-cnn4-64";

fn put_u32(out: &mut Vec<u8>, n: usize, what: &str) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| invalid!("{what} too large for the checkpoint format"))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('=', "\\=")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Splits at the first `=` not preceded by a backslash escape.
fn split_unescaped(line: &str) -> Option<(&str, &str)> {
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'=' => return Some((&line[..i], &line[i + 1..])),
            _ => i += 1,
        }
    }
    None
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelCheckpoint::from_bytes(&bytes)
}
