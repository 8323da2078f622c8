//! Flat binary checkpoint format.
//!
//! ```text
//! "MOED"            4 bytes
//! version           u32
//! count             u32
//! per entry:
//!   name length     u16
//!   name            UTF-8 bytes
//!   rank            u8
//!   extents         rank × u32
//!   payload         product(extents) × f32
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::nn::Module;
use crate::Tensor;

pub const MAGIC: &[u8; 4] = b"MOED";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Entry {
    /// Captures a tensor's current values, rounded to `f32`.
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Entry {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.values().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_values(name: impl Into<String>, values: &[f64]) -> Self {
        Entry {
            name: name.into(),
            shape: vec![values.len()],
            data: values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn values_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Entries for every tensor of `module`, named under `prefix`.
pub fn module_entries(module: &dyn Module, prefix: &str) -> Vec<Entry> {
    module
        .named_tensors(prefix)
        .into_iter()
        .map(|(name, t, _)| Entry::from_tensor(name, &t))
        .collect()
}

/// Copies matching entries back into `module`. Every tensor the module owns
/// must be present with the same shape.
pub fn load_module(module: &dyn Module, prefix: &str, entries: &[Entry]) -> Result<()> {
    for (name, t, _) in module.named_tensors(prefix) {
        let entry = entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| TensorError::Checkpoint(format!("missing entry {name}")))?;
        if entry.shape != t.shape() {
            return Err(TensorError::Checkpoint(format!(
                "entry {name} has shape {:?}, model expects {:?}",
                entry.shape,
                t.shape()
            )));
        }
        t.set_values(entry.values_f64())?;
    }
    Ok(())
}

pub fn write(mut w: impl Write, entries: &[Entry]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let count = u32::try_from(entries.len())
        .map_err(|_| TensorError::Checkpoint("too many entries".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for e in entries {
        let name = e.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| TensorError::Checkpoint(format!("name too long: {}", e.name)))?;
        let rank = u8::try_from(e.shape.len())
            .map_err(|_| TensorError::Checkpoint(format!("rank too large: {}", e.name)))?;
        if e.shape.iter().product::<usize>() != e.data.len() {
            return Err(TensorError::Checkpoint(format!(
                "entry {} shape {:?} does not match {} values",
                e.name,
                e.shape,
                e.data.len()
            )));
        }
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[rank])?;
        for &d in &e.shape {
            let d = u32::try_from(d)
                .map_err(|_| TensorError::Checkpoint(format!("extent too large: {}", e.name)))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| TensorError::Checkpoint(format!("truncated file: {e}")))?;
    Ok(buf)
}

pub fn read(mut r: impl Read) -> Result<Vec<Entry>> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?);
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u16::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| TensorError::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| TensorError::Checkpoint("entry name is not UTF-8".into()))?;
        let rank = read_array::<1>(&mut r)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(read_array(&mut r)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f32::from_le_bytes(read_array(&mut r)?));
        }
        entries.push(Entry { name, shape, data });
    }
    Ok(entries)
}

pub fn save(path: impl AsRef<Path>, entries: &[Entry]) -> Result<()> {
    write(BufWriter::new(File::create(path)?), entries)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Entry>> {
    read(BufReader::new(File::open(path)?))
}
