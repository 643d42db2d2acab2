//! Checkpoint archive: magic "WVMX", format version, the run config as JSON,
//! then a sequence of named tensors (name length + name + dtype tag + rank +
//! extents + little-endian payload). Parameters, batchnorm buffers, optimizer
//! moments and RNG position all travel as named tensors, so a load restores a
//! run bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use wavemix::Scalar;

pub const MAGIC: &[u8; 4] = b"WVMX";
pub const VERSION: u32 = 1;

/// Element codec for checkpoint payloads.
pub trait CheckpointScalar: Scalar {
    const DTYPE_TAG: u8;
    fn write_le(v: Self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    const WIDTH: usize;
}

impl CheckpointScalar for f32 {
    const DTYPE_TAG: u8 = 0;
    const WIDTH: usize = 4;
    fn write_le(v: Self, out: &mut Vec<u8>) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl CheckpointScalar for f64 {
    const DTYPE_TAG: u8 = 1;
    const WIDTH: usize = 8;
    fn write_le(v: Self, out: &mut Vec<u8>) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}

pub struct Entry<T> {
    pub name: String,
    pub data: Vec<T>,
    pub shape: Vec<usize>,
}

pub fn save<T: CheckpointScalar>(path: &Path, config_json: &str, entries: &[Entry<T>]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = config_json.as_bytes();
    buf.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    buf.extend_from_slice(cfg);
    buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(T::DTYPE_TAG);
        buf.push(e.shape.len() as u8);
        for &d in &e.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        debug_assert_eq!(e.data.len(), e.shape.iter().product::<usize>());
        for &v in &e.data {
            T::write_le(v, &mut buf);
        }
    }
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(&buf)?;
    Ok(())
}

pub struct Loaded<T> {
    pub config_json: String,
    pub entries: Vec<Entry<T>>,
}

impl<T> Loaded<T> {
    pub fn take(&mut self, name: &str) -> Option<Entry<T>> {
        let idx = self.entries.iter().position(|e| e.name == name)?;
        Some(self.entries.swap_remove(idx))
    }

    pub fn get(&self, name: &str) -> Option<&Entry<T>> {
        self.entries.iter().find(|e| e.name == name)
    }
}

pub fn load<T: CheckpointScalar>(path: &Path) -> Result<Loaded<T>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if bytes.len() < *off + n {
            bail!("{}: truncated checkpoint", path.display());
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 4)? != MAGIC {
        bail!("{}: not a WVMX checkpoint", path.display());
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != VERSION {
        bail!("{}: unsupported checkpoint version {version}", path.display());
    }
    let cfg_len = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
    let config_json = String::from_utf8(take(&mut off, cfg_len)?.to_vec())
        .context("checkpoint config is not UTF-8")?;
    let count = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .context("tensor name is not UTF-8")?;
        let dtype = take(&mut off, 1)?[0];
        if dtype != T::DTYPE_TAG {
            bail!(
                "{}: tensor {name} has dtype tag {dtype}, expected {}",
                path.display(),
                T::DTYPE_TAG
            );
        }
        let rank = take(&mut off, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = take(&mut off, numel * T::WIDTH)?;
        let data: Vec<T> = payload.chunks_exact(T::WIDTH).map(T::read_le).collect();
        entries.push(Entry { name, data, shape });
    }
    Ok(Loaded { config_json, entries })
}
