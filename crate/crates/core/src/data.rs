//! Dataset ingestion: IDX and CIFAR binary formats, per-channel
//! standardization, deterministic shuffling and batch iteration.
//!
//! Loaders keep a two-stage contract: parsing scales pixels to `[0,1]` and
//! nothing else; standardization is applied explicitly with statistics from
//! the training split so the test split shares them.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// In-memory dataset. Images are (N, C, H, W) row-major.
pub struct Dataset<T: Scalar> {
    pub name: String,
    pub images: Vec<T>,
    pub num: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Standardization statistics applied to `images` (empty until applied).
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl<T: Scalar> Dataset<T> {
    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// First `n` samples, same metadata.
    pub fn subset(&self, n: usize) -> Dataset<T> {
        let n = n.min(self.num);
        Dataset {
            name: self.name.clone(),
            images: self.images[..n * self.image_len()].to_vec(),
            num: n,
            channels: self.channels,
            height: self.height,
            width: self.width,
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            mean: self.mean.clone(),
            std: self.std.clone(),
        }
    }

    /// Gather samples `idx` into a (B,C,H,W) tensor plus labels.
    pub fn gather(&self, idx: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let il = self.image_len();
        let mut data = Vec::with_capacity(idx.len() * il);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(&self.images[i * il..(i + 1) * il]);
            labels.push(self.labels[i]);
        }
        let t = Tensor::from_vec(data, &[idx.len(), self.channels, self.height, self.width])
            .expect("gather shape");
        (t, labels)
    }
}

fn be_u32(bytes: &[u8], off: usize, file: &str) -> Result<u32> {
    if bytes.len() < off + 4 {
        return Err(Error::Truncated {
            file: file.to_string(),
            expected: off + 4,
            got: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]))
}

/// Raw IDX image payload: count, extents and pixel bytes.
pub struct RawIdxImages {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

pub fn read_idx_images(path: &Path) -> Result<RawIdxImages> {
    let file = path.display().to_string();
    let bytes = fs::read(path)?;
    let magic = be_u32(&bytes, 0, &file)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            file,
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let count = be_u32(&bytes, 4, &file)? as usize;
    let height = be_u32(&bytes, 8, &file)? as usize;
    let width = be_u32(&bytes, 12, &file)? as usize;
    let expected = 16 + count * height * width;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            file,
            expected,
            got: bytes.len(),
        });
    }
    Ok(RawIdxImages {
        count,
        height,
        width,
        pixels: bytes[16..expected].to_vec(),
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let file = path.display().to_string();
    let bytes = fs::read(path)?;
    let magic = be_u32(&bytes, 0, &file)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            file,
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let count = be_u32(&bytes, 4, &file)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            file,
            expected,
            got: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Fixture writer: IDX image file with the standard big-endian header.
pub fn write_idx_images(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len() % (height * width), 0);
    let count = pixels.len() / (height * width);
    let mut f = fs::File::create(path)?;
    f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    f.write_all(&(count as u32).to_be_bytes())?;
    f.write_all(&(height as u32).to_be_bytes())?;
    f.write_all(&(width as u32).to_be_bytes())?;
    f.write_all(pixels)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)?;
    Ok(())
}

/// Parse an IDX image/label pair into a dataset scaled to `[0,1]`.
/// `transpose` swaps each image's axes (EMNIST files store transposed digits).
pub fn load_idx<T: Scalar>(
    images_path: &Path,
    labels_path: &Path,
    name: &str,
    num_classes: usize,
    transpose: bool,
) -> Result<Dataset<T>> {
    let raw = read_idx_images(images_path)?;
    let labels_u8 = read_idx_labels(labels_path)?;
    if raw.count != labels_u8.len() {
        return Err(Error::CountMismatch {
            images: raw.count,
            labels: labels_u8.len(),
        });
    }
    let mut labels = Vec::with_capacity(raw.count);
    for (i, &l) in labels_u8.iter().enumerate() {
        if (l as usize) >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: l as u32,
                num_classes,
                index: i,
            });
        }
        labels.push(l as usize);
    }
    let (h, w) = (raw.height, raw.width);
    let scale = T::from_f64_c(1.0 / 255.0);
    let plane = h * w;
    let mut images = vec![T::zero(); raw.count * plane];
    for (img, out) in raw.pixels.chunks_exact(plane).zip(images.chunks_exact_mut(plane)) {
        if transpose {
            for y in 0..h {
                for x in 0..w {
                    out[y * w + x] = T::from_f64_c(img[x * h + y] as f64) * scale;
                }
            }
        } else {
            for (o, &p) in out.iter_mut().zip(img) {
                *o = T::from_f64_c(p as f64) * scale;
            }
        }
    }
    Ok(Dataset {
        name: name.to_string(),
        images,
        num: raw.count,
        channels: 1,
        height: h,
        width: w,
        labels,
        num_classes,
        mean: Vec::new(),
        std: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    C10,
    C100,
}

impl CifarVariant {
    pub fn record_len(&self) -> usize {
        match self {
            CifarVariant::C10 => 3073,
            CifarVariant::C100 => 3074,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            CifarVariant::C10 => 10,
            CifarVariant::C100 => 100,
        }
    }
}

/// Parse one CIFAR binary file: fixed-size records of label byte(s) followed
/// by a channel-major 3x32x32 pixel block. C100 keeps the fine label.
pub fn read_cifar_file(path: &Path, variant: CifarVariant) -> Result<(Vec<u8>, Vec<usize>)> {
    let file = path.display().to_string();
    let bytes = fs::read(path)?;
    let rec = variant.record_len();
    if bytes.is_empty() || bytes.len() % rec != 0 {
        return Err(Error::RecordAlignment {
            file,
            len: bytes.len(),
            record: rec,
        });
    }
    let n = bytes.len() / rec;
    let mut pixels = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for r in bytes.chunks_exact(rec) {
        let label = match variant {
            CifarVariant::C10 => r[0] as usize,
            CifarVariant::C100 => r[1] as usize, // fine label is the second byte
        };
        let k = variant.num_classes();
        if label >= k {
            return Err(Error::LabelOutOfRange {
                label: label as u32,
                num_classes: k,
                index: labels.len(),
            });
        }
        labels.push(label);
        pixels.extend_from_slice(&r[rec - 3072..]);
    }
    Ok((pixels, labels))
}

/// Fixture writer for CIFAR records.
pub fn write_cifar_file(
    path: &Path,
    variant: CifarVariant,
    pixels: &[u8],
    labels: &[usize],
    coarse: Option<&[usize]>,
) -> Result<()> {
    assert_eq!(pixels.len(), labels.len() * 3072);
    let mut f = fs::File::create(path)?;
    for (i, img) in pixels.chunks_exact(3072).enumerate() {
        match variant {
            CifarVariant::C10 => f.write_all(&[labels[i] as u8])?,
            CifarVariant::C100 => {
                let c = coarse.map(|c| c[i] as u8).unwrap_or(0);
                f.write_all(&[c, labels[i] as u8])?;
            }
        }
        f.write_all(img)?;
    }
    Ok(())
}

/// Load a CIFAR split from a directory of binary batch files.
pub fn load_cifar<T: Scalar>(dir: &Path, variant: CifarVariant, train: bool) -> Result<Dataset<T>> {
    let files: Vec<String> = match (variant, train) {
        (CifarVariant::C10, true) => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        (CifarVariant::C10, false) => vec!["test_batch.bin".to_string()],
        (CifarVariant::C100, true) => vec!["train.bin".to_string()],
        (CifarVariant::C100, false) => vec!["test.bin".to_string()],
    };
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for f in &files {
        let (p, l) = read_cifar_file(&dir.join(f), variant)?;
        pixels.extend_from_slice(&p);
        labels.extend_from_slice(&l);
    }
    let scale = T::from_f64_c(1.0 / 255.0);
    let images: Vec<T> = pixels.iter().map(|&p| T::from_f64_c(p as f64) * scale).collect();
    let num = labels.len();
    Ok(Dataset {
        name: match variant {
            CifarVariant::C10 => "cifar10".to_string(),
            CifarVariant::C100 => "cifar100".to_string(),
        },
        images,
        num,
        channels: 3,
        height: 32,
        width: 32,
        labels,
        num_classes: variant.num_classes(),
        mean: Vec::new(),
        std: Vec::new(),
    })
}

/// Per-channel mean and population standard deviation, accumulated in f64.
pub fn compute_channel_stats<T: Scalar>(ds: &Dataset<T>) -> Result<(Vec<f64>, Vec<f64>)> {
    if ds.num < 2 {
        return Err(Error::invalid("compute_channel_stats", "need at least 2 samples"));
    }
    let plane = ds.height * ds.width;
    let per_channel = ds.num * plane;
    let mut mean = vec![0.0f64; ds.channels];
    let mut sq = vec![0.0f64; ds.channels];
    for i in 0..ds.num {
        for c in 0..ds.channels {
            let base = (i * ds.channels + c) * plane;
            for k in 0..plane {
                let v = ds.images[base + k].to_f64_c();
                mean[c] += v;
                sq[c] += v * v;
            }
        }
    }
    let mut std = vec![0.0f64; ds.channels];
    for c in 0..ds.channels {
        mean[c] /= per_channel as f64;
        std[c] = (sq[c] / per_channel as f64 - mean[c] * mean[c]).max(0.0).sqrt();
    }
    Ok((mean, std))
}

/// Apply (x - mean) / (std + 1e-8) per channel and record the stats.
pub fn standardize<T: Scalar>(ds: &mut Dataset<T>, mean: &[f64], std: &[f64]) {
    assert_eq!(mean.len(), ds.channels);
    assert_eq!(std.len(), ds.channels);
    let plane = ds.height * ds.width;
    for i in 0..ds.num {
        for c in 0..ds.channels {
            let m = T::from_f64_c(mean[c]);
            let s = T::from_f64_c(std[c] + 1e-8);
            let base = (i * ds.channels + c) * plane;
            for k in 0..plane {
                ds.images[base + k] = (ds.images[base + k] - m) / s;
            }
        }
    }
    ds.mean = mean.to_vec();
    ds.std = std.to_vec();
}

/// Deterministic epoch permutation: Fisher-Yates on an RNG substream keyed by
/// (seed, epoch). Stream 0 is reserved for model initialization and dropout.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = DetRng::substream(seed, epoch + 1);
    rng.shuffle(&mut order);
    order
}

/// Batched iteration over one epoch; the final short batch is included.
pub struct BatchIterator<'a, T: Scalar> {
    ds: &'a Dataset<T>,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl<'a, T: Scalar> BatchIterator<'a, T> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

pub fn batches<'a, T: Scalar>(
    ds: &'a Dataset<T>,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<BatchIterator<'a, T>> {
    if batch_size == 0 {
        return Err(Error::invalid("batches", "batch_size must be >= 1"));
    }
    Ok(BatchIterator {
        ds,
        order: epoch_permutation(ds.num, seed, epoch),
        batch_size,
        cursor: 0,
    })
}

impl<'a, T: Scalar> Iterator for BatchIterator<'a, T> {
    type Item = (Tensor<T>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = &self.order[self.cursor..end];
        self.cursor = end;
        Some(self.ds.gather(idx))
    }
}
