//! Single-image I/O for the wavelet inspection command: binary PGM (P5) and
//! raw little-endian f32 planes.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Grayscale image as f32 values scaled to `[0,1]` for PGM sources.
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Parse a binary PGM (P5, maxval <= 255).
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        // skip whitespace and '#' comment lines
        while pos < bytes.len() {
            let b = bytes[pos];
            if b == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("unexpected end of PGM header");
        }
        Ok(std::str::from_utf8(&bytes[start..pos])?.to_string())
    };
    if token()? != "P5" {
        bail!("{}: not a binary PGM (P5)", path.display());
    }
    let width: usize = token()?.parse().context("PGM width")?;
    let height: usize = token()?.parse().context("PGM height")?;
    let maxval: usize = token()?.parse().context("PGM maxval")?;
    if maxval == 0 || maxval > 255 {
        bail!("{}: unsupported PGM maxval {maxval}", path.display());
    }
    pos += 1; // single whitespace after maxval
    let need = width * height;
    if bytes.len() < pos + need {
        bail!("{}: truncated PGM payload", path.display());
    }
    let data = bytes[pos..pos + need]
        .iter()
        .map(|&b| b as f32 / maxval as f32)
        .collect();
    Ok(GrayImage { width, height, data })
}

pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[f32]) -> Result<()> {
    assert_eq!(data.len(), width * height);
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    let lo = data.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let range = (hi - lo).max(1e-12);
    let bytes: Vec<u8> = data
        .iter()
        .map(|&v| (((v - lo) / range) * 255.0).round() as u8)
        .collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Raw little-endian f32 plane with extents supplied by the caller.
pub fn read_f32_plane(path: &Path, width: usize, height: usize) -> Result<GrayImage> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let need = width * height * 4;
    if bytes.len() != need {
        bail!(
            "{}: expected {need} bytes for {width}x{height} f32 plane, got {}",
            path.display(),
            bytes.len()
        );
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(GrayImage { width, height, data })
}

pub fn write_f32_plane(path: &Path, data: &[f32]) -> Result<()> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}
