//! Binary Netpbm readers and writers: P6 (PPM) for color images, P5 (PGM)
//! for masks and probability maps. Malformed files are rejected with the
//! byte offset of the problem.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Scanner<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Scanner<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Netpbm {
            path: self.path.display().to_string(),
            offset: self.pos,
            msg: msg.into(),
        }
    }

    /// Skips whitespace and `#` comment lines between header tokens.
    fn skip_separators(&mut self) {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| self.err(format!("{what} out of range")))
    }

    fn read_raster(&mut self, len: usize) -> Result<&'a [u8]> {
        // Exactly one whitespace byte separates the header from the raster.
        if self.pos >= self.bytes.len() || !self.bytes[self.pos].is_ascii_whitespace() {
            return Err(self.err("expected single whitespace before raster"));
        }
        self.pos += 1;
        if self.bytes.len() < self.pos + len {
            self.pos = self.bytes.len();
            return Err(self.err(format!(
                "raster truncated: need {len} bytes, have {}",
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
}

fn read_header<'a>(
    scanner: &mut Scanner<'a>,
    magic: &[u8],
) -> Result<(usize, usize)> {
    if scanner.bytes.len() < 2 || &scanner.bytes[..2] != magic {
        return Err(scanner.err(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    scanner.pos = 2;
    let w = scanner.read_uint("width")?;
    let h = scanner.read_uint("height")?;
    let maxval = scanner.read_uint("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(scanner.err(format!("unsupported maxval {maxval}")));
    }
    Ok((w, h))
}

/// Reads a binary PPM (P6) into a `[3,H,W]` tensor scaled to `[0,1]`.
pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path)?;
    let mut sc = Scanner { bytes: &bytes, pos: 0, path };
    let (w, h) = read_header(&mut sc, b"P6")?;
    let raster = sc.read_raster(3 * w * h)?;
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(data, &[3, h, w])
}

/// Reads a binary PGM (P5) into a strictly binary `[1,H,W]` mask tensor;
/// pixels at or above 128 become foreground.
pub fn read_pgm_mask(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path)?;
    let mut sc = Scanner { bytes: &bytes, pos: 0, path };
    let (w, h) = read_header(&mut sc, b"P5")?;
    let raster = sc.read_raster(w * h)?;
    let data = raster
        .iter()
        .map(|&v| if v >= 128 { 1.0f32 } else { 0.0 })
        .collect();
    Tensor::from_vec(data, &[1, h, w])
}

/// Reads a binary PGM (P5) into a `[1,H,W]` tensor scaled to `[0,1]`.
pub fn read_pgm_gray(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path)?;
    let mut sc = Scanner { bytes: &bytes, pos: 0, path };
    let (w, h) = read_header(&mut sc, b"P5")?;
    let raster = sc.read_raster(w * h)?;
    let data = raster.iter().map(|&v| v as f32 / 255.0).collect();
    Tensor::from_vec(data, &[1, h, w])
}

/// Writes a `[3,H,W]` tensor in `[0,1]` as binary PPM.
pub fn write_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let shape = image.shape().to_vec();
    let (h, w) = match *shape.as_slice() {
        [3, h, w] => (h, w),
        _ => {
            return Err(Error::shape(
                "write_ppm",
                format!("expected [3,H,W], got {shape:?}"),
            ))
        }
    };
    let data = image.data();
    let mut out = Vec::with_capacity(3 * h * w + 32);
    write!(out, "P6\n{w} {h}\n255\n")?;
    for i in 0..h * w {
        for c in 0..3 {
            out.push(quantize(data[c * h * w + i]));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes raw 8-bit grayscale bytes as binary PGM.
pub fn write_pgm_bytes(path: &Path, bytes: &[u8], h: usize, w: usize) -> Result<()> {
    if bytes.len() != h * w {
        return Err(Error::shape(
            "write_pgm",
            format!("{} bytes for {h}x{w} raster", bytes.len()),
        ));
    }
    let mut out = Vec::with_capacity(h * w + 32);
    write!(out, "P5\n{w} {h}\n255\n")?;
    out.extend_from_slice(bytes);
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes a `[1,H,W]` tensor in `[0,1]` as binary PGM.
pub fn write_pgm(path: &Path, map: &Tensor<f32>) -> Result<()> {
    let shape = map.shape().to_vec();
    let (h, w) = match *shape.as_slice() {
        [1, h, w] => (h, w),
        _ => {
            return Err(Error::shape(
                "write_pgm",
                format!("expected [1,H,W], got {shape:?}"),
            ))
        }
    };
    let bytes: Vec<u8> = map.data().iter().map(|&v| quantize(v)).collect();
    write_pgm_bytes(path, &bytes, h, w)
}

fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}
