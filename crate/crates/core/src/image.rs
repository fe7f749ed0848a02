//! 8-bit RGB images and binary Netpbm (P5/P6) IO.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

/// Row-major 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    /// Smallest accepted side length.
    pub const MIN_SIDE: usize = 16;

    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width < Self::MIN_SIDE || height < Self::MIN_SIDE || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
            return Err(Error::input(format!(
                "image must have even sides >= {}, got {width}x{height}",
                Self::MIN_SIDE
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::input(format!(
                "expected {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        RgbImage::new(width, height, vec![rgb; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        RgbImage::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    /// (1, 3, h, w) tensor scaled to [0, 1].
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn(Dims::new(1, 3, self.height, self.width), |_, c, i, j| {
            f64::from(self.get(j, i)[c]) / 255.0
        })
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let (w, h, data) = parse_netpbm(&bytes, b"P6", 3)?;
        let pixels = data.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
        RgbImage::new(w, h, pixels)
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::with_capacity(20 + 3 * self.pixels.len());
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// 8-bit single-channel image, used for masks and heatmaps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height || width == 0 || height == 0 {
            return Err(Error::input(format!(
                "gray image {width}x{height} with {} pixels",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    /// Maps values in [0, 1] to 0..=255.
    pub fn from_unit(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let pixels = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        GrayImage::new(width, height, pixels)
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let (w, h, data) = parse_netpbm(&bytes, b"P5", 1)?;
        GrayImage::new(w, h, data.to_vec())
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::with_capacity(20 + self.pixels.len());
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.extend_from_slice(&self.pixels);
        fs::write(path, out)?;
        Ok(())
    }
}

/// Parses a binary Netpbm header and returns (width, height, raster).
/// Header tokens are whitespace separated, `#` starts a comment running to
/// end of line, and exactly one whitespace byte follows maxval.
fn parse_netpbm<'a>(bytes: &'a [u8], magic: &[u8], channels: usize) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::input(format!(
            "not a {} file",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::input("truncated netpbm header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::input("malformed netpbm header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::input("netpbm header value out of range"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::input(format!("unsupported maxval {maxval}, expected 255")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::input("missing whitespace after maxval"));
    }
    pos += 1;
    let need = w * h * channels;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::input(format!("raster truncated: need {need} bytes")))?;
    Ok((w, h, raster))
}
