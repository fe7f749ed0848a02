//! Fine-grained frequency decomposition: RGB → YCbCr → sliding 8×8 DCT →
//! regrouping of same-frequency coefficients into channels.
//!
//! With window 8 and stride `s`, each plane is replicate-padded by
//! `8 - s` pixels (split as evenly as possible, extra pixel after) so the
//! window grid has exactly `H/s × W/s` positions. The flat output has
//! 192 channels ordered colour-major (Y, Cb, Cr), zigzag-minor.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::tensor::{Dims, Tensor};

pub type Block = [[f64; 8]; 8];

pub const WINDOW: usize = 8;
pub const BANDS_PER_PLANE: usize = 64;
pub const FLAT_CHANNELS: usize = 3 * BANDS_PER_PLANE;
pub const REDUCED_CHANNELS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColorPlane {
    Y,
    Cb,
    Cr,
}

impl ColorPlane {
    pub const ALL: [ColorPlane; 3] = [ColorPlane::Y, ColorPlane::Cb, ColorPlane::Cr];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Full-range BT.601 YCbCr image with real-valued samples.
#[derive(Clone, Debug, PartialEq)]
pub struct YcbcrImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl YcbcrImage {
    pub fn plane(&self, p: ColorPlane) -> Vec<f64> {
        self.pixels.iter().map(|px| px[p.index()]).collect()
    }
}

pub fn rgb_to_ycbcr_pixel([r, g, b]: [f64; 3]) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b,
        128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b,
    ]
}

pub fn ycbcr_to_rgb_pixel([y, cb, cr]: [f64; 3]) -> [f64; 3] {
    [
        y + 1.402 * (cr - 128.0),
        y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0),
        y + 1.772 * (cb - 128.0),
    ]
}

pub fn rgb_to_ycbcr(img: &RgbImage) -> YcbcrImage {
    let pixels = img
        .pixels()
        .iter()
        .map(|p| rgb_to_ycbcr_pixel(p.map(f64::from)))
        .collect();
    YcbcrImage {
        width: img.width(),
        height: img.height(),
        pixels,
    }
}

/// Inverse conversion with rounding and clamping to 8 bits.
pub fn ycbcr_to_rgb(img: &YcbcrImage) -> Result<RgbImage> {
    let pixels = img
        .pixels
        .iter()
        .map(|&p| ycbcr_to_rgb_pixel(p).map(|v| v.round().clamp(0.0, 255.0) as u8))
        .collect();
    RgbImage::new(img.width, img.height, pixels)
}

/// Orthonormal DCT-II basis matrix: `C[u][x] = α(u) cos((2x+1)uπ/16)`.
fn basis() -> &'static Block {
    static BASIS: OnceLock<Block> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; 8]; 8];
        for (u, row) in c.iter_mut().enumerate() {
            let alpha = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = alpha * (((2 * x + 1) * u) as f64 * PI / 16.0).cos();
            }
        }
        c
    })
}

/// `C · p · Cᵀ`, or `Cᵀ · p · C` when `inverse`.
fn separable(p: &Block, inverse: bool) -> Block {
    let c = basis();
    let mut tmp = [[0.0; 8]; 8];
    for u in 0..8 {
        for x in 0..8 {
            tmp[u][x] = (0..8)
                .map(|k| if inverse { c[k][u] * p[k][x] } else { c[u][k] * p[k][x] })
                .sum();
        }
    }
    let mut out = [[0.0; 8]; 8];
    for u in 0..8 {
        for v in 0..8 {
            out[u][v] = (0..8)
                .map(|k| if inverse { tmp[u][k] * c[k][v] } else { tmp[u][k] * c[v][k] })
                .sum();
        }
    }
    out
}

/// Pairwise sum of the 64 samples. Summing 2^k equal values this way is
/// exact, so a constant patch has an exact mean.
fn block_mean(p: &Block) -> f64 {
    let mut v: Vec<f64> = p.iter().flatten().copied().collect();
    while v.len() > 1 {
        v = v.chunks(2).map(|c| c.iter().sum()).collect();
    }
    v[0] / 64.0
}

/// Orthonormal 2-D DCT-II of an 8×8 patch; `out[u][v]` holds vertical
/// frequency `u`, horizontal frequency `v`.
///
/// The DC term is taken from the patch mean and the AC terms from the
/// mean-removed patch, so constant patches carry exactly zero AC energy.
pub fn dct8x8(patch: &Block) -> Block {
    let mean = block_mean(patch);
    let centred = patch.map(|row| row.map(|v| v - mean));
    let mut out = separable(&centred, false);
    out[0][0] = 8.0 * mean;
    out
}

pub fn idct8x8(coeffs: &Block) -> Block {
    let mean = coeffs[0][0] / 8.0;
    let mut ac = *coeffs;
    ac[0][0] = 0.0;
    separable(&ac, true).map(|row| row.map(|v| v + mean))
}

/// JPEG zigzag scan: position `k` → (row, col) of the 8×8 block.
pub fn zigzag() -> &'static [(usize, usize); 64] {
    static ZZ: OnceLock<[(usize, usize); 64]> = OnceLock::new();
    ZZ.get_or_init(|| {
        let mut order = [(0, 0); 64];
        let mut k = 0;
        for s in 0..15usize {
            let lo = s.saturating_sub(7);
            let hi = s.min(7);
            let rows: Vec<usize> = if s % 2 == 0 {
                (lo..=hi).rev().collect()
            } else {
                (lo..=hi).collect()
            };
            for r in rows {
                order[k] = (r, s - r);
                k += 1;
            }
        }
        order
    })
}

/// Maps a flat-tensor channel to its colour plane and zigzag index.
pub fn band_of(channel: usize) -> (ColorPlane, usize) {
    (ColorPlane::ALL[channel / BANDS_PER_PLANE], channel % BANDS_PER_PLANE)
}

pub fn channel_of(plane: ColorPlane, zigzag_index: usize) -> usize {
    plane.index() * BANDS_PER_PLANE + zigzag_index
}

/// Padding (before, after) applied to each side for a given stride.
pub fn padding_for(stride: usize) -> (usize, usize) {
    let total = WINDOW - stride;
    (total / 2, total - total / 2)
}

/// The decomposed frequency representation of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqInput {
    /// (1, 192, H/stride, W/stride) coefficient tensor.
    pub flat: Tensor,
    pub stride: usize,
    pub padding: (usize, usize),
    /// `band_order[k]` is the (plane, zigzag index) stored in channel `k`.
    pub band_order: Vec<(ColorPlane, usize)>,
}

impl FreqInput {
    /// Eager evaluation of the learned 192→64 band reduction.
    pub fn reduce(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(self.flat.clone());
        let w = g.constant(weight.clone());
        let b = bias.map(|b| g.constant(b.clone()));
        let y = reduce_bands(&mut g, x, w, b)?;
        Ok(g.value(y).clone())
    }
}

/// Replicate-pads a plane by `before`/`after` on each side.
fn pad_plane(plane: &[f64], w: usize, h: usize, (before, after): (usize, usize)) -> (Vec<f64>, usize, usize) {
    let pw = w + before + after;
    let ph = h + before + after;
    let mut out = Vec::with_capacity(pw * ph);
    for y in 0..ph {
        let sy = (y as isize - before as isize).clamp(0, h as isize - 1) as usize;
        for x in 0..pw {
            let sx = (x as isize - before as isize).clamp(0, w as isize - 1) as usize;
            out.push(plane[sy * w + sx]);
        }
    }
    (out, pw, ph)
}

/// Replicate-padded YCbCr planes as used by [`decompose`].
pub fn padded_planes(img: &RgbImage, stride: usize) -> Vec<(Vec<f64>, usize, usize)> {
    let ycc = rgb_to_ycbcr(img);
    ColorPlane::ALL
        .iter()
        .map(|&p| pad_plane(&ycc.plane(p), img.width(), img.height(), padding_for(stride)))
        .collect()
}

/// Slides an 8×8 window over each padded YCbCr plane and stores every DCT
/// coefficient as its own channel at the window's grid position.
pub fn decompose(img: &RgbImage, stride: usize) -> Result<FreqInput> {
    if stride == 0 || stride > WINDOW {
        return Err(Error::input(format!("window stride must be in 1..=8, got {stride}")));
    }
    if !img.width().is_multiple_of(stride) || !img.height().is_multiple_of(stride) {
        return Err(Error::input(format!(
            "image {}x{} not divisible by stride {stride}",
            img.width(),
            img.height()
        )));
    }
    let padding = padding_for(stride);
    let grid_h = img.height() / stride;
    let grid_w = img.width() / stride;
    if img.height() + padding.0 + padding.1 < WINDOW || img.width() + padding.0 + padding.1 < WINDOW {
        return Err(Error::input("image smaller than one window after padding"));
    }
    let dims = Dims::new(1, FLAT_CHANNELS, grid_h, grid_w);
    let mut flat = Tensor::zeros(dims);
    let zz = zigzag();
    for (pi, (plane, pw, _)) in padded_planes(img, stride).into_iter().enumerate() {
        for i in 0..grid_h {
            for j in 0..grid_w {
                let mut patch = [[0.0; 8]; 8];
                for (r, row) in patch.iter_mut().enumerate() {
                    let src = (i * stride + r) * pw + j * stride;
                    row.copy_from_slice(&plane[src..src + 8]);
                }
                let d = dct8x8(&patch);
                for (k, &(u, v)) in zz.iter().enumerate() {
                    flat.set(0, pi * BANDS_PER_PLANE + k, i, j, d[u][v]);
                }
            }
        }
    }
    Ok(FreqInput {
        flat,
        stride,
        padding,
        band_order: (0..FLAT_CHANNELS).map(band_of).collect(),
    })
}

/// Learned 1×1 reduction of the 192 flat bands to the 64-channel frequency
/// input. `w` is (64, 192, 1, 1).
pub fn reduce_bands(g: &mut Graph, flat: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let d = g.dims(flat);
    if d.c != FLAT_CHANNELS {
        return Err(Error::shape(format!(
            "reduce_bands expects {FLAT_CHANNELS} channels, got {}",
            d.c
        )));
    }
    g.conv_pointwise(flat, w, b)
}
