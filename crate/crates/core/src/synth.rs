//! Deterministic synthetic splice-forgery data.
//!
//! Real samples are smooth multi-octave value-noise textures with film grain,
//! JPEG-compressed on the luma channel with a quality-75 table. Fakes paste
//! an elliptical patch from a second texture that was blurred and
//! recompressed at quality 50, so the spliced region carries a mismatched
//! compression and sharpness signature.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::freq::{self, Block};
use crate::image::{GrayImage, RgbImage};

/// Standard JPEG luminance quantization table (quality 50), row-major.
pub const JPEG_LUMA_TABLE: [[u16; 8]; 8] = [
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
];

pub const REAL_QUALITY: u32 = 75;
pub const SPLICE_QUALITY: u32 = 50;
pub const SPLICE_BLUR_SIGMA: f64 = 1.0;
pub const FEATHER_PX: f64 = 2.0;

/// Luminance table scaled to `quality` (1..=100) with the usual IJG rule.
pub fn quant_table(quality: u32) -> [[f64; 8]; 8] {
    let q = quality.clamp(1, 100);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    JPEG_LUMA_TABLE.map(|row| row.map(|t| ((u32::from(t) * scale + 50) / 100).max(1) as f64))
}

/// Quantizes the luma DCT of every aligned 8×8 block; chroma is untouched.
pub fn jpeg_luma_roundtrip(img: &RgbImage, quality: u32) -> RgbImage {
    let table = quant_table(quality);
    let mut ycc = freq::rgb_to_ycbcr(img);
    let (w, h) = (img.width(), img.height());
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut patch: Block = [[0.0; 8]; 8];
            for (r, row) in patch.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    let (y, x) = ((by + r).min(h - 1), (bx + c).min(w - 1));
                    *v = ycc.pixels[y * w + x][0] - 128.0;
                }
            }
            let mut d = freq::dct8x8(&patch);
            for (row, qrow) in d.iter_mut().zip(&table) {
                for (v, q) in row.iter_mut().zip(qrow) {
                    *v = (*v / q).round() * q;
                }
            }
            let p = freq::idct8x8(&d);
            for (r, row) in p.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    let (y, x) = (by + r, bx + c);
                    if y < h && x < w {
                        ycc.pixels[y * w + x][0] = v + 128.0;
                    }
                }
            }
        }
    }
    freq::ycbcr_to_rgb(&ycc).expect("dimensions unchanged")
}

/// Separable Gaussian blur with replicate borders. `radius` taps per side.
pub fn gaussian_blur(img: &RgbImage, sigma: f64, radius: usize) -> RgbImage {
    if sigma <= 0.0 || radius == 0 {
        return img.clone();
    }
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|k| {
            let d = k as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let (w, h) = (img.width(), img.height());
    let r = radius as isize;
    let pass = |src: &[[f64; 3]], horizontal: bool| -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for (k, t) in taps.iter().enumerate() {
                    let off = k as isize - r;
                    let (sx, sy) = if horizontal {
                        ((x as isize + off).clamp(0, w as isize - 1) as usize, y)
                    } else {
                        (x, (y as isize + off).clamp(0, h as isize - 1) as usize)
                    };
                    let p = src[sy * w + sx];
                    for c in 0..3 {
                        acc[c] += t * p[c];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    let src: Vec<[f64; 3]> = img.pixels().iter().map(|p| p.map(f64::from)).collect();
    let blurred = pass(&pass(&src, true), false);
    let pixels = blurred.iter().map(|p| p.map(to_u8)).collect();
    RgbImage::new(w, h, pixels).expect("dimensions unchanged")
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// One octave of value noise: random lattice every `cell` pixels,
/// smoothstep-interpolated, values in [-1, 1].
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cell: usize) -> Vec<f64> {
    let n = size / cell + 2;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let (gy, ty) = (y / cell, smoothstep((y % cell) as f64 / cell as f64));
        for x in 0..size {
            let (gx, tx) = (x / cell, smoothstep((x % cell) as f64 / cell as f64));
            let v00 = lattice[gy * n + gx];
            let v01 = lattice[gy * n + gx + 1];
            let v10 = lattice[(gy + 1) * n + gx];
            let v11 = lattice[(gy + 1) * n + gx + 1];
            let top = v00 + (v01 - v00) * tx;
            let bottom = v10 + (v11 - v10) * tx;
            out.push(top + (bottom - top) * ty);
        }
    }
    out
}

/// Uncompressed texture: base colour, a mild linear colour gradient, four
/// smooth octaves and fine grain.
fn texture(seed: u64, size: usize) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = [rng.gen_range(70.0..185.0), rng.gen_range(70.0..185.0), rng.gen_range(70.0..185.0)];
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let slope: [f64; 3] = [rng.gen_range(-25.0..25.0), rng.gen_range(-25.0..25.0), rng.gen_range(-25.0..25.0)];
    let octaves = [(size / 2, 36.0), (size / 4, 18.0), (size / 8, 10.0), (2, 6.0)];
    let mut layers = Vec::new();
    for &(cell, amp) in &octaves {
        let cell = cell.max(2);
        let luma = value_noise(&mut rng, size, cell);
        let chroma: [Vec<f64>; 3] = std::array::from_fn(|_| value_noise(&mut rng, size, cell));
        layers.push((amp, luma, chroma));
    }
    let grain = Normal::new(0.0, 8.0).expect("positive std");
    let (ca, sa) = (angle.cos(), angle.sin());
    RgbImage::from_fn(size, size, |x, y| {
        let t = (x as f64 * ca + y as f64 * sa) / size as f64;
        let k = y * size + x;
        let mut px = [0.0; 3];
        let g = grain.sample(&mut rng);
        for c in 0..3 {
            let mut v = base[c] + slope[c] * t;
            for (amp, luma, chroma) in &layers {
                v += amp * (0.75 * luma[k] + 0.25 * chroma[c][k]);
            }
            px[c] = v + g;
        }
        px.map(to_u8)
    })
    .expect("generator sizes are valid")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self as u8)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForgerySample {
    pub id: String,
    pub image: RgbImage,
    pub label: Label,
    /// Row-major manipulated-pixel map; all false for real samples.
    pub mask: Vec<bool>,
}

impl ForgerySample {
    pub fn mask_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }

    pub fn mask_image(&self) -> GrayImage {
        let pixels = self.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        GrayImage::new(self.image.width(), self.image.height(), pixels).expect("mask matches image")
    }
}

/// Pristine sample.
pub fn gen_real(seed: u64, size: usize) -> ForgerySample {
    let image = jpeg_luma_roundtrip(&texture(mix_seed(seed, 1), size), REAL_QUALITY);
    ForgerySample {
        id: format!("real-{seed}"),
        image,
        label: Label::Real,
        mask: vec![false; size * size],
    }
}

/// Per-pixel blend weight of the spliced donor: 1 inside the ellipse,
/// ramping to 0 over [`FEATHER_PX`] pixels outside it.
fn ellipse_alpha(size: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    loop {
        let lo = size as f64 * 0.16;
        let hi = size as f64 * 0.30;
        let a: f64 = rng.gen_range(lo..hi);
        let b: f64 = rng.gen_range(lo..hi);
        let margin = a.max(b) + FEATHER_PX;
        let cx = rng.gen_range(margin..size as f64 - margin);
        let cy = rng.gen_range(margin..size as f64 - margin);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (ct, st) = (theta.cos(), theta.sin());
        let mut alpha = Vec::with_capacity(size * size);
        let mut mask = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let u = dx * ct + dy * st;
                let v = -dx * st + dy * ct;
                let r = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
                let dist = (r - 1.0) * a.min(b);
                mask.push(r <= 1.0);
                alpha.push(if r <= 1.0 { 1.0 } else { (1.0 - dist / FEATHER_PX).max(0.0) });
            }
        }
        let frac = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
        if (0.05..=0.40).contains(&frac) {
            return (alpha, mask);
        }
    }
}

/// Spliced sample and the untouched real base it was built from.
pub fn gen_fake_with_base(seed: u64, size: usize) -> (ForgerySample, RgbImage) {
    let base = gen_real(mix_seed(seed, 2), size).image;
    let donor = gen_real(mix_seed(seed, 3), size).image;
    let donor = jpeg_luma_roundtrip(&gaussian_blur(&donor, SPLICE_BLUR_SIGMA, 3), SPLICE_QUALITY);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 4));
    let (alpha, mask) = ellipse_alpha(size, &mut rng);
    let mut image = base.clone();
    for (k, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            let (p, q) = (base.pixels()[k], donor.pixels()[k]);
            image.pixels_mut()[k] = std::array::from_fn(|c| to_u8(a * f64::from(q[c]) + (1.0 - a) * f64::from(p[c])));
        }
    }
    let sample = ForgerySample {
        id: format!("fake-{seed}"),
        image,
        label: Label::Fake,
        mask,
    };
    (sample, base)
}

pub fn gen_fake(seed: u64, size: usize) -> ForgerySample {
    gen_fake_with_base(seed, size).0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PerturbKind {
    GaussianNoise,
    SaltPepper,
    GaussianBlur,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 3] = [PerturbKind::GaussianNoise, PerturbKind::SaltPepper, PerturbKind::GaussianBlur];

    pub fn name(self) -> &'static str {
        match self {
            PerturbKind::GaussianNoise => "gaussian_noise",
            PerturbKind::SaltPepper => "salt_pepper",
            PerturbKind::GaussianBlur => "gaussian_blur",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        PerturbKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown perturbation kind '{s}'")))
    }
}

/// Evaluation-time degradation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    /// Noise σ (0–255 scale), flip probability, or blur σ.
    pub strength: f64,
}

pub const BLUR_KERNEL: usize = 5;

impl PerturbSpec {
    pub fn default_for(kind: PerturbKind) -> Self {
        let strength = match kind {
            PerturbKind::GaussianNoise => 8.0,
            PerturbKind::SaltPepper => 0.02,
            PerturbKind::GaussianBlur => 1.5,
        };
        PerturbSpec { kind, strength }
    }

    pub fn defaults() -> Vec<PerturbSpec> {
        PerturbKind::ALL.into_iter().map(PerturbSpec::default_for).collect()
    }
}

pub fn perturb(img: &RgbImage, spec: &PerturbSpec, seed: u64) -> Result<RgbImage> {
    if spec.strength.is_nan() || spec.strength < 0.0 {
        return Err(Error::config(format!("perturbation strength {} must be >= 0", spec.strength)));
    }
    if spec.strength == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    match spec.kind {
        PerturbKind::GaussianNoise => {
            let normal = Normal::new(0.0, spec.strength).map_err(|e| Error::config(e.to_string()))?;
            for p in out.pixels_mut() {
                for v in p.iter_mut() {
                    *v = to_u8(f64::from(*v) + normal.sample(&mut rng));
                }
            }
        }
        PerturbKind::SaltPepper => {
            if spec.strength > 1.0 {
                return Err(Error::config("salt-and-pepper probability must be <= 1"));
            }
            for p in out.pixels_mut() {
                let u: f64 = rng.gen();
                if u < spec.strength / 2.0 {
                    *p = [0; 3];
                } else if u < spec.strength {
                    *p = [255; 3];
                }
            }
        }
        PerturbKind::GaussianBlur => out = gaussian_blur(img, spec.strength, BLUR_KERNEL / 2),
    }
    Ok(out)
}

/// Train / validation / test sample lists.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<ForgerySample>,
    pub val: Vec<ForgerySample>,
    pub test: Vec<ForgerySample>,
}

/// Seeds of split `split` occupy `[base + split·2^32, base + split·2^32 + n)`.
fn split_seed(seed: u64, split: u64, index: usize) -> u64 {
    seed.wrapping_mul(1 << 34).wrapping_add(split << 32).wrapping_add(index as u64)
}

fn build_split(n: usize, seed: u64, split: u64, size: usize) -> Vec<ForgerySample> {
    (0..n)
        .map(|i| {
            let s = split_seed(seed, split, i);
            if i % 2 == 0 {
                gen_real(s, size)
            } else {
                gen_fake(s, size)
            }
        })
        .collect()
}

/// Class-balanced splits (alternating real/fake) from disjoint seed ranges.
pub fn build_dataset(n_train: usize, n_val: usize, n_test: usize, seed: u64, size: usize) -> Result<Splits> {
    for (name, n) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if n < 2 || n % 2 != 0 {
            return Err(Error::config(format!(
                "{name} split size must be even and >= 2 for class balance, got {n}"
            )));
        }
    }
    if size < RgbImage::MIN_SIDE || !size.is_multiple_of(8) {
        return Err(Error::config(format!("image size must be a multiple of 8 and >= 16, got {size}")));
    }
    Ok(Splits {
        train: build_split(n_train, seed, 0, size),
        val: build_split(n_val, seed, 1, size),
        test: build_split(n_test, seed, 2, size),
    })
}

/// Writes `<dir>/<split>/<id>.ppm`, fake masks as `.pgm`, and
/// `<dir>/manifest.csv` with `path,label,mask_path` rows.
pub fn export_dataset(splits: &Splits, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut manifest = String::from("path,label,mask_path\n");
    for (name, samples) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        fs::create_dir_all(dir.join(name))?;
        for s in samples {
            let rel = format!("{name}/{}.ppm", s.id);
            s.image.write_ppm(dir.join(&rel))?;
            let mask_rel = if s.label == Label::Fake {
                let m = format!("{name}/{}_mask.pgm", s.id);
                s.mask_image().write_pgm(dir.join(&m))?;
                m
            } else {
                String::new()
            };
            let _ = writeln!(manifest, "{rel},{},{mask_rel}", s.label.as_u8());
        }
    }
    fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(())
}
