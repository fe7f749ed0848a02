//! Grad-CAM and enhancement-residual heatmaps.

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};
use crate::net::{ModuleKind, PelNetwork, StreamKind};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeatKind {
    CamRgb,
    CamFreq,
    SelfResidual,
    MutualResidual,
}

impl HeatKind {
    pub fn name(self) -> &'static str {
        match self {
            HeatKind::CamRgb => "cam_rgb",
            HeatKind::CamFreq => "cam_freq",
            HeatKind::SelfResidual => "self_residual",
            HeatKind::MutualResidual => "mutual_residual",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    pub kind: HeatKind,
    pub stream: StreamKind,
    /// 1-based source block.
    pub block: usize,
    pub width: usize,
    pub height: usize,
    /// Min-max normalized values in [0, 1], row-major.
    pub values: Vec<f64>,
    /// Values before normalization.
    pub raw: Vec<f64>,
}

/// Rescales to [0, 1]; a constant map becomes all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !range.is_finite() || range <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
}

/// Nearest-neighbour resize of a row-major grid.
pub fn upsample_nearest(values: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let sy = y * h / out_h;
        for x in 0..out_w {
            out.push(values[sy * w + x * w / out_w]);
        }
    }
    out
}

/// "Hot" colour map: black, red, yellow, white.
pub fn heat_color(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    [(3.0 * v).min(1.0), (3.0 * v - 1.0).clamp(0.0, 1.0), (3.0 * v - 2.0).clamp(0.0, 1.0)].map(|c| c * 255.0)
}

impl HeatMap {
    fn new(kind: HeatKind, stream: StreamKind, block: usize, width: usize, height: usize, raw: Vec<f64>) -> Self {
        HeatMap {
            kind,
            stream,
            block,
            width,
            height,
            values: min_max_normalize(&raw),
            raw,
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn raw_mean(&self) -> f64 {
        self.raw.iter().sum::<f64>() / self.raw.len() as f64
    }

    /// Nearest-neighbour resize of both normalized and raw values.
    pub fn upsampled(&self, width: usize, height: usize) -> HeatMap {
        HeatMap {
            width,
            height,
            values: upsample_nearest(&self.values, self.width, self.height, width, height),
            raw: upsample_nearest(&self.raw, self.width, self.height, width, height),
            ..self.clone()
        }
    }

    /// Means of the normalized map inside and outside a same-size mask.
    pub fn inside_outside(&self, mask: &[bool]) -> Result<(f64, f64)> {
        if mask.len() != self.values.len() {
            return Err(Error::shape(format!(
                "mask has {} pixels, heatmap {}",
                mask.len(),
                self.values.len()
            )));
        }
        let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
        for (&v, &m) in self.values.iter().zip(mask) {
            if m {
                si += v;
                ni += 1;
            } else {
                so += v;
                no += 1;
            }
        }
        if ni == 0 || no == 0 {
            return Err(Error::input("mask must have pixels both inside and outside"));
        }
        Ok((si / ni as f64, so / no as f64))
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_unit(self.width, self.height, &self.values).expect("heatmap dims are consistent")
    }

    /// Heat colours (60 %) blended over the image (40 %); the map is resized
    /// to the image first.
    pub fn overlay(&self, img: &RgbImage) -> RgbImage {
        let map = self.upsampled(img.width(), img.height());
        let mut out = img.clone();
        for (p, &v) in out.pixels_mut().iter_mut().zip(&map.values) {
            let c = heat_color(v);
            *p = std::array::from_fn(|k| (0.6 * c[k] + 0.4 * f64::from(p[k])).round().clamp(0.0, 255.0) as u8);
        }
        out
    }
}

fn check_block(net: &PelNetwork, block: usize) -> Result<()> {
    if block == 0 || block > net.config.num_blocks {
        return Err(Error::Usage(format!(
            "block {block} out of range 1..={}",
            net.config.num_blocks
        )));
    }
    Ok(())
}

/// Grad-CAM of the fake logit on one stream's features after `block`,
/// upsampled to the input resolution.
pub fn grad_cam(net: &PelNetwork, img: &RgbImage, stream: StreamKind, block: usize) -> Result<HeatMap> {
    check_block(net, block)?;
    if net.stream(stream).is_none() {
        return Err(Error::Usage(format!("network has no {} stream", stream.name())));
    }
    let batch = net.prepare(&[img])?;
    let mut g = Graph::new();
    let fwd = net.forward(&mut g, &batch)?;
    let act = fwd.stages(stream)[block - 1];
    let grads = g.backward(fwd.logits)?;
    let a = g.value(act);
    let d = a.dims();
    let zero = Tensor::zeros(d);
    let grad = grads.get(act).unwrap_or(&zero);
    let plane = d.spatial();
    let mut cam = vec![0.0; plane];
    for c in 0..d.c {
        let alpha = grad.plane(0, c).iter().sum::<f64>() / plane as f64;
        if alpha == 0.0 {
            continue;
        }
        for (o, &v) in cam.iter_mut().zip(a.plane(0, c)) {
            *o += alpha * v;
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }
    let kind = match stream {
        StreamKind::Rgb => HeatKind::CamRgb,
        StreamKind::Freq => HeatKind::CamFreq,
    };
    Ok(HeatMap::new(kind, stream, block, d.w, d.h, cam).upsampled(img.width(), img.height()))
}

/// Channel mean of |f_out - f_in| for each stream at one enhancement site,
/// at feature-map resolution.
pub fn enhancement_residual(net: &PelNetwork, img: &RgbImage, block: usize, module: ModuleKind) -> Result<Vec<HeatMap>> {
    check_block(net, block)?;
    let batch = net.prepare(&[img])?;
    let mut g = Graph::new();
    let fwd = net.forward(&mut g, &batch)?;
    let kind = match module {
        ModuleKind::SelfEnhance => HeatKind::SelfResidual,
        ModuleKind::Mutual => HeatKind::MutualResidual,
    };
    let mut maps = Vec::new();
    for stream in [StreamKind::Rgb, StreamKind::Freq] {
        let Some(site) = fwd.site(block, stream, module) else { continue };
        let (fi, fo) = (g.value(site.input), g.value(site.output));
        let d = fi.dims();
        let mut raw = vec![0.0; d.spatial()];
        for c in 0..d.c {
            for ((r, a), b) in raw.iter_mut().zip(fi.plane(0, c)).zip(fo.plane(0, c)) {
                *r += (b - a).abs() / d.c as f64;
            }
        }
        maps.push(HeatMap::new(kind, stream, block, d.w, d.h, raw));
    }
    if maps.is_empty() {
        return Err(Error::Usage(format!(
            "block {block} has no {} enhancement module in this network",
            module.name()
        )));
    }
    Ok(maps)
}
