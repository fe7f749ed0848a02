use super::kernels::{self, gemm, Layout};
use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

/// Smoothing filter used by the noise extractor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Median,
    Mean,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Median => "median",
            FilterKind::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(FilterKind::Median),
            "mean" => Ok(FilterKind::Mean),
            other => Err(Error::config(format!("unknown filter kind '{other}'"))),
        }
    }
}

pub(super) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Pointwise {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Depthwise {
        x: Var,
        scale: Var,
        bias: Option<Var>,
    },
    Conv3x3 {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    },
    Median {
        x: Var,
        routes: Vec<usize>,
    },
    Mean {
        x: Var,
        kernel: usize,
    },
    Gap(Var),
    Gmp {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat(Var, Var),
    Slice {
        x: Var,
        start: usize,
    },
    Expand(Var),
    Sum(Var),
    BceLogits {
        logits: Var,
        labels: Vec<f64>,
    },
}

fn same_dims(g: &Graph, a: Var, b: Var, op: &str) -> Result<Dims> {
    let (da, db) = (g.dims(a), g.dims(b));
    if da != db {
        return Err(Error::shape(format!("{op}: {da} vs {db}")));
    }
    Ok(da)
}

fn channel_vector(g: &Graph, v: Var, c: usize, what: &str) -> Result<()> {
    let d = g.dims(v);
    if d != Dims::new(1, c, 1, 1) {
        return Err(Error::shape(format!(
            "{what}: expected per-channel dims (1, {c}, 1, 1), got {d}"
        )));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.dims(), data).expect("operands share dims")
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims(self, a, b, "add")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push_op(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims(self, a, b, "sub")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push_op(out, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims(self, a, b, "mul")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push_op(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push_op(out, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::sigmoid);
        self.push_op(out, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push_op(out, Op::Relu(x))
    }

    /// 1×1 convolution. `w` has dims (c_out, c_in, 1, 1); `b` is (1, c_out, 1, 1).
    pub fn conv_pointwise(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let dx = self.dims(x);
        let dw = self.dims(w);
        if dw.c != dx.c || dw.h != 1 || dw.w != 1 {
            return Err(Error::shape(format!(
                "conv_pointwise: weight {dw} does not map {} input channels",
                dx.c
            )));
        }
        let c_out = dw.n;
        if let Some(b) = b {
            channel_vector(self, b, c_out, "conv_pointwise bias")?;
        }
        let od = dx.with_channels(c_out);
        let p = dx.spatial();
        let mut out = vec![0.0; od.len()];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        for n in 0..dx.n {
            let dst = &mut out[n * c_out * p..(n + 1) * c_out * p];
            if let Some(b) = b {
                for (k, &bk) in self.value(b).data().iter().enumerate() {
                    dst[k * p..(k + 1) * p].fill(bk);
                }
            }
            let src = &xv[n * dx.c * p..(n + 1) * dx.c * p];
            gemm(c_out, dx.c, p, wv, Layout::Normal, src, Layout::Normal, 1.0, dst);
        }
        let out = Tensor::from_vec(od, out)?;
        Ok(self.push_op(out, Op::Pointwise { x, w, b }))
    }

    /// Per-channel affine map `scale[k]·x + bias[k]` (depth-wise 1×1 conv).
    pub fn conv_depthwise_1x1(&mut self, x: Var, scale: Var, bias: Option<Var>) -> Result<Var> {
        let d = self.dims(x);
        channel_vector(self, scale, d.c, "conv_depthwise_1x1 scale")?;
        if let Some(b) = bias {
            channel_vector(self, b, d.c, "conv_depthwise_1x1 bias")?;
        }
        let s = self.value(scale).data();
        let bv = bias.map(|b| self.value(b).data());
        let xv = self.value(x);
        let out = Tensor::from_fn(d, |n, c, i, j| {
            s[c] * xv.at(n, c, i, j) + bv.map_or(0.0, |b| b[c])
        });
        Ok(self.push_op(out, Op::Depthwise { x, scale, bias }))
    }

    /// 3×3 cross-correlation with zero padding 1. `w` is (c_out, c_in, 3, 3).
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        if !(1..=2).contains(&stride) {
            return Err(Error::shape(format!("conv3x3: stride {stride} not in {{1, 2}}")));
        }
        let dx = self.dims(x);
        let dw = self.dims(w);
        if dw.c != dx.c || dw.h != 3 || dw.w != 3 {
            return Err(Error::shape(format!(
                "conv3x3: weight {dw} incompatible with input {dx}"
            )));
        }
        let c_out = dw.n;
        if let Some(b) = b {
            channel_vector(self, b, c_out, "conv3x3 bias")?;
        }
        let ho = kernels::conv_out(dx.h, stride);
        let wo = kernels::conv_out(dx.w, stride);
        let p = ho * wo;
        let k = dx.c * 9;
        let od = Dims::new(dx.n, c_out, ho, wo);
        let mut out = vec![0.0; od.len()];
        let mut cols = vec![0.0; k * p];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let in_per = dx.c * dx.spatial();
        for n in 0..dx.n {
            kernels::im2col3x3(&xv[n * in_per..(n + 1) * in_per], dx.c, dx.h, dx.w, stride, &mut cols);
            let dst = &mut out[n * c_out * p..(n + 1) * c_out * p];
            if let Some(b) = b {
                for (co, &bk) in self.value(b).data().iter().enumerate() {
                    dst[co * p..(co + 1) * p].fill(bk);
                }
            }
            gemm(c_out, k, p, wv, Layout::Normal, &cols, Layout::Normal, 1.0, dst);
        }
        let out = Tensor::from_vec(od, out)?;
        Ok(self.push_op(out, Op::Conv3x3 { x, w, b, stride }))
    }

    /// Per-channel k×k median or mean filter with replicate borders.
    pub fn filter(&mut self, x: Var, kind: FilterKind, kernel: usize) -> Result<Var> {
        if !matches!(kernel, 3 | 5 | 7) {
            return Err(Error::config(format!(
                "filter kernel must be 3, 5 or 7, got {kernel}"
            )));
        }
        let d = self.dims(x);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(d.len());
        match kind {
            FilterKind::Median => {
                let mut routes = Vec::with_capacity(d.len());
                for n in 0..d.n {
                    for c in 0..d.c {
                        let base = d.index(n, c, 0, 0);
                        let (vals, src) = kernels::median_plane(xv.plane(n, c), d.h, d.w, kernel);
                        out.extend(vals);
                        routes.extend(src.into_iter().map(|s| base + s));
                    }
                }
                let out = Tensor::from_vec(d, out)?;
                Ok(self.push_op(out, Op::Median { x, routes }))
            }
            FilterKind::Mean => {
                for n in 0..d.n {
                    for c in 0..d.c {
                        out.extend(kernels::mean_plane(xv.plane(n, c), d.h, d.w, kernel));
                    }
                }
                let out = Tensor::from_vec(d, out)?;
                Ok(self.push_op(out, Op::Mean { x, kernel }))
            }
        }
    }

    pub fn median_filter(&mut self, x: Var, kernel: usize) -> Result<Var> {
        self.filter(x, FilterKind::Median, kernel)
    }

    pub fn mean_filter(&mut self, x: Var, kernel: usize) -> Result<Var> {
        self.filter(x, FilterKind::Mean, kernel)
    }

    /// Global average pooling to (n, c, 1, 1).
    pub fn gap(&mut self, x: Var) -> Var {
        let d = self.dims(x);
        let xv = self.value(x);
        let s = d.spatial() as f64;
        let out = Tensor::from_fn(Dims::new(d.n, d.c, 1, 1), |n, c, _, _| {
            xv.plane(n, c).iter().sum::<f64>() / s
        });
        self.push_op(out, Op::Gap(x))
    }

    /// Global max pooling to (n, c, 1, 1); ties resolve to the first
    /// row-major position.
    pub fn gmp(&mut self, x: Var) -> Var {
        let d = self.dims(x);
        let xv = self.value(x);
        let mut argmax = Vec::with_capacity(d.n * d.c);
        let mut vals = Vec::with_capacity(d.n * d.c);
        for n in 0..d.n {
            for c in 0..d.c {
                let plane = xv.plane(n, c);
                let mut best = 0;
                for (k, &v) in plane.iter().enumerate() {
                    if v > plane[best] {
                        best = k;
                    }
                }
                argmax.push(d.index(n, c, 0, 0) + best);
                vals.push(plane[best]);
            }
        }
        let out = Tensor::from_vec(Dims::new(d.n, d.c, 1, 1), vals).expect("pooled dims");
        self.push_op(out, Op::Gmp { x, argmax })
    }

    /// Channel-wise concatenation.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.dims(a), self.dims(b));
        if (da.n, da.h, da.w) != (db.n, db.h, db.w) {
            return Err(Error::shape(format!("concat_channels: {da} vs {db}")));
        }
        let od = da.with_channels(da.c + db.c);
        let (av, bv) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(od.len());
        for n in 0..da.n {
            let pa = da.c * da.spatial();
            let pb = db.c * db.spatial();
            data.extend_from_slice(&av.data()[n * pa..(n + 1) * pa]);
            data.extend_from_slice(&bv.data()[n * pb..(n + 1) * pb]);
        }
        let out = Tensor::from_vec(od, data)?;
        Ok(self.push_op(out, Op::Concat(a, b)))
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let d = self.dims(x);
        if start + len > d.c {
            return Err(Error::shape(format!(
                "slice_channels: {start}..{} out of {} channels",
                start + len,
                d.c
            )));
        }
        let xv = self.value(x);
        let out = Tensor::from_fn(d.with_channels(len), |n, c, i, j| xv.at(n, start + c, i, j));
        Ok(self.push_op(out, Op::Slice { x, start }))
    }

    /// Repeats singleton channel and/or spatial axes up to `to`.
    pub fn expand(&mut self, x: Var, to: Dims) -> Result<Var> {
        let d = self.dims(x);
        let ok = d.n == to.n
            && (d.c == to.c || d.c == 1)
            && (d.h == to.h || d.h == 1)
            && (d.w == to.w || d.w == 1);
        if !ok {
            return Err(Error::shape(format!("expand: cannot expand {d} to {to}")));
        }
        let xv = self.value(x);
        let out = Tensor::from_fn(to, |n, c, i, j| {
            xv.at(n, c.min(d.c - 1), i.min(d.h - 1), j.min(d.w - 1))
        });
        Ok(self.push_op(out, Op::Expand(x)))
    }

    /// Sum of all elements as a scalar node.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push_op(out, Op::Sum(x))
    }

    /// Mean binary cross-entropy of sigmoid(logits) against labels, using
    /// `max(z,0) − z·y + ln(1 + e^{−|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let d = self.dims(logits);
        if labels.is_empty() {
            return Err(Error::Usage("bce_with_logits on an empty batch".into()));
        }
        if d.len() != labels.len() || d.c != 1 || d.h != 1 || d.w != 1 {
            return Err(Error::shape(format!(
                "bce_with_logits: logits {d} vs {} labels",
                labels.len()
            )));
        }
        let total: f64 = self
            .value(logits)
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let out = Tensor::scalar(total / labels.len() as f64);
        Ok(self.push_op(
            out,
            Op::BceLogits {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }
}

impl Op {
    pub(super) fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Concat(a, b) => vec![a, b],
            Op::Scale(x, _)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::Gap(x)
            | Op::Expand(x)
            | Op::Sum(x)
            | Op::Median { x, .. }
            | Op::Mean { x, .. }
            | Op::Gmp { x, .. }
            | Op::Slice { x, .. } => vec![x],
            Op::BceLogits { logits, .. } => vec![logits],
            Op::Pointwise { x, w, b } | Op::Conv3x3 { x, w, b, .. } => {
                let mut v = vec![x, w];
                v.extend(b);
                v
            }
            Op::Depthwise { x, scale, bias } => {
                let mut v = vec![x, scale];
                v.extend(bias);
                v
            }
        }
    }

    /// Gradient contributions to each input that requires one.
    pub(super) fn backward(&self, g: &Graph, out: &Tensor, up: &Tensor) -> Vec<(Var, Tensor)> {
        let wants = |v: Var| g.requires_grad(v);
        let mut res = Vec::new();
        match *self {
            Op::Leaf => {}
            Op::Add(a, b) => {
                res.push((a, up.clone()));
                res.push((b, up.clone()));
            }
            Op::Sub(a, b) => {
                res.push((a, up.clone()));
                if wants(b) {
                    res.push((b, up.map(|v| -v)));
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    res.push((a, zip_map(up, g.value(b), |u, y| u * y)));
                }
                if wants(b) {
                    res.push((b, zip_map(up, g.value(a), |u, x| u * x)));
                }
            }
            Op::Scale(x, s) => res.push((x, up.map(|v| v * s))),
            Op::Sigmoid(x) => res.push((x, zip_map(up, out, |u, s| u * s * (1.0 - s)))),
            Op::Relu(x) => res.push((x, zip_map(up, g.value(x), |u, v| if v > 0.0 { u } else { 0.0 }))),
            Op::Pointwise { x, w, b } => {
                let dx = g.dims(x);
                let c_out = g.dims(w).n;
                let p = dx.spatial();
                let xv = g.value(x).data();
                let ud = up.data();
                if wants(w) {
                    let mut dw = vec![0.0; c_out * dx.c];
                    for n in 0..dx.n {
                        let un = &ud[n * c_out * p..(n + 1) * c_out * p];
                        let xn = &xv[n * dx.c * p..(n + 1) * dx.c * p];
                        gemm(c_out, p, dx.c, un, Layout::Normal, xn, Layout::Transposed, 1.0, &mut dw);
                    }
                    res.push((w, Tensor::from_vec(g.dims(w), dw).expect("weight dims")));
                }
                if let Some(b) = b.filter(|&b| wants(b)) {
                    res.push((b, channel_sums(up)));
                }
                if wants(x) {
                    let wv = g.value(w).data();
                    let mut gx = vec![0.0; dx.len()];
                    for n in 0..dx.n {
                        let un = &ud[n * c_out * p..(n + 1) * c_out * p];
                        let gn = &mut gx[n * dx.c * p..(n + 1) * dx.c * p];
                        gemm(dx.c, c_out, p, wv, Layout::Transposed, un, Layout::Normal, 0.0, gn);
                    }
                    res.push((x, Tensor::from_vec(dx, gx).expect("input dims")));
                }
            }
            Op::Depthwise { x, scale, bias } => {
                let d = g.dims(x);
                let s = g.value(scale).data();
                let xv = g.value(x);
                if wants(x) {
                    res.push((x, Tensor::from_fn(d, |n, c, i, j| s[c] * up.at(n, c, i, j))));
                }
                if wants(scale) {
                    let prod = zip_map(up, xv, |u, v| u * v);
                    res.push((scale, channel_sums(&prod)));
                }
                if let Some(b) = bias.filter(|&b| wants(b)) {
                    res.push((b, channel_sums(up)));
                }
            }
            Op::Conv3x3 { x, w, b, stride } => {
                let dx = g.dims(x);
                let dw = g.dims(w);
                let c_out = dw.n;
                let od = up.dims();
                let p = od.spatial();
                let k = dx.c * 9;
                let xv = g.value(x).data();
                let wv = g.value(w).data();
                let ud = up.data();
                let in_per = dx.c * dx.spatial();
                let mut cols = vec![0.0; k * p];
                let mut dwv = wants(w).then(|| vec![0.0; dw.len()]);
                let mut gx = wants(x).then(|| vec![0.0; dx.len()]);
                for n in 0..dx.n {
                    let un = &ud[n * c_out * p..(n + 1) * c_out * p];
                    if let Some(dwv) = dwv.as_mut() {
                        kernels::im2col3x3(&xv[n * in_per..(n + 1) * in_per], dx.c, dx.h, dx.w, stride, &mut cols);
                        gemm(c_out, p, k, un, Layout::Normal, &cols, Layout::Transposed, 1.0, dwv);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(k, c_out, p, wv, Layout::Transposed, un, Layout::Normal, 0.0, &mut cols);
                        kernels::col2im3x3(&cols, dx.c, dx.h, dx.w, stride, &mut gx[n * in_per..(n + 1) * in_per]);
                    }
                }
                if let Some(dwv) = dwv {
                    res.push((w, Tensor::from_vec(dw, dwv).expect("weight dims")));
                }
                if let Some(b) = b.filter(|&b| wants(b)) {
                    res.push((b, channel_sums(up)));
                }
                if let Some(gx) = gx {
                    res.push((x, Tensor::from_vec(dx, gx).expect("input dims")));
                }
            }
            Op::Median { x, ref routes } => {
                let mut gx = Tensor::zeros(g.dims(x));
                let gd = gx.data_mut();
                for (&src, &u) in routes.iter().zip(up.data()) {
                    gd[src] += u;
                }
                res.push((x, gx));
            }
            Op::Mean { x, kernel } => {
                let d = g.dims(x);
                let mut gx = Tensor::zeros(d);
                let norm = (kernel * kernel) as f64;
                let mut idx = Vec::with_capacity(kernel * kernel);
                for n in 0..d.n {
                    for c in 0..d.c {
                        let base = d.index(n, c, 0, 0);
                        for i in 0..d.h {
                            for j in 0..d.w {
                                let u = up.at(n, c, i, j) / norm;
                                kernels::window_indices(d.h, d.w, i, j, kernel, &mut idx);
                                let gd = gx.data_mut();
                                for &p in &idx {
                                    gd[base + p] += u;
                                }
                            }
                        }
                    }
                }
                res.push((x, gx));
            }
            Op::Gap(x) => {
                let d = g.dims(x);
                let s = d.spatial() as f64;
                res.push((x, Tensor::from_fn(d, |n, c, _, _| up.at(n, c, 0, 0) / s)));
            }
            Op::Gmp { x, ref argmax } => {
                let mut gx = Tensor::zeros(g.dims(x));
                let gd = gx.data_mut();
                for (&src, &u) in argmax.iter().zip(up.data()) {
                    gd[src] += u;
                }
                res.push((x, gx));
            }
            Op::Concat(a, b) => {
                let (da, db) = (g.dims(a), g.dims(b));
                if wants(a) {
                    res.push((a, Tensor::from_fn(da, |n, c, i, j| up.at(n, c, i, j))));
                }
                if wants(b) {
                    res.push((b, Tensor::from_fn(db, |n, c, i, j| up.at(n, da.c + c, i, j))));
                }
            }
            Op::Slice { x, start } => {
                let d = g.dims(x);
                let len = up.dims().c;
                res.push((
                    x,
                    Tensor::from_fn(d, |n, c, i, j| {
                        if c >= start && c < start + len {
                            up.at(n, c - start, i, j)
                        } else {
                            0.0
                        }
                    }),
                ));
            }
            Op::Expand(x) => {
                let d = g.dims(x);
                let od = up.dims();
                let mut gx = Tensor::zeros(d);
                for n in 0..od.n {
                    for c in 0..od.c {
                        for i in 0..od.h {
                            for j in 0..od.w {
                                let k = d.index(n, c.min(d.c - 1), i.min(d.h - 1), j.min(d.w - 1));
                                gx.data_mut()[k] += up.at(n, c, i, j);
                            }
                        }
                    }
                }
                res.push((x, gx));
            }
            Op::Sum(x) => {
                let u = up.data()[0];
                res.push((x, Tensor::full(g.dims(x), u)));
            }
            Op::BceLogits { logits, ref labels } => {
                let u = up.data()[0] / labels.len() as f64;
                let zv = g.value(logits);
                let data = zv
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| u * (kernels::sigmoid(z) - y))
                    .collect();
                res.push((logits, Tensor::from_vec(zv.dims(), data).expect("logit dims")));
            }
        }
        res
    }
}

/// Sums a tensor over batch and spatial axes into a (1, c, 1, 1) tensor.
fn channel_sums(t: &Tensor) -> Tensor {
    let d = t.dims();
    let mut acc = vec![0.0; d.c];
    for n in 0..d.n {
        for (c, a) in acc.iter_mut().enumerate() {
            *a += t.plane(n, c).iter().sum::<f64>();
        }
    }
    Tensor::from_vec(Dims::new(1, d.c, 1, 1), acc).expect("channel dims")
}
