//! Dense 4-D tensors in (batch, channel, height, width) layout.

use std::fmt;

use crate::error::{Error, Result};

/// Extents of a 4-D tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Dims::new(1, 1, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn spatial(&self) -> usize {
        self.h * self.w
    }

    pub const fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub const fn index(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        ((n * self.c + c) * self.h + i) * self.w + j
    }

    pub fn with_channels(self, c: usize) -> Self {
        Dims { c, ..self }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Row-major 64-bit tensor value. Gradient bookkeeping lives in
/// [`crate::autodiff::Graph`]; this type only carries data.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::shape(format!(
                "data length {} does not match dims {dims}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Tensor::full(dims, 0.0)
    }

    pub fn full(dims: Dims, value: f64) -> Self {
        Tensor {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::full(Dims::scalar(), value)
    }

    /// Builds a tensor by evaluating `f(n, c, i, j)` at every index.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for c in 0..dims.c {
                for i in 0..dims.h {
                    for j in 0..dims.w {
                        data.push(f(n, c, i, j));
                    }
                }
            }
        }
        Tensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.dims.index(n, c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, i: usize, j: usize, value: f64) {
        let k = self.dims.index(n, c, i, j);
        self.data[k] = value;
    }

    /// Single value of a (1,1,1,1) tensor.
    pub fn item(&self) -> Result<f64> {
        if self.dims != Dims::scalar() {
            return Err(Error::shape(format!("item() on non-scalar tensor {}", self.dims)));
        }
        Ok(self.data[0])
    }

    /// Same data viewed under different dims of equal length.
    pub fn reshape(self, dims: Dims) -> Result<Self> {
        Tensor::from_vec(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Plane `(n, c)` as a contiguous slice of `h * w` values.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let start = self.dims.index(n, c, 0, 0);
        &self.data[start..start + self.dims.spatial()]
    }

    /// Sample `n` as a (1, c, h, w) tensor.
    pub fn sample(&self, n: usize) -> Tensor {
        let per = self.dims.c * self.dims.spatial();
        Tensor {
            dims: Dims::new(1, self.dims.c, self.dims.h, self.dims.w),
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("cannot stack an empty list"))?;
        let d = first.dims;
        let mut data = Vec::with_capacity(d.len() * parts.len());
        let mut n = 0;
        for p in parts {
            if (p.dims.c, p.dims.h, p.dims.w) != (d.c, d.h, d.w) {
                return Err(Error::shape(format!("stack: {} vs {}", p.dims, d)));
            }
            n += p.dims.n;
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec(Dims::new(n, d.c, d.h, d.w), data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
