//! Raw numeric kernels shared by forward and backward passes.

/// Matrix layout flag for [`gemm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Layout {
    Normal,
    Transposed,
}

/// `c = beta * c + a · b` where `a` is (m×k) and `b` is (k×n) after applying
/// each operand's layout flag. All buffers are dense row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_layout: Layout,
    b: &[f64],
    b_layout: Layout,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: output size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match a_layout {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match b_layout {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output extent of a padding-1 3×3 convolution.
pub(crate) fn conv_out(len: usize, stride: usize) -> usize {
    (len + 2 - 3) / stride + 1
}

/// Unfolds one (c, h, w) plane stack into a (c·9) × (ho·wo) patch matrix,
/// zero padding 1.
pub(crate) fn im2col3x3(x: &[f64], c: usize, h: usize, w: usize, stride: usize, cols: &mut [f64]) {
    let ho = conv_out(h, stride);
    let wo = conv_out(w, stride);
    let p = ho * wo;
    debug_assert_eq!(cols.len(), c * 9 * p);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    let out = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        *o = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3x3`]: scatters patch-matrix gradients back onto the
/// input planes (accumulating).
pub(crate) fn col2im3x3(cols: &[f64], c: usize, h: usize, w: usize, stride: usize, dx: &mut [f64]) {
    let ho = conv_out(h, stride);
    let wo = conv_out(w, stride);
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Flat indices (within one h×w plane) of the replicate-padded k×k window
/// centred on (i, j), in row-major window order.
pub(crate) fn window_indices(h: usize, w: usize, i: usize, j: usize, k: usize, out: &mut Vec<usize>) {
    out.clear();
    let r = (k / 2) as isize;
    for dy in -r..=r {
        let y = (i as isize + dy).clamp(0, h as isize - 1) as usize;
        for dx in -r..=r {
            let x = (j as isize + dx).clamp(0, w as isize - 1) as usize;
            out.push(y * w + x);
        }
    }
}

/// Median filter of one plane. Returns filtered values and, for each output,
/// the input index that supplied the median (lowest index on ties).
pub(crate) fn median_plane(plane: &[f64], h: usize, w: usize, k: usize) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(h * w);
    let mut routes = Vec::with_capacity(h * w);
    let mut idx = Vec::with_capacity(k * k);
    let mut vals = Vec::with_capacity(k * k);
    let mid = k * k / 2;
    for i in 0..h {
        for j in 0..w {
            window_indices(h, w, i, j, k, &mut idx);
            vals.clear();
            vals.extend(idx.iter().map(|&p| plane[p]));
            let (_, m, _) = vals.select_nth_unstable_by(mid, f64::total_cmp);
            let m = *m;
            let src = idx
                .iter()
                .copied()
                .filter(|&p| plane[p].to_bits() == m.to_bits())
                .min()
                .expect("median value comes from the window");
            out.push(m);
            routes.push(src);
        }
    }
    (out, routes)
}

/// Mean filter of one plane with replicate padding.
pub(crate) fn mean_plane(plane: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let mut idx = Vec::with_capacity(k * k);
    let norm = (k * k) as f64;
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            window_indices(h, w, i, j, k, &mut idx);
            out.push(idx.iter().map(|&p| plane[p]).sum::<f64>() / norm);
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
