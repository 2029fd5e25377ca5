//! Raw loops behind the graph ops. Everything is row-major.

use super::Element;
use crate::error::{Error, Result};

/// `C (m x n) = op(A) (m x k) * op(B) (k x n)`, optionally accumulating into C.
///
/// With `trans_a` the buffer `a` holds a `k x m` matrix; with `trans_b`,
/// `b` holds `n x k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths were asserted above, strides describe in-bounds views
    // of those buffers, and `c` is a distinct mutable borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d input must be [N,C,H,W], got {input:?}"
            )));
        }
        if weight.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d weight must be [F,C,kh,kw], got {weight:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
        let (f, wc, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        if c != wc {
            return Err(Error::Shape(format!(
                "conv2d channel axis: input axis 1 is {c} but weight axis 1 is {wc}"
            )));
        }
        if h + 2 * padding < kh {
            return Err(Error::Shape(format!(
                "conv2d height axis: padded input height {} is smaller than kernel height {kh}",
                h + 2 * padding
            )));
        }
        if w + 2 * padding < kw {
            return Err(Error::Shape(format!(
                "conv2d width axis: padded input width {} is smaller than kernel width {kw}",
                w + 2 * padding
            )));
        }
        Ok(Self {
            batch: n,
            in_channels: c,
            height: h,
            width: w,
            filters: f,
            kh,
            kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn out_spatial(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_image(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    /// A 1x1, stride-1, unpadded convolution reads its input directly as the
    /// column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.filters, self.out_h, self.out_w]
    }
}

/// Unfolds one image `[C,H,W]` into `[C*kh*kw, out_h*out_w]`.
fn im2col<T: Element>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let ohw = g.out_spatial();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto an image.
fn col2im_add<T: Element>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let ohw = g.out_spatial();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Input channel counts up to this are accumulated per channel.
pub const PER_CHANNEL_MAX: usize = 8;

pub fn conv2d_forward<T: Element>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let ohw = g.out_spatial();
    let plen = g.patch_len();
    let mut out = vec![T::zero(); g.batch * g.filters * ohw];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); plen * ohw]
    };
    // Few-channel inputs are summed one channel at a time, so appending or
    // interleaving all-zero channels leaves every output bit-identical.
    let per_channel: Option<Vec<Vec<T>>> = (!g.is_pointwise() && g.in_channels <= PER_CHANNEL_MAX).then(|| {
        let kk = plen / g.in_channels;
        (0..g.in_channels)
            .map(|c| (0..g.filters).flat_map(|f| weight[f * plen + c * kk..][..kk].iter().copied()).collect())
            .collect()
    });
    for n in 0..g.batch {
        let image = &input[n * g.in_image()..(n + 1) * g.in_image()];
        let dst = &mut out[n * g.filters * ohw..(n + 1) * g.filters * ohw];
        let cols_ref: &[T] = if g.is_pointwise() {
            image
        } else {
            im2col(g, image, &mut cols);
            &cols
        };
        match &per_channel {
            Some(ws) => {
                let kk = plen / g.in_channels;
                for (c, w) in ws.iter().enumerate() {
                    gemm(g.filters, kk, ohw, w, false, &cols_ref[c * kk * ohw..][..kk * ohw], false, dst, c > 0);
                }
            }
            None => gemm(g.filters, plen, ohw, weight, false, cols_ref, false, dst, false),
        }
        if let Some(b) = bias {
            for (f, row) in dst.chunks_mut(ohw).enumerate() {
                row.iter_mut().for_each(|v| *v = *v + b[f]);
            }
        }
    }
    out
}

/// Returns `(d_input, d_weight, d_bias)`; only the requested pieces are computed.
pub fn conv2d_backward<T: Element>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let ohw = g.out_spatial();
    let plen = g.patch_len();
    let mut d_input = need_input.then(|| vec![T::zero(); input.len()]);
    let mut d_weight = need_weight.then(|| vec![T::zero(); weight.len()]);
    let mut d_bias = need_bias.then(|| vec![T::zero(); g.filters]);
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { plen * ohw }];
    let mut d_cols = vec![T::zero(); if need_input && !g.is_pointwise() { plen * ohw } else { 0 }];

    for n in 0..g.batch {
        let image = &input[n * g.in_image()..(n + 1) * g.in_image()];
        let gout = &grad_out[n * g.filters * ohw..(n + 1) * g.filters * ohw];
        if let Some(dw) = d_weight.as_mut() {
            let cols_ref: &[T] = if g.is_pointwise() {
                image
            } else {
                im2col(g, image, &mut cols);
                &cols
            };
            gemm(g.filters, ohw, plen, gout, false, cols_ref, true, dw, true);
        }
        if let Some(db) = d_bias.as_mut() {
            for (f, row) in gout.chunks(ohw).enumerate() {
                db[f] = db[f] + row.iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = d_input.as_mut() {
            let dst = &mut dx[n * g.in_image()..(n + 1) * g.in_image()];
            if g.is_pointwise() {
                gemm(plen, g.filters, ohw, weight, true, gout, false, dst, true);
            } else {
                gemm(plen, g.filters, ohw, weight, true, gout, false, &mut d_cols, false);
                col2im_add(g, &d_cols, dst);
            }
        }
    }
    (d_input, d_weight, d_bias)
}

#[derive(Debug, Clone, Copy)]
pub struct PoolGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeometry {
    pub fn new(input: &[usize], kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 {
            return Err(Error::Shape(format!(
                "max_pool2d input must be [N,C,H,W], got {input:?}"
            )));
        }
        if kernel == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "max_pool2d kernel and stride must be positive".into(),
            ));
        }
        if padding >= kernel {
            return Err(Error::InvalidArgument(format!(
                "max_pool2d padding {padding} must be smaller than kernel {kernel}"
            )));
        }
        let (h, w) = (input[2], input[3]);
        if h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(Error::Shape(format!(
                "max_pool2d spatial axes: input {h}x{w} (padding {padding}) smaller than kernel {kernel}"
            )));
        }
        Ok(Self {
            batch: input[0],
            channels: input[1],
            height: h,
            width: w,
            kernel,
            stride,
            padding,
            out_h: (h + 2 * padding - kernel) / stride + 1,
            out_w: (w + 2 * padding - kernel) / stride + 1,
        })
    }
}

/// Max pooling with implicit `-inf` padding. Returns values and, for each
/// output, the flat input index it was taken from.
pub fn max_pool2d_forward<T: Element>(p: &PoolGeometry, input: &[T]) -> (Vec<T>, Vec<usize>) {
    let planes = p.batch * p.channels;
    let mut out = Vec::with_capacity(planes * p.out_h * p.out_w);
    let mut argmax = Vec::with_capacity(out.capacity());
    let pad = p.padding as isize;
    for plane in 0..planes {
        let base = plane * p.height * p.width;
        for oy in 0..p.out_h {
            for ox in 0..p.out_w {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ki in 0..p.kernel {
                    let iy = (oy * p.stride + ki) as isize - pad;
                    if iy < 0 || iy >= p.height as isize {
                        continue;
                    }
                    for kj in 0..p.kernel {
                        let ix = (ox * p.stride + kj) as isize - pad;
                        if ix < 0 || ix >= p.width as isize {
                            continue;
                        }
                        let idx = base + iy as usize * p.width + ix as usize;
                        if best_idx == usize::MAX || input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_mm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; a.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let expected = naive_mm(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let lhs = if ta { &at } else { &a };
            let rhs = if tb { &bt } else { &b };
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, lhs, ta, rhs, tb, &mut c, false);
            for (x, y) in c.iter().zip(&expected) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_size_formula() {
        let g = ConvGeometry::new(&[1, 3, 224, 224], &[64, 3, 7, 7], 2, 3).unwrap();
        assert_eq!((g.out_h, g.out_w), (112, 112));
        let p = PoolGeometry::new(&[1, 64, 112, 112], 3, 2, 1).unwrap();
        assert_eq!((p.out_h, p.out_w), (56, 56));
    }

    #[test]
    fn geometry_names_bad_axis() {
        let err = ConvGeometry::new(&[1, 3, 8, 8], &[4, 2, 3, 3], 1, 0).unwrap_err();
        assert!(err.to_string().contains("channel axis"), "{err}");
        let err = ConvGeometry::new(&[1, 3, 2, 8], &[4, 3, 5, 3], 1, 1).unwrap_err();
        assert!(err.to_string().contains("height axis"), "{err}");
    }
}
