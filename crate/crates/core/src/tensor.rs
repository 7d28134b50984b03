//! Dense 4-D `f32` tensors and the handful of kernels the VGG19 feature stack needs.
//!
//! Convolutions are fixed to 3×3 taps, stride 1 and one pixel of zero padding;
//! pooling is fixed to 2×2 windows with stride 2. Only input gradients are
//! provided: the network weights are frozen.

use crate::error::{Error, Result};

/// Dense tensor in row-major `(n, c, h, w)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        Self::filled(n, c, h, w, 0.0)
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, value: f32) -> Result<Self> {
        check_dims([n, c, h, w])?;
        Ok(Self {
            n,
            c,
            h,
            w,
            data: vec![value; n * c * h * w],
        })
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        check_dims(dims)?;
        let [n, c, h, w] = dims;
        if data.len() != n * c * h * w {
            return Err(Error::config(format!(
                "tensor of shape {dims:?} needs {} values, got {}",
                n * c * h * w,
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    /// Tensor of the same shape as `self` with every value set to zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    /// One `h × w` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let len = self.h * self.w;
        let start = (n * self.c + c) * len;
        &self.data[start..start + len]
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor4) -> bool {
        self.dims() == other.dims()
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        ensure_same_shape("add", self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// In-place multiplication by a scalar.
    pub fn scale(&mut self, factor: f32) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// Largest absolute elementwise difference between two equally shaped tensors.
    pub fn max_abs_diff(&self, other: &Tensor4) -> Result<f32> {
        ensure_same_shape("max_abs_diff", self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

fn check_dims(dims: [usize; 4]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::config(format!(
            "tensor dimensions must all be >= 1, got {dims:?}"
        )));
    }
    Ok(())
}

pub(crate) fn ensure_same_shape(op: &str, a: &Tensor4, b: &Tensor4) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.dims(),
            b.dims()
        )))
    }
}

/// Argmax bookkeeping of a 2×2 max-pool, needed to route gradients back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_dims: [usize; 4],
    output_dims: [usize; 4],
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_dims(&self) -> [usize; 4] {
        self.input_dims
    }

    pub fn output_dims(&self) -> [usize; 4] {
        self.output_dims
    }

    /// Flat input index supplying each output cell, in output row-major order.
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

// Upper bound on the im2col scratch buffer, in floats.
const COL_BUDGET: usize = 1 << 21;

fn check_conv_kernel(op: &str, in_c: usize, kernel: &Tensor4) -> Result<()> {
    let [_, k_in, kh, kw] = kernel.dims();
    if kh != 3 || kw != 3 || k_in != in_c {
        return Err(Error::config(format!(
            "{op}: kernel {:?} incompatible with {in_c}-channel input (expected (out_c, {in_c}, 3, 3))",
            kernel.dims()
        )));
    }
    Ok(())
}

fn band_rows(k: usize, h: usize, w: usize) -> usize {
    (COL_BUDGET / (k * w)).clamp(1, h)
}

/// Fill `col` (`in_c·9 × rows·w`) with the zero-padded 3×3 neighbourhoods of
/// output rows `r0..r0 + rows`.
fn im2col(plane_stack: &[f32], in_c: usize, h: usize, w: usize, r0: usize, rows: usize, col: &mut [f32]) {
    let cols = rows * w;
    for ic in 0..in_c {
        let plane = &plane_stack[ic * h * w..(ic + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ic * 9 + ky * 3 + kx) * cols..(ic * 9 + ky * 3 + kx + 1) * cols];
                for r in 0..rows {
                    let y = (r0 + r) as isize + ky as isize - 1;
                    let dst = &mut row[r * w..(r + 1) * w];
                    if y < 0 || y >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[y as usize * w..(y as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the inverse of [`im2col`] into `plane_stack`.
fn col2im_add(col: &[f32], in_c: usize, h: usize, w: usize, r0: usize, rows: usize, plane_stack: &mut [f32]) {
    let cols = rows * w;
    for ic in 0..in_c {
        let plane = &mut plane_stack[ic * h * w..(ic + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ic * 9 + ky * 3 + kx) * cols..(ic * 9 + ky * 3 + kx + 1) * cols];
                for r in 0..rows {
                    let y = (r0 + r) as isize + ky as isize - 1;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let src = &row[r * w..(r + 1) * w];
                    let dst = &mut plane[y as usize * w..(y as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

/// 3×3, stride 1, zero-pad 1 convolution (cross-correlation, as in every deep learning framework).
///
/// `kernel` has dims `(out_c, in_c, 3, 3)`; `bias` has `out_c` entries.
pub fn conv2d_forward(input: &Tensor4, kernel: &Tensor4, bias: &[f32]) -> Result<Tensor4> {
    check_conv_kernel("conv2d_forward", input.c, kernel)?;
    let out_c = kernel.n;
    if bias.len() != out_c {
        return Err(Error::config(format!(
            "conv2d_forward: bias has {} entries, kernel {:?} needs {out_c}",
            bias.len(),
            kernel.dims()
        )));
    }
    let (h, w, in_c) = (input.h, input.w, input.c);
    let k = in_c * 9;
    let hw = h * w;
    let mut out = Tensor4::zeros(input.n, out_c, h, w)?;
    let rows_per_band = band_rows(k, h, w);
    let mut col = vec![0.0f32; k * rows_per_band * w];

    for n in 0..input.n {
        let src = &input.data[n * in_c * hw..(n + 1) * in_c * hw];
        let dst = &mut out.data[n * out_c * hw..(n + 1) * out_c * hw];
        let mut r0 = 0;
        while r0 < h {
            let rows = rows_per_band.min(h - r0);
            let cols = rows * w;
            im2col(src, in_c, h, w, r0, rows, &mut col);
            // SAFETY: every pointer/stride pair describes a region inside its
            // slice: kernel is out_c × k, col is k × cols, and the destination
            // band starts at row r0 of each out_c plane with row stride hw.
            unsafe {
                matrixmultiply::sgemm(
                    out_c,
                    k,
                    cols,
                    1.0,
                    kernel.data.as_ptr(),
                    k as isize,
                    1,
                    col.as_ptr(),
                    cols as isize,
                    1,
                    0.0,
                    dst.as_mut_ptr().add(r0 * w),
                    hw as isize,
                    1,
                );
            }
            r0 += rows;
        }
        for (plane, &b) in dst.chunks_exact_mut(hw).zip(bias) {
            plane.iter_mut().for_each(|v| *v += b);
        }
    }
    Ok(out)
}

/// Gradient of a scalar loss with respect to the input of [`conv2d_forward`],
/// given the gradient with respect to its output.
pub fn conv2d_input_grad(output_grad: &Tensor4, kernel: &Tensor4) -> Result<Tensor4> {
    let [out_c, in_c, kh, kw] = kernel.dims();
    if kh != 3 || kw != 3 || output_grad.c != out_c {
        return Err(Error::config(format!(
            "conv2d_input_grad: output grad {:?} incompatible with kernel {:?}",
            output_grad.dims(),
            kernel.dims()
        )));
    }
    let (h, w) = (output_grad.h, output_grad.w);
    let k = in_c * 9;
    let hw = h * w;
    let mut grad = Tensor4::zeros(output_grad.n, in_c, h, w)?;
    let rows_per_band = band_rows(k, h, w);
    let mut col = vec![0.0f32; k * rows_per_band * w];

    for n in 0..output_grad.n {
        let src = &output_grad.data[n * out_c * hw..(n + 1) * out_c * hw];
        let dst = &mut grad.data[n * in_c * hw..(n + 1) * in_c * hw];
        let mut r0 = 0;
        while r0 < h {
            let rows = rows_per_band.min(h - r0);
            let cols = rows * w;
            // SAFETY: kernelᵀ is read as k × out_c with strides (1, k); the
            // output-grad band is out_c × cols with row stride hw starting at
            // row r0; col holds at least k × cols floats.
            unsafe {
                matrixmultiply::sgemm(
                    k,
                    out_c,
                    cols,
                    1.0,
                    kernel.data.as_ptr(),
                    1,
                    k as isize,
                    src.as_ptr().add(r0 * w),
                    hw as isize,
                    1,
                    0.0,
                    col.as_mut_ptr(),
                    cols as isize,
                    1,
                );
            }
            col2im_add(&col, in_c, h, w, r0, rows, dst);
            r0 += rows;
        }
    }
    Ok(grad)
}

pub fn relu_forward(input: &Tensor4) -> Tensor4 {
    let mut out = input.clone();
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes the gradient where `forward_input > 0`; the subgradient at exactly 0 is 0.
///
/// The post-activation output may be passed instead of the pre-activation input:
/// both are positive at exactly the same positions.
pub fn relu_backward(output_grad: &Tensor4, forward_input: &Tensor4) -> Result<Tensor4> {
    ensure_same_shape("relu_backward", output_grad, forward_input)?;
    let mut grad = output_grad.clone();
    for (g, &x) in grad.data.iter_mut().zip(&forward_input.data) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(grad)
}

fn check_even(op: &str, input: &Tensor4) -> Result<()> {
    if input.h % 2 != 0 || input.w % 2 != 0 {
        return Err(Error::config(format!(
            "{op}: spatial dims must be even, got {}x{}",
            input.h, input.w
        )));
    }
    Ok(())
}

/// 2×2 stride-2 max-pool. Ties resolve to the first cell in row-major window order.
pub fn maxpool2x2_forward(input: &Tensor4) -> Result<(Tensor4, PoolIndices)> {
    check_even("maxpool2x2_forward", input)?;
    let (oh, ow) = (input.h / 2, input.w / 2);
    let mut out = Tensor4::zeros(input.n, input.c, oh, ow)?;
    let mut argmax = Vec::with_capacity(out.len());
    for n in 0..input.n {
        for c in 0..input.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = input.index(n, c, 2 * oy, 2 * ox);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = input.index(n, c, 2 * oy + dy, 2 * ox + dx);
                        if input.data[idx] > input.data[best] {
                            best = idx;
                        }
                    }
                    let o = out.index(n, c, oy, ox);
                    out.data[o] = input.data[best];
                    argmax.push(best);
                }
            }
        }
    }
    let indices = PoolIndices {
        input_dims: input.dims(),
        output_dims: out.dims(),
        argmax,
    };
    Ok((out, indices))
}

pub fn maxpool2x2_backward(output_grad: &Tensor4, indices: &PoolIndices) -> Result<Tensor4> {
    if output_grad.dims() != indices.output_dims {
        return Err(Error::config(format!(
            "maxpool2x2_backward: grad {:?} does not match pooled shape {:?}",
            output_grad.dims(),
            indices.output_dims
        )));
    }
    let [n, c, h, w] = indices.input_dims;
    let mut grad = Tensor4::zeros(n, c, h, w)?;
    let [_, _, oh, ow] = indices.output_dims;
    for (o, (&src, &g)) in indices.argmax.iter().zip(&output_grad.data).enumerate() {
        let (plane, rem) = (o / (oh * ow), o % (oh * ow));
        let (oy, ox) = (rem / ow, rem % ow);
        let (sp, srem) = (src / (h * w), src % (h * w));
        let (sy, sx) = (srem / w, srem % w);
        if sp != plane || sy / 2 != oy || sx / 2 != ox {
            return Err(Error::Internal(format!(
                "pool argmax {src} lies outside the window of output cell {o}"
            )));
        }
        grad.data[src] += g;
    }
    Ok(grad)
}

/// 2×2 stride-2 average pool.
pub fn avgpool2x2_forward(input: &Tensor4) -> Result<Tensor4> {
    check_even("avgpool2x2_forward", input)?;
    let (oh, ow) = (input.h / 2, input.w / 2);
    let mut out = Tensor4::zeros(input.n, input.c, oh, ow)?;
    for n in 0..input.n {
        for c in 0..input.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let s = input.at(n, c, 2 * oy, 2 * ox)
                        + input.at(n, c, 2 * oy, 2 * ox + 1)
                        + input.at(n, c, 2 * oy + 1, 2 * ox)
                        + input.at(n, c, 2 * oy + 1, 2 * ox + 1);
                    let o = out.index(n, c, oy, ox);
                    out.data[o] = 0.25 * s;
                }
            }
        }
    }
    Ok(out)
}

pub fn avgpool2x2_backward(output_grad: &Tensor4) -> Result<Tensor4> {
    let [n, c, oh, ow] = output_grad.dims();
    let mut grad = Tensor4::zeros(n, c, 2 * oh, 2 * ow)?;
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..2 * oh {
                for x in 0..2 * ow {
                    let i = grad.index(ni, ci, y, x);
                    grad.data[i] = 0.25 * output_grad.at(ni, ci, y / 2, x / 2);
                }
            }
        }
    }
    Ok(grad)
}

/// Elementwise `(1 − λ)·a + λ·b`.
///
/// The endpoints are exact: `λ = 0` returns `a` and `λ = 1` returns `b` bit for bit.
pub fn axpy_blend(a: &Tensor4, b: &Tensor4, lambda: f32) -> Result<Tensor4> {
    ensure_same_shape("axpy_blend", a, b)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!(
            "blend weight must lie in [0, 1], got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(a.clone());
    }
    if lambda == 1.0 {
        return Ok(b.clone());
    }
    let keep = 1.0 - lambda;
    let mut out = a.clone();
    for (o, &bv) in out.data.iter_mut().zip(&b.data) {
        *o = keep * *o + lambda * bv;
    }
    Ok(out)
}

/// Channelwise bilinear resize of the spatial plane with corner-aligned sampling:
/// output corners coincide with input corners.
pub fn resize_bilinear_spatial(input: &Tensor4, new_h: usize, new_w: usize) -> Result<Tensor4> {
    if new_h == 0 || new_w == 0 {
        return Err(Error::config(format!(
            "resize target must be at least 1x1, got {new_h}x{new_w}"
        )));
    }
    if new_h == input.h && new_w == input.w {
        return Ok(input.clone());
    }
    let sample = |i: usize, out_len: usize, in_len: usize| -> (usize, usize, f32) {
        if out_len == 1 || in_len == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
        let lo = (pos.floor() as usize).min(in_len - 1);
        let hi = (lo + 1).min(in_len - 1);
        (lo, hi, (pos - lo as f64) as f32)
    };
    let ys: Vec<_> = (0..new_h).map(|i| sample(i, new_h, input.h)).collect();
    let xs: Vec<_> = (0..new_w).map(|i| sample(i, new_w, input.w)).collect();
    let mut out = Tensor4::zeros(input.n, input.c, new_h, new_w)?;
    let mut o = 0;
    for n in 0..input.n {
        for c in 0..input.c {
            let plane = input.plane(n, c);
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let top = plane[y0 * input.w + x0] * (1.0 - fx) + plane[y0 * input.w + x1] * fx;
                    let bottom = plane[y1 * input.w + x0] * (1.0 - fx) + plane[y1 * input.w + x1] * fx;
                    out.data[o] = top * (1.0 - fy) + bottom * fy;
                    o += 1;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4 {
        let len = dims.iter().product();
        Tensor4::from_vec(dims, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn naive_conv(input: &Tensor4, kernel: &Tensor4, bias: &[f32]) -> Tensor4 {
        let [n, c, h, w] = input.dims();
        let oc = kernel.batch();
        let mut out = Tensor4::zeros(n, oc, h, w).unwrap();
        for ni in 0..n {
            for o in 0..oc {
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = bias[o] as f64;
                        for ic in 0..c {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (sy, sx) = (y as isize + ky - 1, x as isize + kx - 1);
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    acc += (input.at(ni, ic, sy as usize, sx as usize)
                                        * kernel.at(o, ic, ky as usize, kx as usize))
                                        as f64;
                                }
                            }
                        }
                        let i = out.index(ni, o, y, x);
                        out.data_mut()[i] = acc as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_of_zero_input_is_zero() {
        let input = Tensor4::zeros(1, 1, 3, 3).unwrap();
        let kernel = Tensor4::filled(1, 1, 3, 3, 0.7).unwrap();
        let out = conv2d_forward(&input, &kernel, &[0.0]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_ones_counts_window_overlap() {
        let input = Tensor4::filled(1, 1, 3, 3, 1.0).unwrap();
        let kernel = Tensor4::filled(1, 1, 3, 3, 1.0).unwrap();
        let out = conv2d_forward(&input, &kernel, &[0.0]).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
        assert_eq!(out.data(), naive_conv(&input, &kernel, &[0.0]).data());
    }

    #[test]
    fn identity_kernel_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random([1, 1, 5, 4], &mut rng);
        let mut kernel = Tensor4::zeros(1, 1, 3, 3).unwrap();
        kernel.data_mut()[4] = 1.0;
        assert_eq!(conv2d_forward(&input, &kernel, &[0.0]).unwrap(), input);
        assert_eq!(conv2d_input_grad(&input, &kernel).unwrap(), input);
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (c, oc) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
            let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
            let input = random([1, c, h, w], &mut rng);
            let kernel = random([oc, c, 3, 3], &mut rng);
            let bias: Vec<f32> = (0..oc).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = conv2d_forward(&input, &kernel, &bias).unwrap();
            let slow = naive_conv(&input, &kernel, &bias);
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-4);
        }
    }

    #[test]
    fn conv_banding_matches_single_band() {
        // Wide enough that the im2col buffer is split into several row bands.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random([1, 64, 12, 1024], &mut rng);
        let kernel = random([2, 64, 3, 3], &mut rng);
        assert!(band_rows(64 * 9, 12, 1024) < 12);
        let fast = conv2d_forward(&input, &kernel, &[0.1, -0.2]).unwrap();
        let slow = naive_conv(&input, &kernel, &[0.1, -0.2]);
        assert!(fast.max_abs_diff(&slow).unwrap() < 1e-4);

        let g = random([1, 2, 12, 1024], &mut rng);
        let dx = conv2d_input_grad(&g, &kernel).unwrap();
        // <conv(x), g> == <x, conv_grad(g)> for the bias-free part.
        let y = conv2d_forward(&input, &kernel, &[0.0, 0.0]).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| (a * b) as f64).sum();
        let rhs: f64 = input.data().iter().zip(dx.data()).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0));
    }

    #[test]
    fn conv_shape_errors() {
        let input = Tensor4::zeros(1, 2, 4, 4).unwrap();
        let kernel = Tensor4::zeros(3, 1, 3, 3).unwrap();
        let err = conv2d_forward(&input, &kernel, &[0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("[3, 1, 3, 3]")));
        let kernel = Tensor4::zeros(3, 2, 3, 3).unwrap();
        assert!(conv2d_forward(&input, &kernel, &[0.0; 2]).is_err());
        assert!(conv2d_input_grad(&input, &kernel).is_err());
    }

    #[test]
    fn conv_input_grad_of_zero_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kernel = random([3, 2, 3, 3], &mut rng);
        let g = Tensor4::zeros(1, 3, 4, 4).unwrap();
        assert!(conv2d_input_grad(&g, &kernel).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_definition() {
        let x = Tensor4::from_vec([1, 1, 1, 4], vec![-1.0, 0.0, 2.0, -3.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0, 0.0]);
        let ones = Tensor4::filled(1, 1, 1, 4, 1.0).unwrap();
        let x = Tensor4::from_vec([1, 1, 1, 4], vec![-1.0, 0.0, 2.0, 3.0]).unwrap();
        assert_eq!(relu_backward(&ones, &x).unwrap().data(), &[0.0, 0.0, 1.0, 1.0]);
        let wrong = Tensor4::zeros(1, 1, 2, 2).unwrap();
        assert!(relu_backward(&ones, &wrong).is_err());
    }

    #[test]
    fn maxpool_window_and_ties() {
        let x = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.argmax(), &[3]);

        let x = Tensor4::filled(1, 1, 4, 4, 5.0).unwrap();
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
        assert_eq!(idx.argmax(), &[0, 2, 8, 10]);

        let odd = Tensor4::zeros(1, 1, 3, 4).unwrap();
        assert!(maxpool2x2_forward(&odd).is_err());
    }

    #[test]
    fn maxpool_backward_routes_one_per_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random([1, 2, 8, 8], &mut rng);
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        let g = maxpool2x2_backward(&Tensor4::filled(1, 2, 4, 4, 1.0).unwrap(), &idx).unwrap();
        assert_eq!(g.sum(), y.len() as f32);
        for c in 0..2 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let s: f32 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(dy, dx)| g.at(0, c, 2 * oy + dy, 2 * ox + dx))
                        .sum();
                    assert_eq!(s, 1.0);
                }
            }
        }
        let zeros = maxpool2x2_backward(&y.zeros_like(), &idx).unwrap();
        assert!(zeros.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maxpool_backward_rejects_foreign_indices() {
        let x = Tensor4::from_vec([1, 1, 2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let (y, mut idx) = maxpool2x2_forward(&x).unwrap();
        idx.argmax[0] = 7;
        assert!(matches!(
            maxpool2x2_backward(&y, &idx),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn avgpool_round_trip() {
        let x = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(avgpool2x2_forward(&x).unwrap().data(), &[3.0]);
        let g = avgpool2x2_backward(&Tensor4::filled(1, 1, 1, 1, 1.0).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.25; 4]);
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let a = Tensor4::from_vec([1, 1, 1, 3], vec![-0.0, 1.5, -2.0]).unwrap();
        let b = Tensor4::from_vec([1, 1, 1, 3], vec![7.0, 0.0, -0.0]).unwrap();
        let bits = |t: &Tensor4| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&axpy_blend(&a, &b, 0.0).unwrap()), bits(&a));
        assert_eq!(bits(&axpy_blend(&a, &b, 1.0).unwrap()), bits(&b));

        let a = Tensor4::from_vec([1, 1, 1, 1], vec![2.0]).unwrap();
        let b = Tensor4::from_vec([1, 1, 1, 1], vec![4.0]).unwrap();
        assert_eq!(axpy_blend(&a, &b, 0.5).unwrap().data(), &[3.0]);
        assert!(axpy_blend(&a, &b, 1.5).is_err());
        assert!(axpy_blend(&a, &b, -0.1).is_err());
        assert!(axpy_blend(&a, &Tensor4::zeros(1, 1, 1, 2).unwrap(), 0.5).is_err());
    }

    #[test]
    fn resize_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random([1, 2, 3, 5], &mut rng);
        assert!(resize_bilinear_spatial(&x, 3, 5).unwrap().max_abs_diff(&x).unwrap() < 1e-6);

        let c = Tensor4::filled(1, 3, 4, 6, 0.3).unwrap();
        let r = resize_bilinear_spatial(&c, 7, 2).unwrap();
        assert_eq!(r.dims(), [1, 3, 7, 2]);
        assert!(r.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));

        let x = Tensor4::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let r = resize_bilinear_spatial(&x, 3, 3).unwrap();
        assert_eq!(r.at(0, 0, 1, 1), 1.5);
        assert_eq!(r.at(0, 0, 0, 0), 0.0);
        assert_eq!(r.at(0, 0, 2, 2), 3.0);
        assert!(resize_bilinear_spatial(&x, 0, 3).is_err());
    }

    #[test]
    fn dims_must_be_positive() {
        assert!(Tensor4::zeros(1, 0, 2, 2).is_err());
        assert!(Tensor4::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }
}
