//! Dense f64 tensors and the fixed set of kernels the codec networks need.
//!
//! Everything is row-major and single-threaded. Kernels are pure functions;
//! the backward counterparts live here too so the tape stays a thin dispatcher.

use crate::error::{Error, Result};

/// Dense tensor of f64 values in row-major order.
///
/// Invariant: `shape.iter().product() == data.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dim(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(|i| f(i)).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data, new shape. Element count must match.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            s => Err(Error::Dim(format!("expected [C,H,W] tensor, got {:?}", s))),
        }
    }
}

fn check_congruent(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Dim(format!("shapes {:?} and {:?} differ", a.shape, b.shape)));
    }
    Ok(())
}

// ── Convolution ──────────────────────────────────────────────────────

/// Same-padded 2-D cross-correlation.
///
/// `input` is `[C_in, H, W]`, `kernels` is `[C_out, C_in, k, k]` with odd `k`;
/// output is `[C_out, H, W]` (zero padding of k/2 on each side).
pub fn conv2d_same(input: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let (c_in, h, w) = input.chw()?;
    let ks = kernels.shape();
    if ks.len() != 4 || ks[1] != c_in || ks[2] != ks[3] {
        return Err(Error::Dim(format!(
            "kernel shape {:?} incompatible with input {:?}",
            ks,
            input.shape()
        )));
    }
    let (c_out, k) = (ks[0], ks[2]);
    if k % 2 == 0 {
        return Err(Error::Dim(format!("kernel size {} must be odd", k)));
    }
    let mut out = Tensor::zeros(&[c_out, h, w]);
    match k {
        1 => conv_same_k1(input.data(), kernels.data(), out.data_mut(), c_in, c_out, h, w),
        3 => conv_same_k::<3>(input.data(), kernels.data(), out.data_mut(), c_in, c_out, h, w),
        5 => conv_same_k::<5>(input.data(), kernels.data(), out.data_mut(), c_in, c_out, h, w),
        _ => conv_same_generic(input.data(), kernels.data(), out.data_mut(), c_in, c_out, h, w, k),
    }
    Ok(out)
}

/// 1x1 kernels degenerate to per-pixel channel mixing.
fn conv_same_k1(src: &[f64], kd: &[f64], dst: &mut [f64], c_in: usize, c_out: usize, h: usize, w: usize) {
    let plane = h * w;
    for o in 0..c_out {
        let orow = &mut dst[o * plane..(o + 1) * plane];
        for i in 0..c_in {
            let wgt = kd[o * c_in + i];
            let irow = &src[i * plane..(i + 1) * plane];
            for (d, s) in orow.iter_mut().zip(irow) {
                *d += wgt * s;
            }
        }
    }
}

/// Compile-time kernel size: the interior-x loop accumulates all K taps of a
/// kernel row per store, which is what makes the f64 path fast on one core.
fn conv_same_k<const K: usize>(
    src: &[f64],
    kd: &[f64],
    dst: &mut [f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
) {
    let p = K / 2;
    let plane = h * w;
    for o in 0..c_out {
        let out_base = o * plane;
        for i in 0..c_in {
            let in_base = i * plane;
            let kw: &[f64] = &kd[(o * c_in + i) * K * K..(o * c_in + i + 1) * K * K];
            for y in 0..h {
                let orow = &mut dst[out_base + y * w..out_base + (y + 1) * w];
                for dy in 0..K {
                    let yy = y as isize + dy as isize - p as isize;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let irow = &src[in_base + yy as usize * w..in_base + (yy as usize + 1) * w];
                    let krow = &kw[dy * K..dy * K + K];
                    // left border
                    for x in 0..p.min(w) {
                        let mut acc = orow[x];
                        for dx in 0..K {
                            let xx = x as isize + dx as isize - p as isize;
                            if xx >= 0 && xx < w as isize {
                                acc += krow[dx] * irow[xx as usize];
                            }
                        }
                        orow[x] = acc;
                    }
                    // interior: all K taps in range
                    if w > 2 * p {
                        for x in p..w - p {
                            let mut acc = orow[x];
                            let base = x - p;
                            for dx in 0..K {
                                acc += krow[dx] * irow[base + dx];
                            }
                            orow[x] = acc;
                        }
                    }
                    // right border
                    for x in (w.saturating_sub(p)).max(p)..w {
                        let mut acc = orow[x];
                        for dx in 0..K {
                            let xx = x as isize + dx as isize - p as isize;
                            if xx >= 0 && xx < w as isize {
                                acc += krow[dx] * irow[xx as usize];
                            }
                        }
                        orow[x] = acc;
                    }
                }
            }
        }
    }
}

fn conv_same_generic(
    src: &[f64],
    kd: &[f64],
    dst: &mut [f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
) {
    let p = k / 2;
    let plane = h * w;
    for o in 0..c_out {
        let out_base = o * plane;
        for i in 0..c_in {
            let in_base = i * plane;
            for dy in 0..k {
                for dx in 0..k {
                    let wgt = kd[((o * c_in + i) * k + dy) * k + dx];
                    if wgt == 0.0 {
                        continue;
                    }
                    let x0 = p.saturating_sub(dx);
                    let x1 = (w + p).saturating_sub(dx).min(w);
                    if x0 >= x1 {
                        continue;
                    }
                    let off = dx as isize - p as isize;
                    for y in 0..h {
                        let yy = y as isize + dy as isize - p as isize;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        let orow = &mut dst[out_base + y * w + x0..out_base + y * w + x1];
                        let ibase = (in_base as isize + yy * w as isize + x0 as isize + off) as usize;
                        let irow = &src[ibase..ibase + (x1 - x0)];
                        for (d, s) in orow.iter_mut().zip(irow) {
                            *d += wgt * s;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of `conv2d_same` w.r.t. its input: correlation of `grad_out`
/// with the kernels flipped spatially and transposed in/out.
pub fn conv2d_same_grad_input(grad_out: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let ks = kernels.shape();
    let (c_out, c_in, k) = (ks[0], ks[1], ks[2]);
    let mut flipped = Tensor::zeros(&[c_in, c_out, k, k]);
    {
        let src = kernels.data();
        let dst = flipped.data_mut();
        for o in 0..c_out {
            for i in 0..c_in {
                for dy in 0..k {
                    for dx in 0..k {
                        dst[((i * c_out + o) * k + (k - 1 - dy)) * k + (k - 1 - dx)] =
                            src[((o * c_in + i) * k + dy) * k + dx];
                    }
                }
            }
        }
    }
    conv2d_same(grad_out, &flipped)
}

/// Four-way unrolled dot product; the split accumulators break the FMA
/// dependency chain so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// Gradient of `conv2d_same` w.r.t. the kernels.
pub fn conv2d_same_grad_kernels(
    grad_out: &Tensor,
    input: &Tensor,
    kernel_shape: &[usize],
) -> Result<Tensor> {
    let (c_in, h, w) = input.chw()?;
    let (c_out, k) = (kernel_shape[0], kernel_shape[2]);
    let mut gk = Tensor::zeros(kernel_shape);
    match k {
        1 => grad_kernels_k1(grad_out.data(), input.data(), gk.data_mut(), c_in, c_out, h, w),
        3 => grad_kernels_k::<3>(grad_out.data(), input.data(), gk.data_mut(), c_in, c_out, h, w),
        5 => grad_kernels_k::<5>(grad_out.data(), input.data(), gk.data_mut(), c_in, c_out, h, w),
        _ => grad_kernels_generic(grad_out.data(), input.data(), gk.data_mut(), c_in, c_out, h, w, k),
    }
    Ok(gk)
}

fn grad_kernels_k1(go: &[f64], src: &[f64], dst: &mut [f64], c_in: usize, c_out: usize, h: usize, w: usize) {
    let plane = h * w;
    for o in 0..c_out {
        let grow = &go[o * plane..(o + 1) * plane];
        for i in 0..c_in {
            dst[o * c_in + i] = dot(grow, &src[i * plane..(i + 1) * plane]);
        }
    }
}

fn grad_kernels_k<const K: usize>(
    go: &[f64],
    src: &[f64],
    dst: &mut [f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
) {
    let p = K / 2;
    let plane = h * w;
    for o in 0..c_out {
        let go_base = o * plane;
        for i in 0..c_in {
            let in_base = i * plane;
            for dy in 0..K {
                let mut acc = [0.0f64; K];
                for y in 0..h {
                    let yy = y as isize + dy as isize - p as isize;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let grow = &go[go_base + y * w..go_base + (y + 1) * w];
                    let irow = &src[in_base + yy as usize * w..in_base + (yy as usize + 1) * w];
                    // borders: taps that would read outside the row
                    for x in 0..p.min(w) {
                        let g = grow[x];
                        for dx in 0..K {
                            let xx = x as isize + dx as isize - p as isize;
                            if xx >= 0 && xx < w as isize {
                                acc[dx] += g * irow[xx as usize];
                            }
                        }
                    }
                    if w > 2 * p {
                        for x in p..w - p {
                            let g = grow[x];
                            let base = x - p;
                            for dx in 0..K {
                                acc[dx] += g * irow[base + dx];
                            }
                        }
                    }
                    for x in (w.saturating_sub(p)).max(p)..w {
                        let g = grow[x];
                        for dx in 0..K {
                            let xx = x as isize + dx as isize - p as isize;
                            if xx >= 0 && xx < w as isize {
                                acc[dx] += g * irow[xx as usize];
                            }
                        }
                    }
                }
                let kbase = ((o * c_in + i) * K + dy) * K;
                dst[kbase..kbase + K].copy_from_slice(&acc);
            }
        }
    }
}

fn grad_kernels_generic(
    go: &[f64],
    src: &[f64],
    dst: &mut [f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
) {
    let p = k / 2;
    let plane = h * w;
    for o in 0..c_out {
        let go_base = o * plane;
        for i in 0..c_in {
            let in_base = i * plane;
            for dy in 0..k {
                for dx in 0..k {
                    let x0 = p.saturating_sub(dx);
                    let x1 = (w + p).saturating_sub(dx).min(w);
                    if x0 >= x1 {
                        continue;
                    }
                    let off = dx as isize - p as isize;
                    let mut acc = 0.0;
                    for y in 0..h {
                        let yy = y as isize + dy as isize - p as isize;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        let grow = &go[go_base + y * w + x0..go_base + y * w + x1];
                        let ibase = (in_base as isize + yy * w as isize + x0 as isize + off) as usize;
                        let irow = &src[ibase..ibase + (x1 - x0)];
                        acc += dot(grow, irow);
                    }
                    dst[((o * c_in + i) * k + dy) * k + dx] = acc;
                }
            }
        }
    }
}

// ── Pooling and upsampling ───────────────────────────────────────────

/// 2x2 max pooling. Returns the pooled tensor and, per output element, the
/// flat input index of the first maximal element (deterministic tie-break).
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let (c, h, w) = input.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dim(format!("maxpool2 needs even spatial dims, got {}x{}", h, w)));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut argmax = vec![0u32; c * oh * ow];
    let src = input.data();
    let dst = out.data_mut();
    for ci in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best_idx = (ci * h + 2 * y) * w + 2 * x;
                let mut best = src[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (ci * h + 2 * y + dy) * w + 2 * x + dx;
                    if src[idx] > best {
                        best = src[idx];
                        best_idx = idx;
                    }
                }
                let oidx = (ci * oh + y) * ow + x;
                dst[oidx] = best;
                argmax[oidx] = best_idx as u32;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2_backward(grad_out: &Tensor, argmax: &[u32], input_shape: &[usize]) -> Tensor {
    let mut g = Tensor::zeros(input_shape);
    let dst = g.data_mut();
    for (go, &idx) in grad_out.data().iter().zip(argmax) {
        dst[idx as usize] += go;
    }
    g
}

/// Nearest-neighbour 2x upsampling: each element becomes a 2x2 block.
pub fn upsample2(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let src = input.data();
    let dst = out.data_mut();
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = src[(ci * h + y) * w + x];
                let base = (ci * oh + 2 * y) * ow + 2 * x;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + ow] = v;
                dst[base + ow + 1] = v;
            }
        }
    }
    Ok(out)
}

pub fn upsample2_backward(grad_out: &Tensor, input_shape: &[usize]) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (2 * h, 2 * w);
    let mut g = Tensor::zeros(input_shape);
    let go = grad_out.data();
    let dst = g.data_mut();
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let base = (ci * oh + 2 * y) * ow + 2 * x;
                dst[(ci * h + y) * w + x] = go[base] + go[base + 1] + go[base + ow] + go[base + ow + 1];
            }
        }
    }
    g
}

// ── Elementwise kernels ──────────────────────────────────────────────

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_congruent(a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_congruent(a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_congruent(a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

/// Numerically stable softplus ln(1+e^x).
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of softplus: ln(e^y - 1) for y > 0.
pub fn softplus_inv_scalar(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).ln()
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-channel bias add: `x[c,..] + bias[c]`.
pub fn bias_add_channel(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if bias.shape() != [c] {
        return Err(Error::Dim(format!("bias shape {:?}, expected [{}]", bias.shape(), c)));
    }
    let mut out = x.clone();
    let dst = out.data_mut();
    for ci in 0..c {
        let b = bias.data()[ci];
        for v in &mut dst[ci * h * w..(ci + 1) * h * w] {
            *v += b;
        }
    }
    Ok(out)
}

/// Per-channel scale: `x[c,..] * s[c]`.
pub fn mul_channel(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if s.shape() != [c] {
        return Err(Error::Dim(format!("scale shape {:?}, expected [{}]", s.shape(), c)));
    }
    let mut out = x.clone();
    let dst = out.data_mut();
    for ci in 0..c {
        let m = s.data()[ci];
        for v in &mut dst[ci * h * w..(ci + 1) * h * w] {
            *v *= m;
        }
    }
    Ok(out)
}

pub fn sum_all(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data.iter().sum())
}

/// Channel slice `[from, to)` of a `[C,H,W]` tensor.
pub fn slice_channels(x: &Tensor, from: usize, to: usize) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if from >= to || to > c {
        return Err(Error::Dim(format!("channel slice {}..{} out of range for C={}", from, to, c)));
    }
    Ok(Tensor {
        shape: vec![to - from, h, w],
        data: x.data[from * h * w..to * h * w].to_vec(),
    })
}
