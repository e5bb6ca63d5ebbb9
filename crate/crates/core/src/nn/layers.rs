//! Layer kernels with their analytic backward passes.
//!
//! Convolution lowers to im2col plus a dense GEMM. Every backward function
//! takes the forward input (and whatever the forward pass cached) and the
//! gradient of the loss with respect to the layer output.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::geometry::BoundingBox;
use crate::Error;

/// Zero padding applied before (top/left) and after (bottom/right) each
/// spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Padding {
    pub before: usize,
    pub after: usize,
}

impl Padding {
    pub const fn uniform(p: usize) -> Self {
        Padding {
            before: p,
            after: p,
        }
    }

    pub const fn asymmetric(before: usize, after: usize) -> Self {
        Padding { before, after }
    }

    pub fn total(&self) -> usize {
        self.before + self.after
    }
}

/// Output length of a sliding window, or `None` when the window does not
/// tile the padded input exactly.
pub fn window_output(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + pad;
    if stride == 0 || kernel == 0 || padded < kernel || (padded - kernel) % stride != 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// `c = a * b + beta * c` for row-major `c` of shape `[m, n]`; `a` and `b`
/// are described by explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: Padding,
}

impl ConvGeom {
    fn new(input: &Tensor, kernels: &Tensor, stride: usize, pad: Padding) -> Result<Self, Error> {
        let (c, h, w) = input.dims3("conv2d input")?;
        let [k, kc, kh, kw] = kernels.shape()[..] else {
            return Err(Error::Shape(format!(
                "conv2d kernels: expected [K, C, kh, kw], got {:?}",
                kernels.shape()
            )));
        };
        if kc != c {
            return Err(Error::Shape(format!(
                "conv2d: kernels expect {kc} channels, input has {c}"
            )));
        }
        let ho = window_output(h, kh, stride, pad.total()).ok_or_else(|| {
            Error::Shape(format!(
                "conv2d: height {h} with kernel {kh}, stride {stride}, padding {}+{} does not give an integral output",
                pad.before, pad.after
            ))
        })?;
        let wo = window_output(w, kw, stride, pad.total()).ok_or_else(|| {
            Error::Shape(format!(
                "conv2d: width {w} with kernel {kw}, stride {stride}, padding {}+{} does not give an integral output",
                pad.before, pad.after
            ))
        })?;
        Ok(ConvGeom {
            c,
            h,
            w,
            k,
            kh,
            kw,
            ho,
            wo,
            stride,
            pad,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn spatial(&self) -> usize {
        self.ho * self.wo
    }

    /// Source pixel for output row `o` and kernel tap `t`, if not padding.
    #[inline]
    fn src(&self, o: usize, t: usize, len: usize) -> Option<usize> {
        let p = o * self.stride + t;
        if p < self.pad.before || p - self.pad.before >= len {
            None
        } else {
            Some(p - self.pad.before)
        }
    }

    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let sp = self.spatial();
        let mut cols = vec![0.0; self.patch() * sp];
        for ch in 0..self.c {
            let plane = &input[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ty in 0..self.kh {
                for tx in 0..self.kw {
                    let row = (ch * self.kh + ty) * self.kw + tx;
                    let dst = &mut cols[row * sp..(row + 1) * sp];
                    for oy in 0..self.ho {
                        let Some(iy) = self.src(oy, ty, self.h) else {
                            continue;
                        };
                        let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                        for ox in 0..self.wo {
                            if let Some(ix) = self.src(ox, tx, self.w) {
                                dst[oy * self.wo + ox] = src_row[ix];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let sp = self.spatial();
        let mut out = vec![0.0; self.c * self.h * self.w];
        for ch in 0..self.c {
            let plane = &mut out[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ty in 0..self.kh {
                for tx in 0..self.kw {
                    let row = (ch * self.kh + ty) * self.kw + tx;
                    let src = &cols[row * sp..(row + 1) * sp];
                    for oy in 0..self.ho {
                        let Some(iy) = self.src(oy, ty, self.h) else {
                            continue;
                        };
                        for ox in 0..self.wo {
                            if let Some(ix) = self.src(ox, tx, self.w) {
                                plane[iy * self.w + ix] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// 2-D cross-correlation of `input [C, H, W]` with `kernels [K, C, kh, kw]`,
/// plus an optional per-output-channel bias.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: Padding,
) -> Result<Tensor, Error> {
    let g = ConvGeom::new(input, kernels, stride, pad)?;
    let sp = g.spatial();
    let mut out = vec![0.0; g.k * sp];
    if let Some(b) = bias {
        b.expect_shape(&[g.k], "conv2d bias")?;
        for (row, &bv) in out.chunks_mut(sp).zip(b.data()) {
            row.iter_mut().for_each(|v| *v = bv);
        }
    }
    let cols = g.im2col(input.data());
    let patch = g.patch();
    gemm(
        g.k,
        patch,
        sp,
        kernels.data(),
        (patch, 1),
        &cols,
        (sp, 1),
        1.0,
        &mut out,
    );
    Tensor::new(vec![g.k, g.ho, g.wo], out)
}

/// Gradients of a convolution: `(d_input, d_kernels, d_bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    pad: Padding,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), Error> {
    let g = ConvGeom::new(input, kernels, stride, pad)?;
    grad_out.expect_shape(&[g.k, g.ho, g.wo], "conv2d grad")?;
    let sp = g.spatial();
    let patch = g.patch();
    let cols = g.im2col(input.data());
    let dy = grad_out.data();

    let mut d_kernels = vec![0.0; g.k * patch];
    // [K, sp] x [sp, patch]
    gemm(g.k, sp, patch, dy, (sp, 1), &cols, (1, sp), 0.0, &mut d_kernels);

    let d_bias: Vec<f64> = dy.chunks(sp).map(|row| row.iter().sum()).collect();

    let mut d_cols = vec![0.0; patch * sp];
    // [patch, K] x [K, sp]
    gemm(
        patch,
        g.k,
        sp,
        kernels.data(),
        (1, patch),
        dy,
        (sp, 1),
        0.0,
        &mut d_cols,
    );
    let d_input = g.col2im(&d_cols);

    Ok((
        Tensor::new(input.shape().to_vec(), d_input)?,
        Tensor::new(kernels.shape().to_vec(), d_kernels)?,
        Tensor::new(vec![g.k], d_bias)?,
    ))
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor, Error> {
    grad_out.expect_shape(input.shape(), "relu grad")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Max pooling output together with the flat input index each output
/// element was taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Windowed max over each channel. The window must tile the input exactly.
/// Ties resolve to the first cell in row-major order.
pub fn maxpool(input: &Tensor, size: usize, stride: usize) -> Result<Pooled, Error> {
    let (c, h, w) = input.dims3("maxpool input")?;
    let (Some(ho), Some(wo)) = (
        window_output(h, size, stride, 0),
        window_output(w, size, stride, 0),
    ) else {
        return Err(Error::Shape(format!(
            "maxpool: {h}x{w} is not tiled by a {size}x{size} window with stride {stride}"
        )));
    };
    let x = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = base + (oy * stride + dy) * w + ox * stride + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![c, ho, wo], out)?,
        argmax,
    })
}

/// Routes each output gradient back to its argmax cell.
pub fn maxpool_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor, Error> {
    if argmax.len() != grad_out.len() {
        return Err(Error::Shape(format!(
            "maxpool grad: {} gradients for {} pooled cells",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut d = Tensor::zeros(input_shape);
    let dd = d.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        dd[i] += g;
    }
    Ok(d)
}

/// Region-of-interest max pooling: each box (image coordinates) is mapped
/// onto the `[C, H, W]` feature grid through `spatial_scale`, split into
/// `out x out` bins, and max-pooled per bin. Output is `[R, C, out, out]`;
/// `argmax` indexes `features`, so [`maxpool_backward`] routes gradients.
pub fn roi_pool(
    features: &Tensor,
    rois: &[BoundingBox],
    spatial_scale: f64,
    out: usize,
) -> Result<Pooled, Error> {
    let (c, h, w) = features.dims3("roi_pool features")?;
    if out == 0 || h == 0 || w == 0 {
        return Err(Error::Shape("roi_pool needs a non-empty grid and output".into()));
    }
    let x = features.data();
    let mut data = Vec::with_capacity(rois.len() * c * out * out);
    let mut argmax = Vec::with_capacity(data.capacity());
    for roi in rois {
        let span = |lo: f64, hi: f64, n: usize| {
            let a = (libm::floor(lo * spatial_scale).max(0.0) as usize).min(n - 1);
            let b = (libm::ceil(hi * spatial_scale) as usize).clamp(a + 1, n);
            (a, b - a)
        };
        let (x0, rw) = span(roi.xmin(), roi.xmax(), w);
        let (y0, rh) = span(roi.ymin(), roi.ymax(), h);
        let bin = |i: usize, len: usize| {
            let lo = i * len / out;
            let hi = ((i + 1) * len).div_ceil(out);
            (lo, hi.max(lo + 1))
        };
        for ch in 0..c {
            let base = ch * h * w;
            for by in 0..out {
                let (ya, yb) = bin(by, rh);
                for bx in 0..out {
                    let (xa, xb) = bin(bx, rw);
                    let mut best = base + (y0 + ya) * w + x0 + xa;
                    for yy in y0 + ya..y0 + yb {
                        for xx in x0 + xa..x0 + xb {
                            let idx = base + yy * w + xx;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    data.push(x[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![rois.len(), c, out, out], data)?,
        argmax,
    })
}

fn fc_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize), Error> {
    let [m, n] = weights.shape()[..] else {
        return Err(Error::Shape(format!(
            "fully_connected weights: expected [M, N], got {:?}",
            weights.shape()
        )));
    };
    let (b, inner) = match input.shape() {
        [x] => (1, *x),
        [b, x] => (*b, *x),
        s => {
            return Err(Error::Shape(format!(
                "fully_connected input: expected [N] or [B, N], got {s:?}"
            )))
        }
    };
    if inner != n {
        return Err(Error::Shape(format!(
            "fully_connected: weights take {n} inputs, got {inner}"
        )));
    }
    Ok((b, m, n))
}

/// `y = W x + b` for `x` of shape `[N]` or a batch `[B, N]`.
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, Error> {
    let (b, m, n) = fc_dims(input, weights)?;
    bias.expect_shape(&[m], "fully_connected bias")?;
    let mut out = Vec::with_capacity(b * m);
    for _ in 0..b {
        out.extend_from_slice(bias.data());
    }
    // [B, N] x [N, M]
    gemm(
        b,
        n,
        m,
        input.data(),
        (n, 1),
        weights.data(),
        (1, n),
        1.0,
        &mut out,
    );
    let shape = if input.shape().len() == 1 {
        vec![m]
    } else {
        vec![b, m]
    };
    Tensor::new(shape, out)
}

/// `(d_input, d_weights, d_bias)` of [`fully_connected`].
pub fn fully_connected_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), Error> {
    let (b, m, n) = fc_dims(input, weights)?;
    if grad_out.len() != b * m {
        return Err(Error::Shape(format!(
            "fully_connected grad: expected {} values, got {}",
            b * m,
            grad_out.len()
        )));
    }
    let dy = grad_out.data();
    let mut dx = vec![0.0; b * n];
    gemm(b, m, n, dy, (m, 1), weights.data(), (n, 1), 0.0, &mut dx);
    let mut dw = vec![0.0; m * n];
    gemm(m, b, n, dy, (1, m), input.data(), (n, 1), 0.0, &mut dw);
    let mut db = vec![0.0; m];
    for row in dy.chunks(m) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(vec![m, n], dw)?,
        Tensor::new(vec![m], db)?,
    ))
}

/// Max-subtracted softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Vector-Jacobian product of softmax given its output `probs`.
pub fn softmax_backward(probs: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_out).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_out)
        .map(|(p, g)| p * (g - dot))
        .collect()
}

/// Negative log-likelihood of `label` under softmax(`logits`), with the
/// gradient `softmax - one_hot`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>), Error> {
    if logits.len() < 2 {
        return Err(Error::Shape(format!(
            "softmax_cross_entropy needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| libm::exp(z - max)).sum();
    let log_z = max + libm::log(sum);
    let loss = (log_z - logits[label]).max(0.0);
    let mut grad: Vec<f64> = logits.iter().map(|&z| libm::exp(z - log_z)).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Summed smooth-L1 (Huber with unit transition) between two equal-length
/// slices, with the gradient with respect to `pred`.
pub fn smooth_l1(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), Error> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            what: "smooth_l1 target",
            expected: pred.len(),
            found: target.len(),
        });
    }
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let x = p - t;
            if x.abs() < 1.0 {
                loss += 0.5 * x * x;
                x
            } else {
                loss += x.abs() - 0.5;
                x.signum()
            }
        })
        .collect();
    Ok((loss, grad))
}

/// [`smooth_l1`] on tensors of identical shape.
pub fn smooth_l1_tensor(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), Error> {
    target.expect_shape(pred.shape(), "smooth_l1 target")?;
    let (loss, grad) = smooth_l1(pred.data(), target.data())?;
    Ok((loss, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Smooth-L1 over the rows of `[N, 4]` predictions whose `positive` flag is
/// set; the other rows get zero gradient and contribute nothing.
pub fn masked_box_regression(
    pred: &[[f64; 4]],
    target: &[[f64; 4]],
    positive: &[bool],
) -> Result<(f64, Vec<[f64; 4]>), Error> {
    if target.len() != pred.len() || positive.len() != pred.len() {
        return Err(Error::LengthMismatch {
            what: "box regression rows",
            expected: pred.len(),
            found: target.len().min(positive.len()),
        });
    }
    let mut loss = 0.0;
    let mut grads = vec![[0.0; 4]; pred.len()];
    for i in 0..pred.len() {
        if !positive[i] {
            continue;
        }
        let (l, g) = smooth_l1(&pred[i], &target[i])?;
        loss += l;
        grads[i].copy_from_slice(&g);
    }
    Ok((loss, grads))
}

/// `cls_loss + lambda * reg_loss`.
pub fn multi_task_loss(cls_loss: f64, reg_loss: f64, lambda: f64) -> Result<f64, Error> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "multi-task weight must be >= 0, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(cls_loss);
    }
    Ok(cls_loss + lambda * reg_loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn roi_pool_bins_and_routing() {
        // 4x4 grid holding 0..16, stride 4 image coordinates
        let f = t(&[1, 4, 4], &(0..16).map(|v| v as f64).collect::<Vec<_>>());
        let whole = BoundingBox::new(0.0, 0.0, 16.0, 16.0).unwrap();
        let p = roi_pool(&f, &[whole], 0.25, 2).unwrap();
        assert_eq!(p.output.shape(), &[1, 1, 2, 2]);
        assert_eq!(p.output.data(), &[5.0, 7.0, 13.0, 15.0]);

        // a box inside one cell still pools that cell
        let tiny = BoundingBox::new(5.0, 5.0, 6.0, 6.0).unwrap();
        let p = roi_pool(&f, &[tiny], 0.25, 2).unwrap();
        assert_eq!(p.output.data(), &[5.0; 4]);
        let g = maxpool_backward(f.shape(), &p.argmax, &Tensor::filled(&[1, 1, 2, 2], 1.0)).unwrap();
        assert_eq!(g.data()[5], 4.0);
        assert_eq!(g.data().iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let y = conv2d(&x, &k, None, 1, Padding::uniform(1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_all_ones() {
        let x = Tensor::filled(&[1, 2, 2], 1.0);
        let k = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let y = conv2d(&x, &k, None, 1, Padding::uniform(0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn conv_bias_and_multi_channel() {
        // two input channels summed by a 1x1 kernel, plus bias
        let x = t(&[2, 1, 2], &[1., 2., 10., 20.]);
        let k = t(&[1, 2, 1, 1], &[1., 0.5]);
        let b = t(&[1], &[0.25]);
        let y = conv2d(&x, &k, Some(&b), 1, Padding::default()).unwrap();
        assert_eq!(y.data(), &[6.25, 12.25]);
    }

    #[test]
    fn conv_rejects_non_integral_output() {
        let x = Tensor::zeros(&[1, 96, 96]);
        let k = Tensor::zeros(&[1, 1, 7, 7]);
        assert!(matches!(
            conv2d(&x, &k, None, 2, Padding::uniform(3)),
            Err(Error::Shape(_))
        ));
        let y = conv2d(&x, &k, None, 2, Padding::asymmetric(2, 3)).unwrap();
        assert_eq!(y.shape(), &[1, 48, 48]);
        let wrong_c = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(conv2d(&x, &wrong_c, None, 1, Padding::uniform(1)).is_err());
    }

    #[test]
    fn relu_cases() {
        let neg = t(&[3], &[-1., -2., -0.5]);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = t(&[3], &[1., 2., 0.5]);
        assert_eq!(relu(&pos), pos);
        let g = relu_backward(&t(&[3], &[-1., 0., 2.]), &t(&[3], &[5., 5., 5.])).unwrap();
        assert_eq!(g.data(), &[0., 0., 5.]);
    }

    #[test]
    fn maxpool_cases() {
        let p = maxpool(&t(&[1, 2, 2], &[1., 2., 3., 4.]), 2, 2).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        assert_eq!(p.argmax, vec![3]);
        let c = maxpool(&Tensor::filled(&[2, 4, 4], 7.0), 2, 2).unwrap();
        assert!(c.output.data().iter().all(|&v| v == 7.0));
        // ties go to the first cell
        assert!(c.argmax.iter().all(|&i| i % 2 == 0));
        assert!(maxpool(&Tensor::zeros(&[1, 5, 4]), 2, 2).is_err());
        let g = maxpool_backward(&[1, 2, 2], &p.argmax, &t(&[1, 1, 1], &[9.])).unwrap();
        assert_eq!(g.data(), &[0., 0., 0., 9.]);
    }

    #[test]
    fn fully_connected_cases() {
        let x = t(&[3], &[1., -2., 3.]);
        let eye = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let zero_b = Tensor::zeros(&[3]);
        assert_eq!(fully_connected(&x, &eye, &zero_b).unwrap(), x);
        let b = t(&[2], &[0.5, -1.5]);
        let y = fully_connected(&x, &Tensor::zeros(&[2, 3]), &b).unwrap();
        assert_eq!(y.data(), b.data());
        assert!(fully_connected(&x, &Tensor::zeros(&[2, 4]), &b).is_err());
        let batch = t(&[2, 3], &[1., 0., 0., 0., 0., 2.]);
        let y = fully_connected(&batch, &eye, &zero_b).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(y.data(), batch.data());
    }

    #[test]
    fn cross_entropy_cases() {
        let (l, _) = softmax_cross_entropy(&[0.3; 5], 2).unwrap();
        assert!((l - libm::log(5.0)).abs() < 1e-12);
        let (l, g) = softmax_cross_entropy(&[1.0, 0.0], 0).unwrap();
        let want = libm::log(1.0 + libm::exp(-1.0));
        assert!((l - want).abs() < 1e-12);
        assert!((l - 0.31326).abs() < 1e-5);
        assert!((g.iter().sum::<f64>()).abs() < 1e-15);
        let (l, _) = softmax_cross_entropy(&[800.0, 0.0, -3.0], 0).unwrap();
        assert!(l < 1e-300);
        assert!(softmax_cross_entropy(&[1.0, 2.0], 2).is_err());
        assert!(softmax_cross_entropy(&[1.0], 0).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -3.0, 2.5, 999.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_cases() {
        assert_eq!(smooth_l1(&[1., 2.], &[1., 2.]).unwrap().0, 0.0);
        assert_eq!(smooth_l1(&[0.5], &[0.0]).unwrap().0, 0.125);
        assert_eq!(smooth_l1(&[2.0], &[0.0]).unwrap().0, 1.5);
        assert_eq!(smooth_l1(&[-2.0], &[0.0]).unwrap().1, vec![-1.0]);
        assert!(smooth_l1(&[1.0], &[1.0, 2.0]).is_err());
        let a = Tensor::zeros(&[2, 4]);
        assert!(smooth_l1_tensor(&a, &Tensor::zeros(&[4, 2])).is_err());
    }

    #[test]
    fn multi_task_cases() {
        assert_eq!(multi_task_loss(0.7, 123.0, 0.0).unwrap(), 0.7);
        assert!((multi_task_loss(0.3, 0.2, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(multi_task_loss(0.3, 0.2, -1.0).is_err());
        let pred = [[0.3, -2.0, 1.0, 5.0], [1.0, 1.0, 1.0, 1.0]];
        let tgt = [[0.0; 4]; 2];
        let (reg, g) = masked_box_regression(&pred, &tgt, &[false, false]).unwrap();
        assert_eq!(reg, 0.0);
        assert!(g.iter().all(|r| *r == [0.0; 4]));
        assert_eq!(multi_task_loss(0.4, reg, 1.0).unwrap(), 0.4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_is_a_distribution(z in prop::collection::vec(-50.0f64..50.0, 1..12)) {
                let p = softmax(&z);
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }

            #[test]
            fn losses_are_non_negative(
                z in prop::collection::vec(-50.0f64..50.0, 2..12),
                label in 0usize..12,
                pred in prop::collection::vec(-10.0f64..10.0, 4),
                target in prop::collection::vec(-10.0f64..10.0, 4),
            ) {
                let (ce, _) = softmax_cross_entropy(&z, label % z.len()).unwrap();
                prop_assert!(ce >= 0.0);
                let (l1, _) = smooth_l1(&pred, &target).unwrap();
                prop_assert!(l1 >= 0.0);
                prop_assert!(multi_task_loss(ce, l1, 1.0).unwrap() >= 0.0);
            }
        }
    }
}
