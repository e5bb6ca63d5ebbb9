//! Central finite-difference gradient checking.
//!
//! The objective returns its value together with a kink signature (see
//! [`Activations::pattern`](crate::nn::Activations::pattern)). A coordinate
//! whose `±h` probes change the signature straddles a non-differentiable
//! point and is skipped rather than compared.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detector::{Detector, RoiBatch, RpnBatch};
use crate::nn::{
    backward, conv2d, conv2d_backward, forward, fully_connected, fully_connected_backward,
    masked_box_regression, maxpool, maxpool_backward, relu, relu_backward, roi_pool, smooth_l1,
    softmax, softmax_backward, softmax_cross_entropy, NetworkSpec, Padding, ParamStore, Tensor,
};
use crate::{BoundingBox, Error};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst: Option<usize>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }

    pub fn merge(&mut self, other: &GradCheck) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst: None,
        }
    }
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps gradients that are
/// zero up to rounding from reading as large relative errors.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(b.abs()).max(floor)
}

/// Default perturbation and floor for f64 objectives of order one.
pub const STEP: f64 = 1e-5;
pub const FLOOR: f64 = 1e-6;

/// Compares `analytic[i]` with `(f(x + h e_i) - f(x - h e_i)) / 2h` for
/// each `i` in `coords`. `x` is restored afterwards.
pub fn check_coords<F>(x: &mut [f64], analytic: &[f64], coords: &[usize], h: f64, mut f: F) -> GradCheck
where
    F: FnMut(&[f64]) -> (f64, Vec<u64>),
{
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let (_, base) = f(x);
    let mut out = GradCheck::default();
    for &i in coords {
        let orig = x[i];
        x[i] = orig + h;
        let (lp, pp) = f(x);
        x[i] = orig - h;
        let (lm, pm) = f(x);
        x[i] = orig;
        if pp != base || pm != base {
            out.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let e = relative_error(numeric, analytic[i], FLOOR);
        out.checked += 1;
        if e > out.max_rel_error || out.worst.is_none() {
            out.max_rel_error = out.max_rel_error.max(e);
            out.worst = Some(i);
        }
    }
    out
}

/// [`check_coords`] over every coordinate.
pub fn check_all<F>(x: &mut [f64], analytic: &[f64], h: f64, f: F) -> GradCheck
where
    F: FnMut(&[f64]) -> (f64, Vec<u64>),
{
    let coords: Vec<usize> = (0..x.len()).collect();
    check_coords(x, analytic, &coords, h, f)
}

/// At most `n` evenly spread coordinates of a length-`len` vector,
/// offset by `phase`.
pub fn spread(len: usize, n: usize, phase: usize) -> Vec<usize> {
    if len <= n {
        return (0..len).collect();
    }
    let mut v: Vec<usize> = (0..n).map(|k| (k * len / n + phase % (len / n).max(1)) % len).collect();
    v.dedup();
    v
}

/// Checks of named tensors, in the order they were run.
pub type Checks = Vec<(String, GradCheck)>;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn signs(v: &[f64]) -> Vec<u64> {
    v.iter().map(|&x| (x > 0.0) as u64).collect()
}

fn as_u64(v: &[usize]) -> Vec<u64> {
    v.iter().map(|&i| i as u64).collect()
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn with_data(t: &Tensor, x: &[f64]) -> Tensor {
    Tensor::new(t.shape().to_vec(), x.to_vec()).expect("same length")
}

fn full(name: &str, t: &Tensor, grad: &Tensor, f: impl FnMut(&[f64]) -> (f64, Vec<u64>)) -> (String, GradCheck) {
    let mut x = t.data().to_vec();
    (name.to_string(), check_all(&mut x, grad.data(), STEP, f))
}

fn conv_case(out: &mut Checks, tag: &str, rng: &mut ChaCha8Rng, input: [usize; 3], k: usize, kernel: usize, stride: usize, pad: Padding) -> Result<(), Error> {
    let x = randn(&input, rng);
    let w = randn(&[k, input[0], kernel, kernel], rng);
    let b = randn(&[k], rng);
    let y = conv2d(&x, &w, Some(&b), stride, pad)?;
    let r = randn(y.shape(), rng);
    let (dx, dw, db) = conv2d_backward(&x, &w, stride, pad, &r)?;
    let eval = |x: &Tensor, w: &Tensor, b: &Tensor| {
        let y = conv2d(x, w, Some(b), stride, pad).expect("shapes fixed");
        (dot(y.data(), r.data()), Vec::new())
    };
    out.push(full(&format!("{tag}.input"), &x, &dx, |v| eval(&with_data(&x, v), &w, &b)));
    out.push(full(&format!("{tag}.weight"), &w, &dw, |v| eval(&x, &with_data(&w, v), &b)));
    out.push(full(&format!("{tag}.bias"), &b, &db, |v| eval(&x, &w, &with_data(&b, v))));
    Ok(())
}

/// Every layer kind and loss on small random instances: convolutions
/// (several strides and paddings), relu, max and region pooling, fully
/// connected (single and batched), softmax, cross-entropy, smooth-L1 and
/// masked box regression. The objective is a random projection of each
/// layer's output, so every output element carries gradient.
pub fn layer_suite(seed: u64) -> Result<Checks, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut out = Checks::new();

    conv_case(&mut out, "conv3x3/1", rng, [3, 6, 7], 4, 3, 1, Padding::uniform(1))?;
    conv_case(&mut out, "conv3x3/2", rng, [2, 8, 8], 3, 3, 2, Padding::asymmetric(0, 1))?;
    conv_case(&mut out, "conv7x7/2", rng, [2, 9, 9], 3, 7, 2, Padding::uniform(3))?;
    conv_case(&mut out, "conv1x1", rng, [5, 3, 4], 6, 1, 1, Padding::uniform(0))?;

    let x = randn(&[3, 5, 4], rng);
    let r = randn(x.shape(), rng);
    let dx = relu_backward(&x, &r)?;
    out.push(full("relu.input", &x, &dx, |v| {
        let t = with_data(&x, v);
        (dot(relu(&t).data(), r.data()), signs(v))
    }));

    for (size, stride, shape) in [(2, 2, [2, 6, 6]), (3, 2, [2, 7, 7])] {
        let x = randn(&shape, rng);
        let p = maxpool(&x, size, stride)?;
        let r = randn(p.output.shape(), rng);
        let dx = maxpool_backward(x.shape(), &p.argmax, &r)?;
        out.push(full(&format!("maxpool{size}x{size}/{stride}.input"), &x, &dx, |v| {
            let p = maxpool(&with_data(&x, v), size, stride).expect("shapes fixed");
            (dot(p.output.data(), r.data()), as_u64(&p.argmax))
        }));
    }

    let feat = randn(&[2, 6, 6], rng);
    let rois = [
        BoundingBox::new(0.0, 0.0, 11.0, 11.0)?,
        BoundingBox::new(2.5, 1.0, 7.0, 9.5)?,
        BoundingBox::new(4.0, 4.0, 5.0, 5.0)?,
    ];
    let p = roi_pool(&feat, &rois, 0.5, 2)?;
    let r = randn(p.output.shape(), rng);
    let df = maxpool_backward(feat.shape(), &p.argmax, &r)?;
    out.push(full("roi_pool.input", &feat, &df, |v| {
        let p = roi_pool(&with_data(&feat, v), &rois, 0.5, 2).expect("shapes fixed");
        (dot(p.output.data(), r.data()), as_u64(&p.argmax))
    }));

    for (tag, xshape) in [("fc", &[5][..]), ("fc_batched", &[3, 5][..])] {
        let x = randn(xshape, rng);
        let w = randn(&[4, 5], rng);
        let b = randn(&[4], rng);
        let y = fully_connected(&x, &w, &b)?;
        let r = randn(y.shape(), rng);
        let (dx, dw, db) = fully_connected_backward(&x, &w, &r)?;
        let eval = |x: &Tensor, w: &Tensor, b: &Tensor| {
            (dot(fully_connected(x, w, b).expect("shapes fixed").data(), r.data()), Vec::new())
        };
        out.push(full(&format!("{tag}.input"), &x, &dx, |v| eval(&with_data(&x, v), &w, &b)));
        out.push(full(&format!("{tag}.weight"), &w, &dw, |v| eval(&x, &with_data(&w, v), &b)));
        out.push(full(&format!("{tag}.bias"), &b, &db, |v| eval(&x, &w, &with_data(&b, v))));
    }

    let z = randn(&[6], rng);
    let r = randn(&[6], rng);
    let dz = Tensor::new(vec![6], softmax_backward(&softmax(z.data()), r.data()))?;
    out.push(full("softmax.input", &z, &dz, |v| (dot(&softmax(v), r.data()), Vec::new())));

    let label = (seed % 6) as usize;
    let (_, g) = softmax_cross_entropy(z.data(), label)?;
    let dz = Tensor::new(vec![6], g)?;
    out.push(full("softmax_cross_entropy.logits", &z, &dz, |v| {
        (softmax_cross_entropy(v, label).expect("valid label").0, Vec::new())
    }));

    let pred = Tensor::randn(&[8], 1.5, rng);
    let target = randn(&[8], rng);
    let (_, g) = smooth_l1(pred.data(), target.data())?;
    let dp = Tensor::new(vec![8], g)?;
    let near = |v: &[f64]| -> Vec<u64> { v.iter().zip(target.data()).map(|(p, t)| ((p - t).abs() < 1.0) as u64).collect() };
    out.push(full("smooth_l1.pred", &pred, &dp, |v| (smooth_l1(v, target.data()).expect("same length").0, near(v))));

    let rows = |t: &[f64]| -> Vec<[f64; 4]> { t.chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect() };
    let pred = Tensor::randn(&[5, 4], 1.5, rng);
    let target = rows(randn(&[5, 4], rng).data());
    let positive = [true, false, true, true, false];
    let (_, g) = masked_box_regression(&rows(pred.data()), &target, &positive)?;
    let dp = Tensor::new(vec![5, 4], g.concat())?;
    let tflat = target.concat();
    out.push(full("masked_box_regression.pred", &pred, &dp, |v| {
        let l = masked_box_regression(&rows(v), &target, &positive).expect("same length").0;
        (l, near_rows(v, &tflat))
    }));
    Ok(out)
}

fn near_rows(v: &[f64], t: &[f64]) -> Vec<u64> {
    v.iter().zip(t).map(|(p, t)| ((p - t).abs() < 1.0) as u64).collect()
}

/// Checks a whole network against a random projection of its output:
/// every parameter tensor plus the input, `per_tensor` spread coordinates
/// each (all coordinates when `None`).
pub fn network_check(spec: &NetworkSpec, params: &ParamStore, input: &Tensor, seed: u64, per_tensor: Option<usize>) -> Result<Checks, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let acts = forward(spec, params, input)?;
    let r = randn(acts.output().shape(), &mut rng);
    let grads = backward(spec, params, &acts, &r)?;
    let coords = |len: usize| per_tensor.map_or_else(|| (0..len).collect(), |n| spread(len, n, seed as usize));
    let mut out = Checks::new();
    let eval = |p: &ParamStore, x: &Tensor| {
        let a = forward(spec, p, x).expect("shapes fixed");
        (dot(a.output().data(), r.data()), a.pattern(spec))
    };
    for (name, t) in params.iter() {
        let g = grads.params.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        let mut work = params.clone();
        let mut x = t.data().to_vec();
        let cs = coords(x.len());
        let res = check_coords(&mut x, g.data(), &cs, STEP, |v| {
            work.get_mut(name).expect("present").data_mut().copy_from_slice(v);
            eval(&work, input)
        });
        out.push((name.to_string(), res));
    }
    let mut x = input.data().to_vec();
    let cs = coords(x.len());
    let res = check_coords(&mut x, grads.input.data(), &cs, STEP, |v| eval(params, &with_data(input, v)));
    out.push(("input".to_string(), res));
    Ok(out)
}

/// Checks the detector's total loss for fixed anchor and region batches
/// against its analytic parameter gradients.
pub fn detector_check(det: &Detector, image: &Tensor, rpn: &RpnBatch, rois: &RoiBatch, seed: u64, per_tensor: Option<usize>) -> Result<Checks, Error> {
    let (_, grads) = det.loss_and_grads_with(image, rpn, rois)?;
    let mut out = Checks::new();
    for (name, t) in det.params().iter() {
        let g = grads.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        let coords = per_tensor.map_or_else(|| (0..t.len()).collect(), |n| spread(t.len(), n, seed as usize));
        let mut work = det.clone();
        let mut x = t.data().to_vec();
        let res = check_coords(&mut x, g.data(), &coords, STEP, |v| {
            work.params_mut().get_mut(name).expect("present").data_mut().copy_from_slice(v);
            let (l, _) = work.loss_and_grads_with(image, rpn, rois).expect("shapes fixed");
            (l.total, work.kink_pattern(image, rois).expect("shapes fixed"))
        });
        out.push((name.to_string(), res));
    }
    Ok(out)
}

/// Folds named checks into one summary.
pub fn summarize(checks: &[(String, GradCheck)]) -> GradCheck {
    let mut s = GradCheck::default();
    for (_, c) in checks {
        s.merge(c);
    }
    s
}
