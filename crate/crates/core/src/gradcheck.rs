//! Central finite-difference checks of every analytic gradient, at 64-bit
//! precision.
//!
//! Each check builds a scalar loss `L = <f(x), r>` from a layer `f` and a
//! fixed random projection `r`, then compares the analytic gradient of `L`
//! with `(L(x + eps) - L(x - eps)) / (2 eps)` coordinate by coordinate. The
//! end-to-end checks run the reduced network through the softmax loss.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{
    batchnorm_backward, batchnorm_forward, concat_channels, conv2d, conv2d_backward, deconv2d,
    deconv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward, split_channels, ConvSpec,
    Mode,
};
use crate::loss::{softmax_nll, LabelMap, IGNORE};
use crate::net::{backward, forward_stateless, init_params, NetArch, NetParams};
use crate::tensor::{Shape4, Tensor4};

pub const FD_STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
/// Parameters sampled per end-to-end check.
pub const END_TO_END_SAMPLES: usize = 64;
/// Gradients smaller than this are compared in absolute rather than
/// relative terms.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Worst relative error over every checked coordinate.
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub coordinates: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn rel_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(REL_FLOOR)
}

fn random(shape: Shape4, rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero, so ReLU kinks stay out of the stencil.
fn random_off_zero(shape: Shape4, rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| {
        let v = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Running maximum of the relative error between `analytic` and the
/// central difference of `loss` along every coordinate of `x`.
struct Tracker {
    worst: f64,
    count: usize,
}

impl Tracker {
    fn new() -> Self {
        Tracker { worst: 0.0, count: 0 }
    }

    fn check_all(
        &mut self,
        x: &mut [f64],
        analytic: &[f64],
        loss: &mut dyn FnMut(&[f64]) -> Result<f64>,
    ) -> Result<()> {
        for j in 0..x.len() {
            self.check_one(x, j, analytic[j], loss)?;
        }
        Ok(())
    }

    fn check_one(
        &mut self,
        x: &mut [f64],
        j: usize,
        analytic: f64,
        loss: &mut dyn FnMut(&[f64]) -> Result<f64>,
    ) -> Result<()> {
        let orig = x[j];
        x[j] = orig + FD_STEP;
        let up = loss(x)?;
        x[j] = orig - FD_STEP;
        let down = loss(x)?;
        x[j] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        self.worst = self.worst.max(rel_error(numeric, analytic));
        self.count += 1;
        Ok(())
    }

    fn finish(self, name: String, tolerance: f64) -> CheckResult {
        CheckResult {
            name,
            max_rel_error: self.worst,
            tolerance,
            coordinates: self.count,
        }
    }
}

fn with_shape(shape: Shape4, data: &[f64]) -> Result<Tensor4<f64>> {
    Tensor4::from_vec(shape, data.to_vec())
}

/// A random conv geometry with the given stride and dilation.
fn conv_case(stride: usize, dilation: usize, rng: &mut ChaCha8Rng) -> (ConvSpec, Shape4) {
    let spec = ConvSpec {
        kernel_h: 3,
        kernel_w: 3,
        stride,
        pad: if rng.gen_bool(0.5) { dilation } else { rng.gen_range(0..dilation) },
        dilation,
        in_channels: rng.gen_range(1..=3),
        out_channels: rng.gen_range(1..=3),
    };
    let n = rng.gen_range(1..=2);
    let h = 2 * dilation + 1 + rng.gen_range(0..4);
    let w = 2 * dilation + 1 + rng.gen_range(0..4);
    (spec, Shape4::new(n, spec.in_channels, h, w))
}

fn check_conv(stride: usize, dilation: usize, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (spec, xs) = conv_case(stride, dilation, rng);
    let mut x = random(xs, rng);
    let mut w = random(spec.weight_shape(), rng);
    let mut b: Vec<f64> = (0..spec.out_channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = conv2d(&x, &w, Some(&b), &spec)?;
    let r = random(y.shape(), rng);
    let g = conv2d_backward(&x, &w, &spec, &r)?;
    let gi = g.input.expect("input gradient requested");
    let mut t = Tracker::new();
    let (ws, bias) = (w.clone(), b.clone());
    t.check_all(x.data_mut(), gi.data(), &mut |xd| {
        conv2d(&with_shape(xs, xd)?, &ws, Some(&bias), &spec)?.dot(&r)
    })?;
    let xf = x.clone();
    t.check_all(w.data_mut(), g.weights.data(), &mut |wd| {
        conv2d(&xf, &with_shape(spec.weight_shape(), wd)?, Some(&bias), &spec)?.dot(&r)
    })?;
    let wf = w.clone();
    t.check_all(&mut b, &g.bias, &mut |bd| conv2d(&xf, &wf, Some(bd), &spec)?.dot(&r))?;
    Ok(t.finish(
        format!("conv2d stride={stride} dilation={dilation} pad={}", spec.pad),
        LAYER_TOLERANCE,
    ))
}

fn check_deconv(stride: usize, dilation: usize, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (spec, _) = conv_case(stride, dilation, rng);
    let xs = Shape4::new(rng.gen_range(1..=2), spec.in_channels, rng.gen_range(2..=5), rng.gen_range(2..=5));
    let mut x = random(xs, rng);
    let mut w = random(spec.deconv_weight_shape(), rng);
    let mut b: Vec<f64> = (0..spec.out_channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = deconv2d(&x, &w, Some(&b), &spec)?;
    let r = random(y.shape(), rng);
    let g = deconv2d_backward(&x, &w, &spec, &r)?;
    let gi = g.input.expect("deconv always returns an input gradient");
    let mut t = Tracker::new();
    let (ws, bias) = (w.clone(), b.clone());
    t.check_all(x.data_mut(), gi.data(), &mut |xd| {
        deconv2d(&with_shape(xs, xd)?, &ws, Some(&bias), &spec)?.dot(&r)
    })?;
    let xf = x.clone();
    t.check_all(w.data_mut(), g.weights.data(), &mut |wd| {
        deconv2d(&xf, &with_shape(spec.deconv_weight_shape(), wd)?, Some(&bias), &spec)?.dot(&r)
    })?;
    let wf = w.clone();
    t.check_all(&mut b, &g.bias, &mut |bd| deconv2d(&xf, &wf, Some(bd), &spec)?.dot(&r))?;
    Ok(t.finish(
        format!("deconv2d stride={stride} dilation={dilation} pad={}", spec.pad),
        LAYER_TOLERANCE,
    ))
}

fn check_batchnorm(mode: Mode, n: usize, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let c = rng.gen_range(1..=3);
    let xs = Shape4::new(n, c, rng.gen_range(2..=4), rng.gen_range(2..=4));
    let mut x = random(xs, rng);
    let mut gamma: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
    let mut beta: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
    let eps = 1e-5;
    let (y, cache) = batchnorm_forward(&x, &gamma, &beta, &mean, &var, eps, mode)?;
    let r = random(y.shape(), rng);
    let g = batchnorm_backward(&cache, &gamma, &r)?;
    let mut t = Tracker::new();
    let (gm, bt) = (gamma.clone(), beta.clone());
    t.check_all(x.data_mut(), g.input.data(), &mut |xd| {
        batchnorm_forward(&with_shape(xs, xd)?, &gm, &bt, &mean, &var, eps, mode)?.0.dot(&r)
    })?;
    let xf = x.clone();
    t.check_all(&mut gamma, &g.gamma, &mut |gd| {
        batchnorm_forward(&xf, gd, &bt, &mean, &var, eps, mode)?.0.dot(&r)
    })?;
    let gf = gamma.clone();
    t.check_all(&mut beta, &g.beta, &mut |bd| {
        batchnorm_forward(&xf, &gf, bd, &mean, &var, eps, mode)?.0.dot(&r)
    })?;
    let label = match mode {
        Mode::Train => "train",
        Mode::Eval => "eval",
    };
    Ok(t.finish(format!("batchnorm {label} n={n}"), LAYER_TOLERANCE))
}

fn check_relu(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let xs = Shape4::new(2, 2, 4, 5);
    let mut x = random_off_zero(xs, rng);
    let y = relu(&x)?;
    let r = random(y.shape(), rng);
    let gi = relu_backward(&y, &r)?;
    let mut t = Tracker::new();
    t.check_all(x.data_mut(), gi.data(), &mut |xd| relu(&with_shape(xs, xd)?)?.dot(&r))?;
    Ok(t.finish("relu".into(), LAYER_TOLERANCE))
}

fn check_maxpool(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let xs = Shape4::new(2, 2, 6, 8);
    let mut x = random(xs, rng);
    let (y, idx) = maxpool2(&x)?;
    let r = random(y.shape(), rng);
    let gi = maxpool2_backward(&idx, &r)?;
    let mut t = Tracker::new();
    t.check_all(x.data_mut(), gi.data(), &mut |xd| maxpool2(&with_shape(xs, xd)?)?.0.dot(&r))?;
    Ok(t.finish("maxpool2".into(), LAYER_TOLERANCE))
}

fn check_concat(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (sa, sb) = (Shape4::new(2, 2, 3, 3), Shape4::new(2, 3, 3, 3));
    let (mut a, b) = (random(sa, rng), random(sb, rng));
    let y = concat_channels(&[&a, &b])?;
    let r = random(y.shape(), rng);
    let parts = split_channels(&r, &[2, 3])?;
    let mut t = Tracker::new();
    t.check_all(a.data_mut(), parts[0].data(), &mut |ad| {
        concat_channels(&[&with_shape(sa, ad)?, &b])?.dot(&r)
    })?;
    Ok(t.finish("concat".into(), LAYER_TOLERANCE))
}

fn check_softmax_loss(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (n, k, h, w) = (2, 5, 3, 4);
    let xs = Shape4::new(n, k, h, w);
    let mut s = random(xs, rng);
    let labels: Vec<u32> = (0..n * h * w)
        .map(|i| if i % 7 == 3 { IGNORE } else { rng.gen_range(0..k as u32) })
        .collect();
    let labels = LabelMap::new(n, h, w, labels)?;
    let (_, g) = softmax_nll(&s, &labels)?;
    let mut t = Tracker::new();
    t.check_all(s.data_mut(), g.data(), &mut |sd| Ok(softmax_nll(&with_shape(xs, sd)?, &labels)?.0))?;
    Ok(t.finish("softmax loss".into(), LAYER_TOLERANCE))
}

/// Reduced network, 16x16 input, softmax loss on random labels; checks
/// [`END_TO_END_SAMPLES`] parameters drawn across all learnable tensors.
pub fn check_end_to_end(arch: NetArch, name: &str, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_params::<f64>(seed, arch)?;
    let x = random(Shape4::new(2, 3, 16, 16), &mut rng);
    let (scores, cache) = forward_stateless(&params, &x, Mode::Train)?;
    let s = scores.shape();
    let labels: Vec<u32> = (0..s.n * s.plane())
        .map(|_| rng.gen_range(0..arch.num_bins as u32))
        .collect();
    let labels = LabelMap::new(s.n, s.h, s.w, labels)?;
    let (_, g_scores) = softmax_nll(&scores, &labels)?;
    let grads = backward(&params, &cache, &g_scores)?;
    let loss = |q: &NetParams<f64>| -> Result<f64> {
        let (s, _) = forward_stateless(q, &x, Mode::Train)?;
        Ok(softmax_nll(&s, &labels)?.0)
    };
    let learnable: Vec<usize> = (0..params.tensors().len())
        .filter(|&i| params.tensors()[i].kind.learnable())
        .collect();
    let mut q = params.clone();
    let mut t = Tracker::new();
    for k in 0..END_TO_END_SAMPLES {
        // every learnable tensor is visited before any is sampled twice
        let i = learnable[k % learnable.len()];
        let j = rng.gen_range(0..params.get(i).len());
        let analytic = grads.tensors[i].as_ref().expect("learnable has a gradient").data()[j];
        let orig = q.get(i).data()[j];
        q.get_mut(i).data_mut()[j] = orig + FD_STEP;
        let up = loss(&q)?;
        q.get_mut(i).data_mut()[j] = orig - FD_STEP;
        let down = loss(&q)?;
        q.get_mut(i).data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        t.worst = t.worst.max(rel_error(numeric, analytic));
        t.count += 1;
    }
    Ok(t.finish(format!("end-to-end {name}"), END_TO_END_TOLERANCE))
}

/// The full suite: conv and deconv over stride {1,2} x dilation {1,2,4},
/// batch norm in both modes, the remaining layers, the loss, and three
/// reduced-network variants end to end.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for stride in [1, 2] {
        for dilation in [1, 2, 4] {
            out.push(check_conv(stride, dilation, &mut rng)?);
            out.push(check_deconv(stride, dilation, &mut rng)?);
        }
    }
    out.push(check_batchnorm(Mode::Train, 1, &mut rng)?);
    out.push(check_batchnorm(Mode::Train, 2, &mut rng)?);
    out.push(check_batchnorm(Mode::Eval, 2, &mut rng)?);
    out.push(check_relu(&mut rng)?);
    out.push(check_maxpool(&mut rng)?);
    out.push(check_concat(&mut rng)?);
    out.push(check_softmax_loss(&mut rng)?);
    let k = 4;
    let e2e_seed = rng.gen();
    out.push(check_end_to_end(NetArch::reduced(k), "full", e2e_seed)?);
    out.push(check_end_to_end(NetArch::reduced(k).with_concat(false), "no-concat", e2e_seed + 1)?);
    out.push(check_end_to_end(NetArch::reduced(k).with_dilation(false), "no-dilation", e2e_seed + 2)?);
    Ok(out)
}

/// `check,max_rel_error,tolerance,coordinates,status` with one row per check.
pub fn report_csv(results: &[CheckResult]) -> String {
    let mut s = String::from("check,max_rel_error,tolerance,coordinates,status\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{},{}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.coordinates,
            if r.passed() { "pass" } else { "fail" }
        );
    }
    s
}
