//! Forward and backward passes of the hierarchical-fusion network.

use super::params::{BlockRef, BnRef, ConvRef, NetParams, ParamKind};
use crate::bins::{Binning, InferenceRule};
use crate::error::{Error, Result};
use crate::layers::batchnorm::{self, BatchStats, BnCache, Mode, BN_EPSILON, BN_MOMENTUM};
use crate::layers::{
    add, concat_channels, conv2d, conv2d_backward_ext, deconv2d, deconv2d_backward, maxpool2,
    maxpool2_backward, relu, relu_backward, split_channels, PoolIndices,
};
use crate::loss::{softmax, ScoreMap};
use crate::tensor::{Real, Shape4, Tensor4};

#[derive(Debug, Clone)]
struct BlockCache<T> {
    input: Tensor4<T>,
    bn1: BnCache<T>,
    hidden: Tensor4<T>,
    bn2: BnCache<T>,
    proj_bn: Option<BnCache<T>>,
    output: Tensor4<T>,
}

/// Everything a backward pass needs from the matching forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    mode: Mode,
    version: u64,
    image: Tensor4<T>,
    stem_bn: BnCache<T>,
    stem_act: Tensor4<T>,
    stem_pool: PoolIndices,
    stages: Vec<Vec<BlockCache<T>>>,
    /// Pool between stages 2 and 3 when dilation is off.
    mid_pool: Option<PoolIndices>,
    /// Pool bringing the stage-1 tap down to 1/8 when dilation is off.
    tap1_pool: Option<PoolIndices>,
    tap_channels: Vec<usize>,
    fuse_in: Tensor4<T>,
    fuse_out: Tensor4<T>,
    batch_stats: Vec<(BnRef, BatchStats<T>)>,
}

impl<T: Real> ForwardCache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// Parameter gradients, indexed like [`NetParams::tensors`]. Non-learnable
/// entries (BN running statistics) stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Option<Tensor4<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &NetParams<T>) -> Self {
        Gradients {
            tensors: params
                .tensors()
                .iter()
                .map(|t| t.kind.learnable().then(|| Tensor4::zeros(t.value.shape())))
                .collect(),
        }
    }

    fn empty(len: usize) -> Self {
        Gradients {
            tensors: vec![None; len],
        }
    }

    fn accumulate(&mut self, idx: usize, g: Tensor4<T>) -> Result<()> {
        match &mut self.tensors[idx] {
            Some(acc) => acc.add_assign(&g),
            slot => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn accumulate_vec(&mut self, idx: usize, g: Vec<T>) -> Result<()> {
        let n = g.len();
        self.accumulate(idx, Tensor4::from_vec(Shape4::new(1, n, 1, 1), g)?)
    }

    /// Adds `other` element-wise.
    pub fn add_assign(&mut self, other: &Gradients<T>) -> Result<()> {
        for (i, g) in other.tensors.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(i, g.clone())?;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for g in self.tensors.iter_mut().flatten() {
            g.scale(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .flatten()
            .all(|g| g.data().iter().all(|v| v.is_finite()))
    }
}

fn vector<T: Real>(params: &NetParams<T>, idx: usize) -> &[T] {
    params.get(idx).data()
}

fn conv_fwd<T: Real>(params: &NetParams<T>, c: &ConvRef, x: &Tensor4<T>) -> Result<Tensor4<T>> {
    conv2d(
        x,
        params.get(c.weight),
        c.bias.map(|b| vector(params, b)),
        &c.spec,
    )
}

fn bn_fwd<T: Real>(
    params: &NetParams<T>,
    b: &BnRef,
    x: &Tensor4<T>,
    mode: Mode,
    stats: &mut Vec<(BnRef, BatchStats<T>)>,
) -> Result<(Tensor4<T>, BnCache<T>)> {
    let (y, cache) = batchnorm::batchnorm_forward(
        x,
        vector(params, b.gamma),
        vector(params, b.beta),
        vector(params, b.mean),
        vector(params, b.var),
        BN_EPSILON,
        mode,
    )?;
    if let Some(s) = &cache.batch {
        stats.push((*b, s.clone()));
    }
    Ok((y, cache))
}

fn block_fwd<T: Real>(
    params: &NetParams<T>,
    b: &BlockRef,
    x: Tensor4<T>,
    mode: Mode,
    stats: &mut Vec<(BnRef, BatchStats<T>)>,
) -> Result<BlockCache<T>> {
    let a = conv_fwd(params, &b.conv1, &x)?;
    let (a, bn1) = bn_fwd(params, &b.bn1, &a, mode, stats)?;
    let hidden = relu(&a)?;
    let c = conv_fwd(params, &b.conv2, &hidden)?;
    let (c, bn2) = bn_fwd(params, &b.bn2, &c, mode, stats)?;
    let (skip, proj_bn) = match &b.proj {
        Some((pc, pb)) => {
            let p = conv_fwd(params, pc, &x)?;
            let (p, cache) = bn_fwd(params, pb, &p, mode, stats)?;
            (p, Some(cache))
        }
        None => (x.clone(), None),
    };
    let output = relu(&add(&c, &skip)?)?;
    Ok(BlockCache {
        input: x,
        bn1,
        hidden,
        bn2,
        proj_bn,
        output,
    })
}

fn check_image<T: Real>(params: &NetParams<T>, image: &Tensor4<T>) -> Result<()> {
    let s = image.shape();
    let m = params.arch().input_multiple();
    if s.c != 3 || s.n == 0 || s.h == 0 || s.w == 0 || s.h % m != 0 || s.w % m != 0 {
        return Err(Error::shape(
            "forward",
            format!("image must be n x 3 x h x w with h, w positive multiples of {m}, got {s}"),
        ));
    }
    Ok(())
}

/// Forward pass that never mutates `params`. In train mode the batch
/// statistics are returned in the cache instead of being folded into the
/// running estimates.
pub fn forward_stateless<T: Real>(
    params: &NetParams<T>,
    image: &Tensor4<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, ForwardCache<T>)> {
    check_image(params, image)?;
    let arch = *params.arch();
    let plan = params.plan();
    let mut stats = Vec::new();

    let x = conv_fwd(params, &plan.stem, image)?;
    let (x, stem_bn) = bn_fwd(params, &plan.stem_bn, &x, mode, &mut stats)?;
    let stem_act = relu(&x)?;
    let (mut x, stem_pool) = maxpool2(&stem_act)?;

    let mut stages = Vec::with_capacity(4);
    let mut taps = Vec::with_capacity(4);
    let mut mid_pool = None;
    for (s, blocks) in plan.stages.iter().enumerate() {
        if s == 2 && !arch.dilation {
            let (pooled, idx) = maxpool2(&x)?;
            x = pooled;
            mid_pool = Some(idx);
            // the stage-2 tap is taken after this pool so all taps share 1/8
            taps[1] = x.clone();
        }
        let mut caches = Vec::with_capacity(blocks.len());
        for b in blocks {
            let c = block_fwd(params, b, x, mode, &mut stats)?;
            x = c.output.clone();
            caches.push(c);
        }
        taps.push(x.clone());
        stages.push(caches);
    }

    let mut tap1_pool = None;
    if !arch.dilation {
        let (pooled, idx) = maxpool2(&taps[0])?;
        taps[0] = pooled;
        tap1_pool = Some(idx);
    }
    let tap_channels: Vec<usize> = taps.iter().map(|t| t.shape().c).collect();
    let fuse_in = if arch.concat {
        concat_channels(&taps.iter().collect::<Vec<_>>())?
    } else {
        taps.pop().expect("four taps")
    };
    let fuse_out = conv_fwd(params, &plan.fuse, &fuse_in)?;
    let scores = deconv2d(
        &fuse_out,
        params.get(plan.head.weight),
        plan.head.bias.map(|b| vector(params, b)),
        &plan.head.spec,
    )?;
    let cache = ForwardCache {
        mode,
        version: params.version(),
        image: image.clone(),
        stem_bn,
        stem_act,
        stem_pool,
        stages,
        mid_pool,
        tap1_pool,
        tap_channels,
        fuse_in,
        fuse_out,
        batch_stats: stats,
    };
    Ok((scores, cache))
}

/// Forward pass producing `(n, K, h/2, w/2)` scores. Train mode folds the
/// batch statistics into the BN running estimates.
pub fn forward<T: Real>(
    params: &mut NetParams<T>,
    image: &Tensor4<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, ForwardCache<T>)> {
    let (scores, mut cache) = forward_stateless(params, image, mode)?;
    apply_running_stats(params, &cache.batch_stats);
    cache.version = params.version();
    Ok((scores, cache))
}

pub(crate) fn apply_running_stats<T: Real>(
    params: &mut NetParams<T>,
    stats: &[(BnRef, BatchStats<T>)],
) {
    for (b, s) in stats {
        let (mean, var) = params.running_pair_mut(b.mean, b.var);
        batchnorm::update_running(mean, var, s, BN_MOMENTUM);
    }
}

/// Eval-mode forward; a pure function of `(params, image)`.
pub fn forward_eval<T: Real>(params: &NetParams<T>, image: &Tensor4<T>) -> Result<Tensor4<T>> {
    forward_stateless(params, image, Mode::Eval).map(|(s, _)| s)
}

fn conv_bwd<T: Real>(
    params: &NetParams<T>,
    c: &ConvRef,
    input: &Tensor4<T>,
    grad: &Tensor4<T>,
    grads: &mut Gradients<T>,
    need_input: bool,
) -> Result<Option<Tensor4<T>>> {
    let g = conv2d_backward_ext(input, params.get(c.weight), &c.spec, grad, need_input)?;
    grads.accumulate(c.weight, g.weights)?;
    if let Some(b) = c.bias {
        grads.accumulate_vec(b, g.bias)?;
    }
    Ok(g.input)
}

fn bn_bwd<T: Real>(
    params: &NetParams<T>,
    b: &BnRef,
    cache: &BnCache<T>,
    grad: &Tensor4<T>,
    grads: &mut Gradients<T>,
) -> Result<Tensor4<T>> {
    let g = batchnorm::batchnorm_backward(cache, vector(params, b.gamma), grad)?;
    grads.accumulate_vec(b.gamma, g.gamma)?;
    grads.accumulate_vec(b.beta, g.beta)?;
    Ok(g.input)
}

fn block_bwd<T: Real>(
    params: &NetParams<T>,
    b: &BlockRef,
    c: &BlockCache<T>,
    grad_out: &Tensor4<T>,
    grads: &mut Gradients<T>,
) -> Result<Tensor4<T>> {
    let g_sum = relu_backward(&c.output, grad_out)?;
    let g = bn_bwd(params, &b.bn2, &c.bn2, &g_sum, grads)?;
    let g = conv_bwd(params, &b.conv2, &c.hidden, &g, grads, true)?.expect("input grad");
    let g = relu_backward(&c.hidden, &g)?;
    let g = bn_bwd(params, &b.bn1, &c.bn1, &g, grads)?;
    let mut g_in = conv_bwd(params, &b.conv1, &c.input, &g, grads, true)?.expect("input grad");
    match (&b.proj, &c.proj_bn) {
        (Some((pc, pb)), Some(pcache)) => {
            let g = bn_bwd(params, pb, pcache, &g_sum, grads)?;
            let g = conv_bwd(params, pc, &c.input, &g, grads, true)?.expect("input grad");
            g_in.add_assign(&g)?;
        }
        _ => g_in.add_assign(&g_sum)?,
    }
    Ok(g_in)
}

/// Gradients of every learnable parameter given `d loss / d scores`.
pub fn backward<T: Real>(
    params: &NetParams<T>,
    cache: &ForwardCache<T>,
    grad_scores: &Tensor4<T>,
) -> Result<Gradients<T>> {
    if cache.mode != Mode::Train {
        return Err(Error::invalid("backward needs a train-mode forward cache"));
    }
    if cache.version != params.version() {
        return Err(Error::invalid(format!(
            "stale forward cache: parameters changed (version {} -> {})",
            cache.version,
            params.version()
        )));
    }
    let arch = *params.arch();
    let plan = params.plan();
    let mut grads = Gradients::empty(params.tensors().len());

    let gh = deconv2d_backward(
        &cache.fuse_out,
        params.get(plan.head.weight),
        &plan.head.spec,
        grad_scores,
    )?;
    grads.accumulate(plan.head.weight, gh.weights)?;
    if let Some(b) = plan.head.bias {
        grads.accumulate_vec(b, gh.bias)?;
    }
    let g_fuse_out = gh.input.expect("deconv input grad");
    let g_fuse_in = conv_bwd(params, &plan.fuse, &cache.fuse_in, &g_fuse_out, &mut grads, true)?
        .expect("input grad");

    let mut g_taps: Vec<Option<Tensor4<T>>> = if arch.concat {
        split_channels(&g_fuse_in, &cache.tap_channels)?
            .into_iter()
            .map(Some)
            .collect()
    } else {
        vec![None, None, None, Some(g_fuse_in)]
    };

    if let (Some(idx), Some(gt)) = (&cache.tap1_pool, &g_taps[0]) {
        g_taps[0] = Some(maxpool2_backward(idx, gt)?);
    }
    let mut g: Option<Tensor4<T>> = None;
    for s in (0..4).rev() {
        g = merge(g, g_taps[s].take())?;
        let mut gs = g.take().expect("gradient reaches every stage");
        for (b, c) in plan.stages[s].iter().zip(&cache.stages[s]).rev() {
            gs = block_bwd(params, b, c, &gs, &mut grads)?;
        }
        if s == 2 {
            if let Some(idx) = &cache.mid_pool {
                // the pooled stage-2 output also feeds the stage-2 tap
                let gp = merge(Some(gs), g_taps[1].take())?.expect("non-empty");
                gs = maxpool2_backward(idx, &gp)?;
            }
        }
        g = Some(gs);
    }

    let g = maxpool2_backward(&cache.stem_pool, &g.expect("stem gradient"))?;
    let g = relu_backward(&cache.stem_act, &g)?;
    let g = bn_bwd(params, &plan.stem_bn, &cache.stem_bn, &g, &mut grads)?;
    conv_bwd(params, &plan.stem, &cache.image, &g, &mut grads, false)?;

    for (i, t) in params.tensors().iter().enumerate() {
        if t.kind.learnable() && grads.tensors[i].is_none() {
            grads.tensors[i] = Some(Tensor4::zeros(t.value.shape()));
        }
        debug_assert!(t.kind.learnable() || grads.tensors[i].is_none());
        debug_assert!(t.kind != ParamKind::BnRunningMean || grads.tensors[i].is_none());
    }
    Ok(grads)
}

fn merge<T: Real>(a: Option<Tensor4<T>>, b: Option<Tensor4<T>>) -> Result<Option<Tensor4<T>>> {
    Ok(match (a, b) {
        (Some(mut a), Some(b)) => {
            a.add_assign(&b)?;
            Some(a)
        }
        (a, None) => a,
        (None, b) => b,
    })
}

/// Eval-mode per-pixel probabilities at half resolution.
pub fn predict_scores<T: Real>(params: &NetParams<T>, image: &Tensor4<T>) -> Result<ScoreMap<T>> {
    softmax(&forward_eval(params, image)?)
}

/// Converts a score map to a `(n, 1, h, w)` depth map with the given rule.
pub fn scores_to_depth<T: Real>(
    probs: &ScoreMap<T>,
    binning: &Binning,
    rule: InferenceRule,
) -> Result<Tensor4<T>> {
    let s = probs.tensor().shape();
    if s.c != binning.num_bins() {
        return Err(Error::shape(
            "scores_to_depth",
            format!("{} score channels for {} bins", s.c, binning.num_bins()),
        ));
    }
    let mut out = Tensor4::zeros(Shape4::new(s.n, 1, s.h, s.w));
    let plane = s.plane();
    let data = probs.tensor().data();
    let mut p = vec![T::zero(); s.c];
    for n in 0..s.n {
        for px in 0..plane {
            for (c, v) in p.iter_mut().enumerate() {
                *v = data[(n * s.c + c) * plane + px];
            }
            out.data_mut()[n * plane + px] = T::of(rule.apply(binning, &p)?);
        }
    }
    Ok(out)
}

/// Softmax over the eval-mode scores, then soft-weighted-sum or hard-max
/// per pixel. Output is `(n, 1, h/2, w/2)`.
pub fn predict_depth<T: Real>(
    params: &NetParams<T>,
    image: &Tensor4<T>,
    binning: &Binning,
    rule: InferenceRule,
) -> Result<Tensor4<T>> {
    scores_to_depth(&predict_scores(params, image)?, binning, rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::conv::ConvSpec;
    use crate::net::arch::NetArch;
    use crate::net::params::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(n: usize, h: usize, w: usize, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(Shape4::new(n, 3, h, w), |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    fn random_like(shape: Shape4, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn output_is_half_resolution_for_every_variant() {
        for arch in [
            NetArch::new(40),
            NetArch::new(40).with_concat(false),
            NetArch::new(40).with_dilation(false),
        ] {
            let p = init_params::<f64>(1, arch).unwrap();
            let s = forward_eval(&p, &image(1, 64, 64, 2)).unwrap();
            assert_eq!(s.shape(), Shape4::new(1, 40, 32, 32), "{arch:?}");
        }
        let p = init_params::<f64>(1, NetArch::reduced(5)).unwrap();
        let s = forward_eval(&p, &image(2, 16, 24, 2)).unwrap();
        assert_eq!(s.shape(), Shape4::new(2, 5, 8, 12));
    }

    #[test]
    fn rejects_bad_image_sizes() {
        let p = init_params::<f64>(1, NetArch::reduced(5)).unwrap();
        assert!(forward_eval(&p, &image(1, 18, 16, 0)).is_err());
        let p = init_params::<f64>(1, NetArch::reduced(5).with_dilation(false)).unwrap();
        assert!(forward_eval(&p, &image(1, 12, 16, 0)).is_err());
        assert!(forward_eval(&p, &image(1, 16, 16, 0)).is_ok());
    }

    #[test]
    fn zero_image_gives_finite_scores() {
        let p = init_params::<f32>(3, NetArch::new(40)).unwrap();
        let s = forward_eval(&p, &Tensor4::zeros(Shape4::new(1, 3, 64, 64))).unwrap();
        assert!(s.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn eval_forward_is_pure_and_deterministic() {
        let p = init_params::<f64>(4, NetArch::reduced(6)).unwrap();
        let before = p.clone();
        let x = image(1, 16, 16, 5);
        let a = forward_eval(&p, &x).unwrap();
        let b = forward_eval(&p, &x).unwrap();
        assert_eq!(a, b);
        assert_eq!(p, before);
    }

    #[test]
    fn train_forward_updates_running_stats_only() {
        let mut p = init_params::<f64>(4, NetArch::reduced(6)).unwrap();
        let before = p.clone();
        let (_, cache) = forward(&mut p, &image(1, 16, 16, 5), Mode::Train).unwrap();
        for (a, b) in p.tensors().iter().zip(before.tensors()) {
            let changed = a.value != b.value;
            assert_eq!(changed, !a.kind.learnable(), "{}", a.name);
        }
        // the cache stays valid: running stats do not enter backward
        let g = Tensor4::zeros(Shape4::new(1, 6, 8, 8));
        assert!(backward(&p, &cache, &g).is_ok());
    }

    #[test]
    fn backward_rejects_eval_and_stale_caches() {
        let mut p = init_params::<f64>(4, NetArch::reduced(6)).unwrap();
        let x = image(1, 16, 16, 5);
        let g = Tensor4::zeros(Shape4::new(1, 6, 8, 8));
        let (_, eval_cache) = forward_stateless(&p, &x, Mode::Eval).unwrap();
        assert!(backward(&p, &eval_cache, &g).is_err());
        let (_, cache) = forward(&mut p, &x, Mode::Train).unwrap();
        p.get_mut(0).data_mut()[0] += 1.0;
        assert!(backward(&p, &cache, &g).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let p = init_params::<f64>(4, NetArch::reduced(6)).unwrap();
        let (_, cache) = forward_stateless(&p, &image(1, 16, 16, 5), Mode::Train).unwrap();
        let g = backward(&p, &cache, &Tensor4::zeros(Shape4::new(1, 6, 8, 8))).unwrap();
        for (t, gt) in p.tensors().iter().zip(&g.tensors) {
            match gt {
                Some(gt) => assert!(gt.data().iter().all(|&v| v == 0.0), "{}", t.name),
                None => assert!(!t.kind.learnable()),
            }
        }
    }

    #[test]
    fn fuse_bias_gradient_is_deconv_adjoint_of_upstream() {
        let arch = NetArch::reduced(5);
        let p = init_params::<f64>(9, arch).unwrap();
        let x = image(2, 16, 16, 10);
        let (s, cache) = forward_stateless(&p, &x, Mode::Train).unwrap();
        let gs = random_like(s.shape(), 11);
        let grads = backward(&p, &cache, &gs).unwrap();
        let bias = grads.tensors[p.index_of("fuse.conv.bias").unwrap()]
            .clone()
            .unwrap();

        // independent route: the deconv input gradient is a plain conv of the
        // upstream gradient with the head weights read as (out, in, kh, kw)
        let head = arch.head_spec();
        let conv_spec = ConvSpec {
            in_channels: head.out_channels,
            out_channels: head.in_channels,
            ..head
        };
        let w = p.get(p.index_of("head.deconv.weight").unwrap());
        let routed = conv2d(&gs, w, None, &conv_spec).unwrap();
        let rs = routed.shape();
        for c in 0..rs.c {
            let mut expect = 0.0;
            for n in 0..rs.n {
                expect += routed.plane(n, c).iter().sum::<f64>();
            }
            let got = bias.data()[c];
            assert!((got - expect).abs() <= 1e-10 * expect.abs().max(1.0), "{got} vs {expect}");
        }
    }

    fn check_end_to_end(arch: NetArch, h: usize) {
        let p = init_params::<f64>(21, arch).unwrap();
        let x = image(2, h, h, 22);
        let (s, cache) = forward_stateless(&p, &x, Mode::Train).unwrap();
        let r = random_like(s.shape(), 23);
        let grads = backward(&p, &cache, &r).unwrap();
        let loss = |q: &NetParams<f64>| {
            let (s, _) = forward_stateless(q, &x, Mode::Train).unwrap();
            s.dot(&r).unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let eps = 1e-5;
        let mut q = p.clone();
        for (i, t) in p.tensors().iter().enumerate() {
            if !t.kind.learnable() {
                continue;
            }
            let j = rng.gen_range(0..t.value.len());
            let orig = q.get(i).data()[j];
            q.get_mut(i).data_mut()[j] = orig + eps;
            let up = loss(&q);
            q.get_mut(i).data_mut()[j] = orig - eps;
            let down = loss(&q);
            q.get_mut(i).data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * eps);
            let an = grads.tensors[i].as_ref().unwrap().data()[j];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < 1e-3, "{} [{j}]: fd {fd} vs analytic {an}", t.name);
        }
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        check_end_to_end(NetArch::reduced(4), 16);
    }

    #[test]
    fn ablation_variants_have_correct_gradients() {
        check_end_to_end(NetArch::reduced(4).with_concat(false), 16);
        check_end_to_end(NetArch::reduced(4).with_dilation(false), 16);
    }

    #[test]
    fn uniform_scores_give_geometric_mean_depth() {
        let mut p = init_params::<f64>(1, NetArch::reduced(5)).unwrap();
        let head = p.index_of("head.deconv.weight").unwrap();
        p.get_mut(head).fill(0.0);
        let b = Binning::new(0.5, 8.0, 5).unwrap();
        let d = predict_depth(&p, &image(1, 16, 16, 3), &b, InferenceRule::Soft).unwrap();
        assert_eq!(d.shape(), Shape4::new(1, 1, 8, 8));
        assert!(d.data().iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn hard_rule_outputs_bin_centres() {
        let p = init_params::<f64>(1, NetArch::reduced(5)).unwrap();
        let b = Binning::new(0.5, 8.0, 5).unwrap();
        let d = predict_depth(&p, &image(1, 16, 16, 3), &b, InferenceRule::Hard).unwrap();
        let centres: Vec<f64> = (0..5).map(|i| b.bin_center(i)).collect();
        assert!(d.data().iter().all(|v| centres.contains(v)));
    }
}
