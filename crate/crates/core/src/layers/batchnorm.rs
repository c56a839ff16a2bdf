use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BNState<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Real> BNState<T> {
    pub fn new(channels: usize) -> Self {
        BNState {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Forward pass. In train mode the running statistics are updated from
    /// the batch statistics.
    pub fn forward(&mut self, input: &Tensor4<T>, mode: Mode) -> Result<(Tensor4<T>, BnCache<T>)> {
        let (out, cache) = batchnorm_forward(
            input,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            self.epsilon,
            mode,
        )?;
        if let Some(stats) = &cache.batch {
            update_running(
                &mut self.running_mean,
                &mut self.running_var,
                stats,
                self.momentum,
            );
        }
        Ok((out, cache))
    }
}

/// Batch statistics observed in a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, the value folded into the running estimate.
    pub var_unbiased: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub mode: Mode,
    pub xhat: Tensor4<T>,
    pub inv_std: Vec<T>,
    pub batch: Option<BatchStats<T>>,
}

pub fn update_running<T: Real>(
    running_mean: &mut [T],
    running_var: &mut [T],
    stats: &BatchStats<T>,
    momentum: f64,
) {
    let m = T::of(momentum);
    let keep = T::one() - m;
    for (r, &b) in running_mean.iter_mut().zip(&stats.mean) {
        *r = keep * *r + m * b;
    }
    for (r, &b) in running_var.iter_mut().zip(&stats.var_unbiased) {
        *r = keep * *r + m * b;
    }
}

/// Pure batch-norm forward; never touches running statistics. Train mode
/// reports the batch statistics in the cache for the caller to fold in.
pub fn batchnorm_forward<T: Real>(
    input: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    epsilon: f64,
    mode: Mode,
) -> Result<(Tensor4<T>, BnCache<T>)> {
    let s = input.shape();
    let c = s.c;
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(Error::shape(
            "batchnorm",
            format!("input has {c} channels, state has {}", gamma.len()),
        ));
    }
    let m = s.n * s.plane();
    if m == 0 {
        return Err(Error::shape(
            "batchnorm",
            "zero batch*spatial extent, variance undefined",
        ));
    }
    let plane = s.plane();
    let eps = T::of(epsilon);

    let (mean, var, batch) = match mode {
        Mode::Train => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            let mf = T::of(m as f64);
            for ch in 0..c {
                let mut acc = T::zero();
                for n in 0..s.n {
                    acc += input.plane(n, ch).iter().copied().sum::<T>();
                }
                let mu = acc / mf;
                let mut sq = T::zero();
                for n in 0..s.n {
                    for &v in input.plane(n, ch) {
                        let d = v - mu;
                        sq += d * d;
                    }
                }
                mean[ch] = mu;
                var[ch] = sq / mf;
            }
            let correction = if m > 1 {
                T::of(m as f64 / (m as f64 - 1.0))
            } else {
                T::one()
            };
            let var_unbiased = var.iter().map(|&v| v * correction).collect();
            let stats = BatchStats {
                mean: mean.clone(),
                var_unbiased,
            };
            (mean, var, Some(stats))
        }
        Mode::Eval => (running_mean.to_vec(), running_var.to_vec(), None),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Tensor4::zeros(s);
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for ch in 0..c {
            let src = input.plane(n, ch);
            let (mu, is, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            let xh = xhat.plane_mut(n, ch);
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - mu) * is;
            }
            let start = (n * c + ch) * plane;
            let dst = &mut out.data_mut()[start..start + plane];
            for (d, &v) in dst.iter_mut().zip(xhat.plane(n, ch)) {
                *d = g * v + b;
            }
        }
    }
    out.ensure_finite("batchnorm")?;
    Ok((
        out,
        BnCache {
            mode,
            xhat,
            inv_std,
            batch,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub input: Tensor4<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Backward pass. In train mode the gradient flows through the batch
/// statistics; in eval mode the normalization is a fixed affine map.
pub fn batchnorm_backward<T: Real>(
    cache: &BnCache<T>,
    gamma: &[T],
    grad_output: &Tensor4<T>,
) -> Result<BnGrads<T>> {
    let s = cache.xhat.shape();
    grad_output.expect_shape("batchnorm_backward", s)?;
    if gamma.len() != s.c {
        return Err(Error::shape("batchnorm_backward", "gamma length"));
    }
    let m = T::of((s.n * s.plane()) as f64);
    let mut g_gamma = vec![T::zero(); s.c];
    let mut g_beta = vec![T::zero(); s.c];
    for n in 0..s.n {
        for ch in 0..s.c {
            let gy = grad_output.plane(n, ch);
            let xh = cache.xhat.plane(n, ch);
            let mut sb = T::zero();
            let mut sg = T::zero();
            for (&g, &x) in gy.iter().zip(xh) {
                sb += g;
                sg += g * x;
            }
            g_beta[ch] += sb;
            g_gamma[ch] += sg;
        }
    }
    let mut gi = Tensor4::zeros(s);
    for n in 0..s.n {
        for ch in 0..s.c {
            let scale = gamma[ch] * cache.inv_std[ch];
            let gy = grad_output.plane(n, ch);
            let xh = cache.xhat.plane(n, ch);
            let dst = gi.plane_mut(n, ch);
            match cache.mode {
                Mode::Train => {
                    let (sb, sg) = (g_beta[ch] / m, g_gamma[ch] / m);
                    for ((d, &g), &x) in dst.iter_mut().zip(gy).zip(xh) {
                        *d = scale * (g - sb - x * sg);
                    }
                }
                Mode::Eval => {
                    for (d, &g) in dst.iter_mut().zip(gy) {
                        *d = scale * g;
                    }
                }
            }
        }
    }
    gi.ensure_finite("batchnorm_backward")?;
    Ok(BnGrads {
        input: gi,
        gamma: g_gamma,
        beta: g_beta,
    })
}
