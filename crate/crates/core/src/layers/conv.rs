//! Dilated convolution and its transpose.
//!
//! Convolution here is cross-correlation: output `(oy, ox)` reads input
//! `(oy*stride + ky*dilation - pad, ox*stride + kx*dilation - pad)` for every
//! kernel tap `(ky, kx)`. Out-of-range reads hit the implicit zero border.
//!
//! The three kernels ([`corr_forward`], [`corr_adjoint`], [`corr_weight_grad`])
//! unfold each sample with im2col and hand the product to a single-threaded
//! GEMM, so every output element is accumulated in a fixed order and results
//! are bitwise reproducible.

use crate::error::{Error, Result};
use crate::tensor::{Mat, MatMut, Real, Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Square kernel, stride 1, padding that preserves spatial size for odd `kernel`.
    pub fn same(kernel: usize, dilation: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            pad: dilation * (kernel - 1) / 2,
            dilation,
            in_channels,
            out_channels,
        }
    }

    pub fn effective_kernel(&self) -> (usize, usize) {
        (
            self.dilation * (self.kernel_h - 1) + 1,
            self.dilation * (self.kernel_w - 1) + 1,
        )
    }

    /// The same geometry with input and output channel counts swapped.
    ///
    /// `deconv2d(.., spec.transposed())` is the adjoint of `conv2d(.., spec)`.
    pub fn transposed(&self) -> Self {
        ConvSpec {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            ..*self
        }
    }

    pub fn weight_shape(&self) -> Shape4 {
        Shape4::new(self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
    }

    /// Weight layout for a transposed convolution: (in, out, kh, kw).
    pub fn deconv_weight_shape(&self) -> Shape4 {
        Shape4::new(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0
            || self.kernel_w == 0
            || self.stride == 0
            || self.dilation == 0
            || self.in_channels == 0
            || self.out_channels == 0
        {
            return Err(Error::invalid(format!(
                "conv spec fields must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Output spatial size of a forward convolution on an `h x w` input.
    pub fn conv_output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (eh, ew) = self.effective_kernel();
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if eh > ph || ew > pw {
            return Err(Error::shape(
                "conv2d",
                format!("effective kernel {eh}x{ew} exceeds padded input {ph}x{pw}"),
            ));
        }
        Ok(((ph - eh) / self.stride + 1, (pw - ew) / self.stride + 1))
    }

    /// Output spatial size of a transposed convolution on an `h x w` input.
    pub fn deconv_output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if h == 0 || w == 0 {
            return Err(Error::shape("deconv2d", "empty input"));
        }
        let (eh, ew) = self.effective_kernel();
        let oh = ((h - 1) * self.stride + eh) as isize - 2 * self.pad as isize;
        let ow = ((w - 1) * self.stride + ew) as isize - 2 * self.pad as isize;
        if oh <= 0 || ow <= 0 {
            return Err(Error::shape(
                "deconv2d",
                format!("padding {} leaves no output for {h}x{w} input", self.pad),
            ));
        }
        Ok((oh as usize, ow as usize))
    }
}

/// Shapes of one cross-correlation, seen from the forward direction:
/// `x` (n, ci, hi, wi) -> `y` (n, co, ho, wo), weights (co, ci, kh, kw).
#[derive(Debug, Clone, Copy)]
struct Geom {
    n: usize,
    ci: usize,
    hi: usize,
    wi: usize,
    co: usize,
    ho: usize,
    wo: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dil: usize,
}

impl Geom {
    fn x_shape(&self) -> Shape4 {
        Shape4::new(self.n, self.ci, self.hi, self.wi)
    }
    fn y_shape(&self) -> Shape4 {
        Shape4::new(self.n, self.co, self.ho, self.wo)
    }
    fn w_shape(&self) -> Shape4 {
        Shape4::new(self.co, self.ci, self.kh, self.kw)
    }

    /// Range of output positions whose tap `k` lands inside the input, and
    /// the signed input offset at output position 0.
    #[inline]
    fn tap_range(&self, k: usize, out_len: usize, in_len: usize) -> (usize, usize, isize) {
        let off = (k * self.dil) as isize - self.pad as isize;
        let s = self.stride as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= in_len - 1
        let last = in_len as isize - 1 - off;
        let hi = if last < 0 { 0 } else { last / s + 1 };
        let lo = lo.min(out_len as isize) as usize;
        let hi = (hi.min(out_len as isize) as usize).max(lo);
        (lo, hi, off)
    }
}

fn conv_geom(input: Shape4, spec: &ConvSpec) -> Result<Geom> {
    if input.c != spec.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input has {} channels, spec expects {}",
                input.c, spec.in_channels
            ),
        ));
    }
    let (ho, wo) = spec.conv_output_size(input.h, input.w)?;
    Ok(Geom {
        n: input.n,
        ci: input.c,
        hi: input.h,
        wi: input.w,
        co: spec.out_channels,
        ho,
        wo,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.pad,
        dil: spec.dilation,
    })
}

/// Geometry of a transposed convolution, expressed as the forward
/// convolution it is the adjoint of (deconv output = conv input).
fn deconv_geom(input: Shape4, spec: &ConvSpec) -> Result<Geom> {
    if input.c != spec.in_channels {
        return Err(Error::shape(
            "deconv2d",
            format!(
                "input has {} channels, spec expects {}",
                input.c, spec.in_channels
            ),
        ));
    }
    let (oh, ow) = spec.deconv_output_size(input.h, input.w)?;
    Ok(Geom {
        n: input.n,
        ci: spec.out_channels,
        hi: oh,
        wi: ow,
        co: spec.in_channels,
        ho: input.h,
        wo: input.w,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.pad,
        dil: spec.dilation,
    })
}

/// True when the column matrix of a sample is the input plane stack itself.
fn is_pointwise(g: &Geom) -> bool {
    g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0 && g.ho == g.hi && g.wo == g.wi
}

/// Unfolds one sample `x` (ci, hi, wi) into the column matrix
/// (ci*kh*kw, ho*wo): row `(ic, ky, kx)` holds the input value each output
/// position reads through that tap, zero where the tap falls on the border.
fn im2col<T: Real>(x: &[T], g: &Geom, cols: &mut [T]) {
    let p = g.ho * g.wo;
    cols.fill(T::zero());
    for ic in 0..g.ci {
        let xp = &x[ic * g.hi * g.wi..][..g.hi * g.wi];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi, yoff) = g.tap_range(ky, g.ho, g.hi);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi, xoff) = g.tap_range(kx, g.wo, g.wi);
                let row = &mut cols[((ic * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in oy_lo..oy_hi {
                    let iy = (oy as isize * g.stride as isize + yoff) as usize;
                    let xr = &xp[iy * g.wi..][..g.wi];
                    let dst = &mut row[oy * g.wo..][..g.wo];
                    for ox in ox_lo..ox_hi {
                        dst[ox] = xr[(ox as isize * g.stride as isize + xoff) as usize];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a column matrix back onto one sample,
/// adding into `x`.
fn col2im<T: Real>(cols: &[T], g: &Geom, x: &mut [T]) {
    let p = g.ho * g.wo;
    for ic in 0..g.ci {
        let xp = &mut x[ic * g.hi * g.wi..][..g.hi * g.wi];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi, yoff) = g.tap_range(ky, g.ho, g.hi);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi, xoff) = g.tap_range(kx, g.wo, g.wi);
                let row = &cols[((ic * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in oy_lo..oy_hi {
                    let iy = (oy as isize * g.stride as isize + yoff) as usize;
                    let src = &row[oy * g.wo..][..g.wo];
                    let xr = &mut xp[iy * g.wi..][..g.wi];
                    for ox in ox_lo..ox_hi {
                        xr[(ox as isize * g.stride as isize + xoff) as usize] += src[ox];
                    }
                }
            }
        }
    }
}

/// y[n,oc] = sum_ic sum_taps w[oc,ic,ky,kx] * x[n,ic, shifted]
///
/// Per sample: y (co, p) = w (co, ck) * cols (ck, p).
fn corr_forward<T: Real>(x: &[T], w: &[T], g: &Geom) -> Vec<T> {
    let (p, ck) = (g.ho * g.wo, g.ci * g.kh * g.kw);
    let mut y = vec![T::zero(); g.n * g.co * p];
    let mut cols = vec![T::zero(); if is_pointwise(g) { 0 } else { ck * p }];
    for n in 0..g.n {
        let xn = &x[n * g.ci * g.hi * g.wi..][..g.ci * g.hi * g.wi];
        let b = if is_pointwise(g) {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        T::gemm(
            g.co,
            ck,
            p,
            Mat { data: w, rs: ck, cs: 1 },
            Mat { data: b, rs: p, cs: 1 },
            T::zero(),
            MatMut { data: &mut y[n * g.co * p..][..g.co * p], rs: p, cs: 1 },
        );
    }
    y
}

/// Adjoint of [`corr_forward`] with respect to `x`: scatters `gy` back
/// through the taps. Per sample: cols (ck, p) = w^T (ck, co) * gy (co, p).
fn corr_adjoint<T: Real>(gy: &[T], w: &[T], g: &Geom) -> Vec<T> {
    let (p, ck) = (g.ho * g.wo, g.ci * g.kh * g.kw);
    let plane = g.ci * g.hi * g.wi;
    let mut gx = vec![T::zero(); g.n * plane];
    let mut cols = vec![T::zero(); ck * p];
    for n in 0..g.n {
        let out = &mut gx[n * plane..][..plane];
        let target = if is_pointwise(g) { &mut *out } else { &mut cols[..] };
        T::gemm(
            ck,
            g.co,
            p,
            Mat { data: w, rs: 1, cs: ck },
            Mat { data: &gy[n * g.co * p..][..g.co * p], rs: p, cs: 1 },
            T::zero(),
            MatMut { data: target, rs: p, cs: 1 },
        );
        if !is_pointwise(g) {
            col2im(&cols, g, out);
        }
    }
    gx
}

/// Gradient of `<corr_forward(x, w), gy>` with respect to `w`:
/// gw (co, ck) = sum_n gy_n (co, p) * cols_n^T (p, ck).
fn corr_weight_grad<T: Real>(x: &[T], gy: &[T], g: &Geom) -> Vec<T> {
    let (p, ck) = (g.ho * g.wo, g.ci * g.kh * g.kw);
    let mut gw = vec![T::zero(); g.co * ck];
    let mut cols = vec![T::zero(); if is_pointwise(g) { 0 } else { ck * p }];
    for n in 0..g.n {
        let xn = &x[n * g.ci * g.hi * g.wi..][..g.ci * g.hi * g.wi];
        let b = if is_pointwise(g) {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        T::gemm(
            g.co,
            p,
            ck,
            Mat { data: &gy[n * g.co * p..][..g.co * p], rs: p, cs: 1 },
            Mat { data: b, rs: 1, cs: p },
            if n == 0 { T::zero() } else { T::one() },
            MatMut { data: &mut gw, rs: ck, cs: 1 },
        );
    }
    gw
}

fn channel_sums<T: Real>(t: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); c];
    for b in 0..n {
        for (ch, s) in sums.iter_mut().enumerate() {
            *s += t[(b * c + ch) * plane..][..plane].iter().copied().sum::<T>();
        }
    }
    sums
}

fn add_bias<T: Real>(y: &mut [T], bias: &[T], n: usize, c: usize, plane: usize) {
    for b in 0..n {
        for (ch, &bv) in bias.iter().enumerate() {
            for v in &mut y[(b * c + ch) * plane..][..plane] {
                *v += bv;
            }
        }
    }
}

fn check_bias<T>(op: &'static str, bias: Option<&[T]>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => Err(Error::shape(
            op,
            format!("bias has {} entries, expected {channels}", b.len()),
        )),
        _ => Ok(()),
    }
}

/// Gradients of a convolution-like layer. `input` is `None` when the caller
/// asked to skip the input gradient.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor4<T>>,
    pub weights: Tensor4<T>,
    pub bias: Vec<T>,
}

/// Dilated 2-D convolution (cross-correlation) with optional per-channel bias.
pub fn conv2d<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    let g = conv_geom(input.shape(), spec)?;
    weights.expect_shape("conv2d weights", g.w_shape())?;
    check_bias("conv2d", bias, g.co)?;
    let mut y = corr_forward(input.data(), weights.data(), &g);
    if let Some(b) = bias {
        add_bias(&mut y, b, g.n, g.co, g.ho * g.wo);
    }
    let y = Tensor4::from_vec(g.y_shape(), y)?;
    y.ensure_finite("conv2d")?;
    Ok(y)
}

/// Gradients of [`conv2d`] given the upstream gradient.
pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    spec: &ConvSpec,
    grad_output: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    conv2d_backward_ext(input, weights, spec, grad_output, true)
}

pub fn conv2d_backward_ext<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    spec: &ConvSpec,
    grad_output: &Tensor4<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = conv_geom(input.shape(), spec)?;
    weights.expect_shape("conv2d_backward weights", g.w_shape())?;
    grad_output.expect_shape("conv2d_backward grad_output", g.y_shape())?;
    let gy = grad_output.data();
    let gi = if need_input_grad {
        let gi = Tensor4::from_vec(g.x_shape(), corr_adjoint(gy, weights.data(), &g))?;
        gi.ensure_finite("conv2d_backward")?;
        Some(gi)
    } else {
        None
    };
    let gw = Tensor4::from_vec(g.w_shape(), corr_weight_grad(input.data(), gy, &g))?;
    gw.ensure_finite("conv2d_backward")?;
    Ok(ConvGrads {
        input: gi,
        weights: gw,
        bias: channel_sums(gy, g.n, g.co, g.ho * g.wo),
    })
}

/// Transposed convolution. Weights are laid out (in, out, kh, kw) and the
/// spec's channel counts are the deconvolution's own input/output widths.
pub fn deconv2d<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    let g = deconv_geom(input.shape(), spec)?;
    weights.expect_shape("deconv2d weights", g.w_shape())?;
    check_bias("deconv2d", bias, g.ci)?;
    let mut out = corr_adjoint(input.data(), weights.data(), &g);
    if let Some(b) = bias {
        add_bias(&mut out, b, g.n, g.ci, g.hi * g.wi);
    }
    let out = Tensor4::from_vec(g.x_shape(), out)?;
    out.ensure_finite("deconv2d")?;
    Ok(out)
}

pub fn deconv2d_backward<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    spec: &ConvSpec,
    grad_output: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    let g = deconv_geom(input.shape(), spec)?;
    weights.expect_shape("deconv2d_backward weights", g.w_shape())?;
    grad_output.expect_shape("deconv2d_backward grad_output", g.x_shape())?;
    let go = grad_output.data();
    let gi = Tensor4::from_vec(g.y_shape(), corr_forward(go, weights.data(), &g))?;
    let gw = Tensor4::from_vec(g.w_shape(), corr_weight_grad(go, input.data(), &g))?;
    gi.ensure_finite("deconv2d_backward")?;
    gw.ensure_finite("deconv2d_backward")?;
    Ok(ConvGrads {
        input: Some(gi),
        weights: gw,
        bias: channel_sums(go, g.n, g.ci, g.hi * g.wi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape4, rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    /// Plain convolution written as directly as possible: padded input,
    /// explicit loops, no tap-range clipping.
    fn naive_conv(x: &Tensor4<f64>, w: &Tensor4<f64>, stride: usize, pad: usize) -> Tensor4<f64> {
        let s = x.shape();
        let ws = w.shape();
        let (ph, pw) = (s.h + 2 * pad, s.w + 2 * pad);
        let ho = (ph - ws.h) / stride + 1;
        let wo = (pw - ws.w) / stride + 1;
        let padded = |n, c, y: usize, xx: usize| {
            if y < pad || xx < pad || y >= pad + s.h || xx >= pad + s.w {
                0.0
            } else {
                x.at(n, c, y - pad, xx - pad)
            }
        };
        Tensor4::from_fn(Shape4::new(s.n, ws.n, ho, wo), |n, oc, oy, ox| {
            let mut acc = 0.0;
            for ic in 0..s.c {
                for ky in 0..ws.h {
                    for kx in 0..ws.w {
                        acc += w.at(oc, ic, ky, kx) * padded(n, ic, oy * stride + ky, ox * stride + kx);
                    }
                }
            }
            acc
        })
    }

    /// Kernel with `dilation - 1` zeros inserted between taps.
    fn zero_insert(w: &Tensor4<f64>, dilation: usize) -> Tensor4<f64> {
        let s = w.shape();
        let eh = dilation * (s.h - 1) + 1;
        let ew = dilation * (s.w - 1) + 1;
        Tensor4::from_fn(Shape4::new(s.n, s.c, eh, ew), |o, i, y, x| {
            if y % dilation == 0 && x % dilation == 0 {
                w.at(o, i, y / dilation, x / dilation)
            } else {
                0.0
            }
        })
    }

    #[test]
    fn pointwise_scaling() {
        let x = Tensor4::full(Shape4::new(1, 1, 3, 3), 1.0);
        let w = Tensor4::full(Shape4::new(1, 1, 1, 1), 2.0);
        let spec = ConvSpec::same(1, 1, 1, 1);
        let y = conv2d(&x, &w, Some(&[0.0]), &spec).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 3, 3));
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn dilation_two_matches_zero_inserted_kernel_on_7x7() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(Shape4::new(1, 1, 7, 7), &mut rng);
        let w = random(Shape4::new(1, 1, 3, 3), &mut rng);
        let spec = ConvSpec {
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            pad: 0,
            dilation: 2,
            in_channels: 1,
            out_channels: 1,
        };
        let y = conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 3, 3));
        let oracle = naive_conv(&x, &zero_insert(&w, 2), 1, 0);
        assert!(y.max_abs_diff(&oracle).unwrap() <= 1e-12);
    }

    #[test]
    fn dilation_one_matches_naive_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(stride, pad) in &[(1, 0), (1, 1), (2, 1), (2, 0)] {
            let x = random(Shape4::new(2, 3, 9, 8), &mut rng);
            let w = random(Shape4::new(4, 3, 3, 3), &mut rng);
            let spec = ConvSpec {
                kernel_h: 3,
                kernel_w: 3,
                stride,
                pad,
                dilation: 1,
                in_channels: 3,
                out_channels: 4,
            };
            let y = conv2d(&x, &w, None, &spec).unwrap();
            let oracle = naive_conv(&x, &w, stride, pad);
            assert_eq!(y.shape(), oracle.shape());
            // same summation order (ic, ky, kx) per output, so exact
            assert!(y.max_abs_diff(&oracle).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn effective_kernel_larger_than_input_is_rejected() {
        let x = Tensor4::<f64>::zeros(Shape4::new(1, 1, 4, 4));
        let w = Tensor4::<f64>::zeros(Shape4::new(1, 1, 3, 3));
        let spec = ConvSpec {
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            pad: 0,
            dilation: 2,
            in_channels: 1,
            out_channels: 1,
        };
        assert!(matches!(conv2d(&x, &w, None, &spec), Err(Error::Shape { .. })));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor4::<f64>::zeros(Shape4::new(1, 2, 4, 4));
        let w = Tensor4::<f64>::zeros(Shape4::new(1, 1, 3, 3));
        let spec = ConvSpec::same(3, 1, 1, 1);
        assert!(conv2d(&x, &w, None, &spec).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(Shape4::new(1, 2, 6, 6), &mut rng);
        let w = random(Shape4::new(3, 2, 3, 3), &mut rng);
        let spec = ConvSpec::same(3, 2, 2, 3);
        let gy = Tensor4::zeros(Shape4::new(1, 3, 6, 6));
        let g = conv2d_backward(&x, &w, &spec, &gy).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_product_rule() {
        let x = Tensor4::full(Shape4::new(1, 1, 1, 1), 3.0);
        let w = Tensor4::full(Shape4::new(1, 1, 1, 1), -1.5);
        let spec = ConvSpec::same(1, 1, 1, 1);
        let gy = Tensor4::full(Shape4::new(1, 1, 1, 1), 1.0);
        let g = conv2d_backward(&x, &w, &spec, &gy).unwrap();
        assert_eq!(g.weights.data(), &[3.0]);
        assert_eq!(g.input.unwrap().data(), &[-1.5]);
        assert_eq!(g.bias, vec![1.0]);
    }

    #[test]
    fn deconv_single_tap_scatter() {
        let x = Tensor4::full(Shape4::new(1, 1, 1, 1), 1.0);
        let w = Tensor4::full(Shape4::new(1, 1, 2, 2), 1.0);
        let spec = ConvSpec {
            kernel_h: 2,
            kernel_w: 2,
            stride: 2,
            pad: 0,
            dilation: 1,
            in_channels: 1,
            out_channels: 1,
        };
        let y = deconv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 2, 2));
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn deconv_kernel4_stride2_doubles() {
        let x = Tensor4::<f64>::zeros(Shape4::new(1, 1, 8, 8));
        let w = Tensor4::<f64>::zeros(Shape4::new(1, 1, 4, 4));
        let spec = ConvSpec {
            kernel_h: 4,
            kernel_w: 4,
            stride: 2,
            pad: 1,
            dilation: 1,
            in_channels: 1,
            out_channels: 1,
        };
        let y = deconv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 16, 16));
    }

    #[test]
    fn deconv_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ConvSpec {
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            pad: 1,
            dilation: 1,
            in_channels: 2,
            out_channels: 3,
        };
        let x = random(Shape4::new(1, 2, 5, 5), &mut rng);
        let w = random(spec.weight_shape(), &mut rng);
        let cx = conv2d(&x, &w, None, &spec).unwrap();
        let y = random(cx.shape(), &mut rng);
        let dy = deconv2d(&y, &w, None, &spec.transposed()).unwrap();
        assert_eq!(dy.shape(), x.shape());
        let lhs = cx.dot(&y).unwrap();
        let rhs = x.dot(&dy).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = ConvSpec::same(3, 2, 2, 2);
        let x = random(Shape4::new(1, 2, 6, 6), &mut rng);
        let z = random(Shape4::new(1, 2, 6, 6), &mut rng);
        let w = random(spec.weight_shape(), &mut rng);
        let (a, b) = (0.7, -1.3);
        let mut mix = x.map(|v| a * v);
        mix.add_assign(&z.map(|v| b * v)).unwrap();
        let lhs = conv2d(&mix, &w, None, &spec).unwrap();
        let mut rhs = conv2d(&x, &w, None, &spec).unwrap().map(|v| a * v);
        rhs.add_assign(&conv2d(&z, &w, None, &spec).unwrap().map(|v| b * v))
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-10);
    }
}
