//! ReLU, 2x2 max pooling, channel concatenation and residual addition.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape4, Tensor4};

pub fn relu<T: Real>(input: &Tensor4<T>) -> Result<Tensor4<T>> {
    let out = input.map(|v| if v > T::zero() { v } else { T::zero() });
    out.ensure_finite("relu")?;
    Ok(out)
}

/// Gradient of [`relu`]. `output` is the forward result; the mask is
/// `output > 0`, so the gradient at exactly zero is zero.
pub fn relu_backward<T: Real>(output: &Tensor4<T>, grad_output: &Tensor4<T>) -> Result<Tensor4<T>> {
    grad_output.expect_shape("relu_backward", output.shape())?;
    let data = output
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(output.shape(), data)
}

/// Indices into the flattened input, one per pooled output element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Shape4,
    pub argmax: Vec<u32>,
}

/// 2x2 max pooling with stride 2. Ties go to the first element in
/// row-major window order.
pub fn maxpool2<T: Real>(input: &Tensor4<T>) -> Result<(Tensor4<T>, PoolIndices)> {
    let s = input.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::shape(
            "maxpool2",
            format!("spatial extent {}x{} is not even", s.h, s.w),
        ));
    }
    let os = Shape4::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(os.len());
    let mut argmax = Vec::with_capacity(os.len());
    let data = input.data();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.plane();
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut best = base + 2 * oy * s.w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * s.w + 2 * ox + dx;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best as u32);
                }
            }
        }
    }
    let out = Tensor4::from_vec(os, out)?;
    out.ensure_finite("maxpool2")?;
    Ok((
        out,
        PoolIndices {
            input_shape: s,
            argmax,
        },
    ))
}

pub fn maxpool2_backward<T: Real>(idx: &PoolIndices, grad_output: &Tensor4<T>) -> Result<Tensor4<T>> {
    if grad_output.len() != idx.argmax.len() {
        return Err(Error::shape(
            "maxpool2_backward",
            format!(
                "{} gradients for {} pooled outputs",
                grad_output.len(),
                idx.argmax.len()
            ),
        ));
    }
    let mut gi = Tensor4::zeros(idx.input_shape);
    let dst = gi.data_mut();
    for (&i, &g) in idx.argmax.iter().zip(grad_output.data()) {
        dst[i as usize] += g;
    }
    Ok(gi)
}

/// Stacks tensors along the channel axis in argument order.
pub fn concat_channels<T: Real>(parts: &[&Tensor4<T>]) -> Result<Tensor4<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?
        .shape();
    let mut channels = 0;
    for p in parts {
        let s = p.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(Error::shape(
                "concat_channels",
                format!("{s} does not share batch/spatial dims with {first}"),
            ));
        }
        channels += s.c;
    }
    let shape = Shape4::new(first.n, channels, first.h, first.w);
    let mut data = Vec::with_capacity(shape.len());
    for n in 0..first.n {
        for p in parts {
            let per = p.shape().c * first.plane();
            data.extend_from_slice(&p.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor4::from_vec(shape, data)
}

/// Inverse of [`concat_channels`]: splits a gradient back into pieces with
/// the given channel counts.
pub fn split_channels<T: Real>(grad: &Tensor4<T>, channels: &[usize]) -> Result<Vec<Tensor4<T>>> {
    let s = grad.shape();
    if channels.iter().sum::<usize>() != s.c {
        return Err(Error::shape(
            "split_channels",
            format!("channel split {channels:?} does not sum to {}", s.c),
        ));
    }
    let plane = s.plane();
    let mut out: Vec<Vec<T>> = channels
        .iter()
        .map(|&c| Vec::with_capacity(s.n * c * plane))
        .collect();
    for n in 0..s.n {
        let mut offset = n * s.c * plane;
        for (piece, &c) in out.iter_mut().zip(channels) {
            piece.extend_from_slice(&grad.data()[offset..offset + c * plane]);
            offset += c * plane;
        }
    }
    out.into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor4::from_vec(Shape4::new(s.n, c, s.h, s.w), d))
        .collect()
}

pub fn add<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let mut out = a.clone();
    out.add_assign(b)?;
    out.ensure_finite("add")?;
    Ok(out)
}
