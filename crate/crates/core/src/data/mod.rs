//! Synthetic RGB-D samples: generation, augmentation, hole filling and IO.

pub mod augment;
pub mod fill;
pub mod io;
pub mod scene;

pub use augment::{augment_sample, augment_with, expand_offline, AugmentParams};
pub use fill::fill_invalid;
pub use io::{read_dataset, write_dataset, Dataset};
pub use scene::{generate_dataset, generate_scene, SceneSpec};

use crate::bins::Binning;
use crate::error::{Error, Result};
use crate::loss::{LabelMap, IGNORE};
use crate::tensor::{Real, Shape4, Tensor4};

/// One RGB image with its depth map and validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(1, 3, h, w)` in `[0, 1]`.
    pub rgb: Tensor4<f32>,
    /// `(1, 1, h, w)` metres; 0 where invalid.
    pub depth: Tensor4<f32>,
    /// Row-major `h * w` validity flags.
    pub valid: Vec<bool>,
}

impl Sample {
    pub fn new(rgb: Tensor4<f32>, depth: Tensor4<f32>, valid: Vec<bool>) -> Result<Self> {
        let (r, d) = (rgb.shape(), depth.shape());
        if r.n != 1 || r.c != 3 || d != Shape4::new(1, 1, r.h, r.w) || valid.len() != r.h * r.w {
            return Err(Error::shape(
                "Sample::new",
                format!(
                    "rgb {r}, depth {d}, mask of {} for a {}x{} image",
                    valid.len(),
                    r.h,
                    r.w
                ),
            ));
        }
        for (i, (&v, &z)) in valid.iter().zip(depth.data()).enumerate() {
            if v && !(z > 0.0 && z.is_finite()) {
                return Err(Error::invalid(format!(
                    "valid pixel {i} has depth {z}; valid depths must be positive"
                )));
            }
        }
        Ok(Sample { rgb, depth, valid })
    }

    pub fn height(&self) -> usize {
        self.rgb.shape().h
    }

    pub fn width(&self) -> usize {
        self.rgb.shape().w
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Depth and validity at the network's half resolution, sampled at
    /// `(2y, 2x)`.
    pub fn half_res(&self) -> (Vec<f32>, Vec<bool>) {
        let (h, w) = (self.height(), self.width());
        let (ho, wo) = (h / 2, w / 2);
        let mut depth = Vec::with_capacity(ho * wo);
        let mut valid = Vec::with_capacity(ho * wo);
        for y in 0..ho {
            for x in 0..wo {
                let i = 2 * y * w + 2 * x;
                depth.push(self.depth.data()[i]);
                valid.push(self.valid[i]);
            }
        }
        (depth, valid)
    }

    /// Half-resolution labels; invalid pixels carry [`IGNORE`].
    pub fn labels(&self, binning: &Binning) -> Result<Vec<u32>> {
        let (depth, valid) = self.half_res();
        depth
            .iter()
            .zip(&valid)
            .map(|(&d, &v)| {
                if v {
                    binning.quantize(d as f64).map(|l| l as u32)
                } else {
                    Ok(IGNORE)
                }
            })
            .collect()
    }
}

/// Stacks images into a network input, mapping `[0, 1]` to `[-1, 1]`.
pub fn network_input<T: Real>(samples: &[&Sample]) -> Result<Tensor4<T>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("empty batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    for s in samples {
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::shape(
                "network_input",
                format!("batch mixes {h}x{w} and {}x{}", s.height(), s.width()),
            ));
        }
        data.extend(s.rgb.data().iter().map(|&v| T::of(2.0 * v as f64 - 1.0)));
    }
    Tensor4::from_vec(Shape4::new(samples.len(), 3, h, w), data)
}

/// Maps a `(n, 3, h, w)` image tensor in `[0, 1]` to the network's `[-1, 1]`.
pub fn image_input<T: Real>(rgb: &Tensor4<f32>) -> Result<Tensor4<T>> {
    let s = rgb.shape();
    if s.c != 3 {
        return Err(Error::shape("image_input", format!("image has {} channels, expected 3", s.c)));
    }
    Tensor4::from_vec(s, rgb.data().iter().map(|&v| T::of(2.0 * v as f64 - 1.0)).collect())
}

/// Half-resolution label map of a batch.
pub fn label_map(samples: &[&Sample], binning: &Binning) -> Result<LabelMap> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("empty batch"))?;
    let (h, w) = (first.height() / 2, first.width() / 2);
    let mut labels = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        labels.extend(s.labels(binning)?);
    }
    LabelMap::new(samples.len(), h, w, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Sample {
        let rgb = Tensor4::from_fn(Shape4::new(1, 3, 4, 4), |_, c, y, x| {
            (c * 16 + y * 4 + x) as f32 / 64.0
        });
        let depth = Tensor4::from_fn(Shape4::new(1, 1, 4, 4), |_, _, y, x| 1.0 + (y * 4 + x) as f32);
        let mut valid = vec![true; 16];
        valid[2] = false;
        let mut depth = depth;
        depth.data_mut()[2] = 0.0;
        Sample::new(rgb, depth, valid).unwrap()
    }

    #[test]
    fn half_res_samples_even_pixels() {
        let (d, v) = ramp().half_res();
        assert_eq!(d, vec![1.0, 0.0, 9.0, 11.0]);
        assert_eq!(v, vec![true, false, true, true]);
    }

    #[test]
    fn labels_ignore_invalid_pixels() {
        let b = Binning::new(1.0, 16.0, 5).unwrap();
        let l = ramp().labels(&b).unwrap();
        assert_eq!(l[1], IGNORE);
        assert_eq!(l[0], 0);
        assert_eq!(l[3], b.quantize(11.0).unwrap() as u32);
    }

    #[test]
    fn input_is_centred() {
        let s = ramp();
        let x = network_input::<f64>(&[&s, &s]).unwrap();
        assert_eq!(x.shape(), Shape4::new(2, 3, 4, 4));
        assert_eq!(x.data()[0], -1.0);
        assert_eq!(x.data()[48 + 47], 2.0 * (47.0f32 / 64.0) as f64 - 1.0);
        assert_eq!(image_input::<f64>(&s.rgb).unwrap(), network_input::<f64>(&[&s]).unwrap());
        assert!(image_input::<f64>(&s.depth).is_err());
    }

    #[test]
    fn rejects_inconsistent_samples() {
        let s = ramp();
        assert!(Sample::new(s.rgb.clone(), s.depth.clone(), vec![true; 15]).is_err());
        // pixel 2 has depth 0 and cannot be valid
        assert!(Sample::new(s.rgb.clone(), s.depth.clone(), vec![true; 16]).is_err());
    }
}
