//! Training-time augmentation: colour scale, zoom with centre crop,
//! horizontal flip and small rotations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

pub const COLOR_RANGE: (f64, f64) = (0.9, 1.1);
pub const SCALE_RANGE: (f64, f64) = (1.3, 1.5);
pub const ROTATION_RANGE_DEG: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Per-channel colour multipliers.
    pub color: [f64; 3],
    /// Zoom factor; 1 leaves the image unchanged.
    pub scale: f64,
    pub flip: bool,
    pub rotation_deg: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        color: [1.0; 3],
        scale: 1.0,
        flip: false,
        rotation_deg: 0.0,
    };

    pub fn draw(rng: &mut impl Rng) -> Self {
        let mut color = [0.0; 3];
        for c in &mut color {
            *c = rng.gen_range(COLOR_RANGE.0..=COLOR_RANGE.1);
        }
        AugmentParams {
            color,
            scale: rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1),
            flip: rng.gen_bool(0.5),
            rotation_deg: rng.gen_range(-ROTATION_RANGE_DEG..=ROTATION_RANGE_DEG),
        }
    }
}

/// Applies, in order: colour scale (clamped to `[0, 1]`), zoom about the
/// centre with depth divided by the zoom, horizontal flip, rotation.
pub fn augment_with(s: &Sample, p: &AugmentParams) -> Result<Sample> {
    if !(p.scale > 0.0) || !p.scale.is_finite() || !p.rotation_deg.is_finite() {
        return Err(Error::invalid(format!("bad augmentation parameters {p:?}")));
    }
    let mut out = color_scale(s, p.color);
    if p.scale != 1.0 {
        out = zoom(&out, p.scale)?;
    }
    if p.flip {
        out = flip(&out)?;
    }
    if p.rotation_deg != 0.0 {
        out = rotate(&out, p.rotation_deg)?;
    }
    Ok(out)
}

/// Draws parameters from `rng` and applies them.
pub fn augment_sample(s: &Sample, rng: &mut impl Rng) -> Result<(Sample, AugmentParams)> {
    let p = AugmentParams::draw(rng);
    Ok((augment_with(s, &p)?, p))
}

/// Four independent augmentation draws per base sample, sample-major.
pub fn expand_offline(samples: &[Sample], seed: u64) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(samples.len() * 4);
    for (i, s) in samples.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        for _ in 0..4 {
            out.push(augment_sample(s, &mut rng)?.0);
        }
    }
    Ok(out)
}

fn color_scale(s: &Sample, color: [f64; 3]) -> Sample {
    let mut rgb = s.rgb.clone();
    for (c, &m) in color.iter().enumerate() {
        if m != 1.0 {
            for v in rgb.plane_mut(0, c) {
                *v = ((*v as f64) * m).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Sample {
        rgb,
        depth: s.depth.clone(),
        valid: s.valid.clone(),
    }
}

/// Resamples `s` through `src(x, y)`, the source position of each output
/// pixel centre. RGB is bilinear with edge clamping; depth and mask take
/// the nearest source pixel, and pixels whose nearest source falls outside
/// the image become invalid. Depths are multiplied by `depth_gain`.
fn resample(s: &Sample, depth_gain: f64, src: impl Fn(f64, f64) -> (f64, f64)) -> Result<Sample> {
    let (h, w) = (s.height(), s.width());
    let mut rgb = Tensor4::zeros(Shape4::new(1, 3, h, w));
    let mut depth = Tensor4::zeros(Shape4::new(1, 1, h, w));
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(x as f64, y as f64);
            for c in 0..3 {
                rgb.set(0, c, y, x, bilinear(s.rgb.plane(0, c), h, w, sx, sy));
            }
            let (nx, ny) = ((sx + 0.5).floor(), (sy + 0.5).floor());
            if nx >= 0.0 && ny >= 0.0 && (nx as usize) < w && (ny as usize) < h {
                let i = ny as usize * w + nx as usize;
                if s.valid[i] {
                    valid[y * w + x] = true;
                    depth.set(0, 0, y, x, (s.depth.data()[i] as f64 * depth_gain) as f32);
                }
            }
        }
    }
    Sample::new(rgb, depth, valid)
}

fn bilinear(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Zoom by `s` about the image centre, keeping the original size (the
/// centre `1/s` crop), with every depth divided by `s`.
pub fn zoom(s: &Sample, scale: f64) -> Result<Sample> {
    let (cx, cy) = (s.width() as f64 / 2.0, s.height() as f64 / 2.0);
    resample(s, 1.0 / scale, |x, y| {
        ((x + 0.5 - cx) / scale + cx - 0.5, (y + 0.5 - cy) / scale + cy - 0.5)
    })
}

/// Mirror left-right.
pub fn flip(s: &Sample) -> Result<Sample> {
    let (h, w) = (s.height(), s.width());
    let mut rgb = s.rgb.clone();
    let mut depth = s.depth.clone();
    let mut valid = s.valid.clone();
    for y in 0..h {
        for c in 0..3 {
            rgb.plane_mut(0, c)[y * w..(y + 1) * w].reverse();
        }
        depth.data_mut()[y * w..(y + 1) * w].reverse();
        valid[y * w..(y + 1) * w].reverse();
    }
    Sample::new(rgb, depth, valid)
}

/// Rotate by `deg` degrees about the image centre.
pub fn rotate(s: &Sample, deg: f64) -> Result<Sample> {
    let (cx, cy) = ((s.width() as f64 - 1.0) / 2.0, (s.height() as f64 - 1.0) / 2.0);
    let (sin, cos) = deg.to_radians().sin_cos();
    resample(s, 1.0, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + cos * dx + sin * dy, cy - sin * dx + cos * dy)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::{generate_scene, SceneSpec};

    fn scene(seed: u64) -> Sample {
        generate_scene(&SceneSpec {
            seed,
            height: 24,
            width: 24,
            ..SceneSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn identity_parameters_leave_sample_unchanged() {
        let s = scene(1);
        assert_eq!(augment_with(&s, &AugmentParams::IDENTITY).unwrap(), s);
        // explicit unit zoom and zero rotation also go through resampling
        assert_eq!(zoom(&s, 1.0).unwrap(), s);
        assert_eq!(rotate(&s, 0.0).unwrap(), s);
    }

    #[test]
    fn flip_is_an_involution() {
        let s = scene(2);
        let p = AugmentParams {
            flip: true,
            ..AugmentParams::IDENTITY
        };
        let once = augment_with(&s, &p).unwrap();
        assert_ne!(once, s);
        assert_eq!(augment_with(&once, &p).unwrap(), s);
    }

    #[test]
    fn zoom_crops_centre_and_divides_depth() {
        // 12x12 ramp: depth = 1 + x + 12 y, rgb channel 0 = x / 11
        let (h, w) = (12, 12);
        let rgb = Tensor4::from_fn(Shape4::new(1, 3, h, w), |_, c, _, x| {
            if c == 0 {
                x as f32 / 11.0
            } else {
                0.5
            }
        });
        let depth = Tensor4::from_fn(Shape4::new(1, 1, h, w), |_, _, y, x| (1 + x + 12 * y) as f32);
        let s = Sample::new(rgb, depth, vec![true; h * w]).unwrap();
        let z = zoom(&s, 1.5).unwrap();
        for y in 0..h {
            for x in 0..w {
                // direct oracle: output pixel centre maps into the middle
                // 8x8 (= 12 / 1.5) window of the source
                let sx = (x as f64 + 0.5 - 6.0) / 1.5 + 6.0 - 0.5;
                let sy = (y as f64 + 0.5 - 6.0) / 1.5 + 6.0 - 0.5;
                assert!(sx >= 1.5 && sx <= 9.5 && sy >= 1.5 && sy <= 9.5);
                let (nx, ny) = ((sx + 0.5).floor() as usize, (sy + 0.5).floor() as usize);
                let expect_d = (1 + nx + 12 * ny) as f64 / 1.5;
                assert!((z.depth.at(0, 0, y, x) as f64 - expect_d).abs() < 1e-5);
                let expect_r = sx / 11.0;
                assert!((z.rgb.at(0, 0, y, x) as f64 - expect_r).abs() < 1e-6);
            }
        }
        assert!(z.valid.iter().all(|&v| v));
    }

    #[test]
    fn rotation_invalidates_sourceless_corners() {
        let s = Sample::new(
            Tensor4::full(Shape4::new(1, 3, 32, 32), 0.5),
            Tensor4::full(Shape4::new(1, 1, 32, 32), 3.0),
            vec![true; 32 * 32],
        )
        .unwrap();
        let r = rotate(&s, 5.0).unwrap();
        assert!(!r.valid[0] || !r.valid[31] || !r.valid[31 * 32]);
        assert!(r.valid[16 * 32 + 16]);
        assert!(r.depth.data().iter().zip(&r.valid).all(|(&d, &v)| (d == 3.0) == v));
    }

    #[test]
    fn every_valid_output_pixel_has_a_valid_source() {
        // depth encodes the source pixel id, so each valid output depth
        // times the zoom must name a valid source pixel
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..10 {
            let base = scene(seed);
            let depth = Tensor4::from_fn(Shape4::new(1, 1, 24, 24), |_, _, y, x| {
                let i = y * 24 + x;
                if base.valid[i] {
                    (1 + i) as f32
                } else {
                    0.0
                }
            });
            let s = Sample::new(base.rgb.clone(), depth, base.valid.clone()).unwrap();
            let (a, p) = augment_sample(&s, &mut rng).unwrap();
            assert!((1.3..=1.5).contains(&p.scale));
            for (&d, &v) in a.depth.data().iter().zip(&a.valid) {
                assert_eq!(v, d > 0.0);
                if v {
                    let id = (d as f64 * p.scale).round() as usize;
                    assert!(((d as f64 * p.scale) - id as f64).abs() < 1e-3);
                    assert!(s.valid[id - 1], "output traces to invalid source {id}");
                }
            }
            assert!(a.rgb.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn offline_expansion_is_four_fold_and_deterministic() {
        let base = vec![scene(1), scene(2), scene(3)];
        let a = expand_offline(&base, 5).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a, expand_offline(&base, 5).unwrap());
        assert_ne!(a[0], a[1]);
    }
}
