//! Procedural RGB-D scenes with a haze colour cue and a size cue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Colour that distant surfaces fade into. Its channels differ, so with a
/// grey albedo the per-pixel colour pins down the transmission `exp(-beta d)`.
pub const HAZE_COLOR: [f64; 3] = [0.3, 0.65, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub d_near: f64,
    pub d_far: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Haze coefficient `beta` in `exp(-beta d)`.
    pub haze: f64,
    /// Probability that a pixel is marked invalid (depth 0).
    pub invalid_fraction: f64,
    /// Relative amplitude of the sinusoidal surface texture.
    pub texture_amplitude: f64,
    /// Per-channel relative deviation of an albedo from pure grey.
    pub chroma_jitter: f64,
    /// Standard deviation of the per-pixel log-depth noise of the measured
    /// depth, as from a depth sensor; the image is rendered noise-free.
    pub depth_noise: f64,
    /// Bow `g` of the background profile: the log-depth fraction at height
    /// `t` is `t + a t (1 - t)` with `a ~ U(-g, g)`; below 1 it stays monotone.
    pub ramp_curvature: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            height: 64,
            width: 64,
            d_near: 1.0,
            d_far: 10.0,
            min_objects: 1,
            max_objects: 5,
            haze: 0.3,
            invalid_fraction: 0.02,
            texture_amplitude: 0.3,
            chroma_jitter: 0.05,
            ramp_curvature: 0.0,
            depth_noise: 0.06,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.height == 0 || self.width == 0 {
            return bad(format!("scene size {}x{} is empty", self.height, self.width));
        }
        if !(self.d_near > 0.0) || !(self.d_far > self.d_near) || !self.d_far.is_finite() {
            return bad(format!(
                "scene depth range needs 0 < d_near < d_far, got [{}, {}]",
                self.d_near, self.d_far
            ));
        }
        if self.min_objects > self.max_objects {
            return bad(format!(
                "min_objects {} exceeds max_objects {}",
                self.min_objects, self.max_objects
            ));
        }
        if !(self.haze >= 0.0) || !self.haze.is_finite() {
            return bad(format!("haze must be finite and >= 0, got {}", self.haze));
        }
        if !(0.0..1.0).contains(&self.invalid_fraction) {
            return bad(format!(
                "invalid_fraction must lie in [0, 1), got {}",
                self.invalid_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.texture_amplitude) {
            return bad(format!(
                "texture_amplitude must lie in [0, 1), got {}",
                self.texture_amplitude
            ));
        }
        if !(self.depth_noise >= 0.0) || !self.depth_noise.is_finite() {
            return bad(format!(
                "depth_noise must be finite and >= 0, got {}",
                self.depth_noise
            ));
        }
        if !(0.0..1.0).contains(&self.ramp_curvature) {
            return bad(format!(
                "ramp_curvature must lie in [0, 1), got {}",
                self.ramp_curvature
            ));
        }
        if !(0.0..1.0).contains(&self.chroma_jitter) {
            return bad(format!(
                "chroma_jitter must lie in [0, 1), got {}",
                self.chroma_jitter
            ));
        }
        Ok(())
    }

    /// The spec of sample `index`: same scene parameters, seed `seed + index`.
    pub fn for_index(&self, index: u64) -> SceneSpec {
        SceneSpec {
            seed: self.seed.wrapping_add(index),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone)]
struct Surface {
    albedo: [f64; 3],
    /// Texture wave vector in radians per pixel, and phase.
    wave: (f64, f64, f64),
}

impl Surface {
    fn random(rng: &mut ChaCha8Rng, depth: f64, focal: f64, jitter: f64) -> Self {
        let grey = rng.gen_range(0.03..0.3);
        let mut albedo = [0.0; 3];
        for a in &mut albedo {
            *a = grey * (1.0 + jitter * rng.gen_range(-1.0..1.0));
        }
        // texture period fixed in world units, so it shrinks with distance
        let period_world = rng.gen_range(0.15..0.4);
        let k = std::f64::consts::TAU * depth / (focal * period_world);
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        Surface {
            albedo,
            wave: (k * angle.cos(), k * angle.sin(), phase),
        }
    }

    fn albedo_at(&self, x: f64, y: f64, amplitude: f64) -> [f64; 3] {
        let (kx, ky, phase) = self.wave;
        let m = 1.0 + amplitude * (kx * x + ky * y + phase).sin();
        self.albedo.map(|a| (a * m).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone)]
struct Object {
    shape: Shape,
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
    depth: f64,
    surface: Surface,
}

impl Object {
    fn covers(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.half_w;
        let dy = (y - self.cy) / self.half_h;
        match self.shape {
            Shape::Rect => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            Shape::Ellipse => dx * dx + dy * dy <= 1.0,
        }
    }
}

fn ramp_bow(rng: &mut ChaCha8Rng, curvature: f64) -> f64 {
    curvature * rng.gen_range(-1.0..1.0)
}

/// Fraction of the log-depth span reached at height `t` in `[0, 1]`.
fn ramp_profile(t: f64, bow: f64) -> f64 {
    t + bow * t * (1.0 - t)
}

/// Folds `v` back into `[lo, hi]` by mirroring at the ends.
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (v - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo.ln()..=hi.ln()).exp()
}

/// Renders one scene. The background's depth grows from `d_near` on the
/// bottom row to `d_far` on the top row, linearly in log-depth unless
/// `ramp_curvature` bows the profile. Objects are flat cards at a single
/// depth whose pixel size is `focal * size / depth`, composited with a
/// z-buffer so the nearest surface wins. Colour is
/// `albedo e^{-beta d} + haze (1 - e^{-beta d})`, quantized to 8 bits. The
/// measured depth then receives log-normal noise of spread `depth_noise`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Sample> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let focal = 0.9 * w as f64;
    let span = spec.d_far / spec.d_near;

    let bow = ramp_bow(&mut rng, spec.ramp_curvature);
    let ground = Surface::random(&mut rng, (spec.d_near * spec.d_far).sqrt(), focal, spec.chroma_jitter);

    let count = rng.gen_range(spec.min_objects..=spec.max_objects);
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let depth = log_uniform(&mut rng, spec.d_near, spec.d_far);
        let size = log_uniform(&mut rng, 0.4, 1.2);
        let aspect: f64 = rng.gen_range(0.6..1.6);
        let half = 0.5 * focal * size / depth;
        objects.push(Object {
            shape: if rng.gen_bool(0.5) {
                Shape::Rect
            } else {
                Shape::Ellipse
            },
            cx: rng.gen_range(0.0..w as f64),
            cy: rng.gen_range(0.0..h as f64),
            half_w: half * aspect.sqrt(),
            half_h: half / aspect.sqrt(),
            depth,
            surface: Surface::random(&mut rng, depth, focal, spec.chroma_jitter),
        });
    }

    let mut rgb = Tensor4::zeros(Shape4::new(1, 3, h, w));
    let mut depth = Tensor4::zeros(Shape4::new(1, 1, h, w));
    let mut valid = vec![true; h * w];
    let ramp = span.ln();
    for y in 0..h {
        let t = if h > 1 {
            (h - 1 - y) as f64 / (h - 1) as f64
        } else {
            0.0
        };
        let bg_depth = spec.d_near * (ramp * ramp_profile(t, bow)).exp();
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut d = bg_depth;
            let mut surf = &ground;
            for o in &objects {
                if o.depth < d && o.covers(px, py) {
                    d = o.depth;
                    surf = &o.surface;
                }
            }
            let albedo = surf.albedo_at(px, py, spec.texture_amplitude);
            let trans = (-spec.haze * d).exp();
            for c in 0..3 {
                let v = albedo[c] * trans + HAZE_COLOR[c] * (1.0 - trans);
                rgb.set(0, c, y, x, quantize_u8(v));
            }
            depth.set(0, 0, y, x, d.clamp(spec.d_near, spec.d_far) as f32);
        }
    }
    if spec.depth_noise > 0.0 {
        let (lo, hi) = (spec.d_near.ln(), spec.d_far.ln());
        for (d, &v) in depth.data_mut().iter_mut().zip(&valid) {
            if v {
                let z: f64 = rng.sample(StandardNormal);
                let noisy = reflect((*d as f64).ln() + spec.depth_noise * z, lo, hi).exp();
                *d = noisy.clamp(spec.d_near, spec.d_far) as f32;
            }
        }
    }
    if spec.invalid_fraction > 0.0 {
        for (i, v) in valid.iter_mut().enumerate() {
            if rng.gen_bool(spec.invalid_fraction) {
                *v = false;
                depth.data_mut()[i] = 0.0;
            }
        }
    }
    Sample::new(rgb, depth, valid)
}

/// Rounds to the nearest multiple of 1/255, the value an 8-bit file holds.
pub fn quantize_u8(v: f64) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8 as f32 / 255.0
}

/// Samples `start..start + count` of the family described by `spec`.
pub fn generate_dataset(spec: &SceneSpec, start: u64, count: usize) -> Result<Vec<Sample>> {
    use rayon::prelude::*;
    spec.validate()?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_scene(&spec.for_index(start + i)))
        .collect()
}
