//! Log-space depth discretization and label-to-depth inference.
//!
//! Depths in `[d_min, d_max]` are split into `K` bins of equal width `q` in
//! log space, with bin `i` centred on `w_i = ln(d_min) + q*i`, so bins 0 and
//! `K-1` sit exactly on the range endpoints.

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Tolerance on the sum of an incoming probability vector.
pub const PROB_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Binning {
    d_min: f64,
    d_max: f64,
    q: f64,
    weights: Vec<f64>,
}

impl Binning {
    pub fn new(d_min: f64, d_max: f64, bins: usize) -> Result<Self> {
        if !(d_min.is_finite() && d_max.is_finite()) || d_min <= 0.0 || d_max <= d_min {
            return Err(Error::invalid(format!(
                "binning needs 0 < d_min < d_max, got d_min={d_min}, d_max={d_max}"
            )));
        }
        if bins < 2 {
            return Err(Error::invalid(format!("binning needs K >= 2, got {bins}")));
        }
        let lo = d_min.ln();
        let q = (d_max.ln() - lo) / (bins - 1) as f64;
        let weights = (0..bins).map(|i| lo + q * i as f64).collect();
        Ok(Binning {
            d_min,
            d_max,
            q,
            weights,
        })
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn num_bins(&self) -> usize {
        self.weights.len()
    }

    /// Log-space bin width.
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Log-depth bin centres `w`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Depth at the centre of bin `i`.
    pub fn bin_center(&self, i: usize) -> f64 {
        self.clamp_depth(self.weights[i].exp())
    }

    /// Label of depth `d`: `round((ln d - ln d_min) / q)`, rounding halves
    /// away from zero and clamping out-of-range depths to the end bins.
    pub fn quantize(&self, d: f64) -> Result<usize> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::invalid(format!("cannot quantize depth {d}")));
        }
        let raw = ((d.ln() - self.d_min.ln()) / self.q).round();
        let top = (self.num_bins() - 1) as f64;
        Ok(raw.clamp(0.0, top) as usize)
    }

    /// `exp(w . p)` over the renormalized probability vector.
    pub fn soft_weighted_sum<T: Real>(&self, p: &[T]) -> Result<f64> {
        let total = self.check_probs(p)?;
        let mut acc = 0.0;
        for (w, &pi) in self.weights.iter().zip(p) {
            acc += w * pi.as_f64();
        }
        Ok(self.clamp_depth((acc / total).exp()))
    }

    /// Centre depth of the most probable bin; ties go to the smaller index.
    pub fn hard_max<T: Real>(&self, p: &[T]) -> Result<f64> {
        self.check_probs(p)?;
        Ok(self.bin_center(argmax(p)))
    }

    fn check_probs<T: Real>(&self, p: &[T]) -> Result<f64> {
        if p.len() != self.num_bins() {
            return Err(Error::invalid(format!(
                "probability vector has {} entries, binning has {}",
                p.len(),
                self.num_bins()
            )));
        }
        let mut total = 0.0;
        for (i, &v) in p.iter().enumerate() {
            let v = v.as_f64();
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("probability {v} at bin {i}")));
            }
            total += v;
        }
        if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, outside 1 +/- {PROB_SUM_TOLERANCE}"
            )));
        }
        Ok(total)
    }

    fn clamp_depth(&self, d: f64) -> f64 {
        d.clamp(self.d_min, self.d_max)
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax<T: Real>(p: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// How a per-pixel score distribution becomes a depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InferenceRule {
    Soft,
    Hard,
}

impl InferenceRule {
    pub fn apply<T: Real>(self, binning: &Binning, p: &[T]) -> Result<f64> {
        match self {
            InferenceRule::Soft => binning.soft_weighted_sum(p),
            InferenceRule::Hard => binning.hard_max(p),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InferenceRule::Soft => "soft",
            InferenceRule::Hard => "hard",
        }
    }
}

impl std::str::FromStr for InferenceRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(InferenceRule::Soft),
            "hard" => Ok(InferenceRule::Hard),
            other => Err(Error::invalid(format!(
                "unknown inference rule `{other}` (expected soft or hard)"
            ))),
        }
    }
}
