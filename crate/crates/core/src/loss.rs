//! Per-pixel softmax and multinomial logistic loss over depth labels.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape4, Tensor4};

/// Label value marking a pixel that contributes nothing to loss or metrics.
pub const IGNORE: u32 = u32::MAX;

/// Per-pixel integer labels with shape (batch, height, width).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != n * h * w {
            return Err(Error::shape(
                "LabelMap::new",
                format!("{} labels for {n}x{h}x{w}", labels.len()),
            ));
        }
        Ok(LabelMap { n, h, w, labels })
    }

    pub fn valid_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE).count()
    }

    /// Fails if any non-sentinel label is `>= k`.
    pub fn check_range(&self, k: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l != IGNORE && l as usize >= k) {
            Some(l) => Err(Error::invalid(format!("label {l} out of range for {k} bins"))),
            None => Ok(()),
        }
    }
}

/// Per-pixel probability distribution over `K` bins (channel axis).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap<T>(pub Tensor4<T>);

impl<T: Real> ScoreMap<T> {
    pub fn tensor(&self) -> &Tensor4<T> {
        &self.0
    }

    pub fn num_bins(&self) -> usize {
        self.0.shape().c
    }

    /// The probability vector at one pixel.
    pub fn pixel(&self, n: usize, y: usize, x: usize) -> Vec<T> {
        let s = self.0.shape();
        (0..s.c).map(|c| self.0.at(n, c, y, x)).collect()
    }
}

/// Channel-wise softmax with max subtraction.
pub fn softmax<T: Real>(scores: &Tensor4<T>) -> Result<ScoreMap<T>> {
    let s = scores.shape();
    if s.c < 2 {
        return Err(Error::shape("softmax", format!("needs >= 2 channels, got {}", s.c)));
    }
    if let Some(i) = scores.data().iter().position(|v| v.is_nan()) {
        return Err(Error::invalid(format!("NaN score at flat index {i}")));
    }
    let mut out = Tensor4::zeros(s);
    let plane = s.plane();
    let src = scores.data();
    let dst = out.data_mut();
    let mut buf = vec![T::zero(); s.c];
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let mut m = T::neg_infinity();
            for c in 0..s.c {
                m = m.max(src[base + c * plane + p]);
            }
            let mut total = T::zero();
            for (c, b) in buf.iter_mut().enumerate() {
                *b = (src[base + c * plane + p] - m).exp();
                total += *b;
            }
            for (c, b) in buf.iter().enumerate() {
                dst[base + c * plane + p] = *b / total;
            }
        }
    }
    out.ensure_finite("softmax")?;
    Ok(ScoreMap(out))
}

fn check_labels(op: &'static str, s: Shape4, labels: &LabelMap) -> Result<usize> {
    if labels.n != s.n || labels.h != s.h || labels.w != s.w {
        return Err(Error::shape(
            op,
            format!(
                "labels {}x{}x{} vs scores {s}",
                labels.n, labels.h, labels.w
            ),
        ));
    }
    labels.check_range(s.c)?;
    let m = labels.valid_count();
    if m == 0 {
        return Err(Error::invalid(format!("{op}: every pixel is ignored")));
    }
    Ok(m)
}

/// Mean negative log-likelihood over non-ignored pixels, and its gradient
/// with respect to the pre-softmax scores: `(p - onehot) / M`.
pub fn nll_loss<T: Real>(probs: &ScoreMap<T>, labels: &LabelMap) -> Result<(f64, Tensor4<T>)> {
    let s = probs.0.shape();
    let m = check_labels("nll_loss", s, labels)?;
    let plane = s.plane();
    let inv_m = T::of(1.0 / m as f64);
    let p = probs.0.data();
    let mut grad = Tensor4::zeros(s);
    let g = grad.data_mut();
    let mut loss = 0.0;
    for n in 0..s.n {
        let base = n * s.c * plane;
        for px in 0..plane {
            let label = labels.labels[n * plane + px];
            if label == IGNORE {
                continue;
            }
            for c in 0..s.c {
                let i = base + c * plane + px;
                g[i] = p[i] * inv_m;
            }
            let t = base + label as usize * plane + px;
            g[t] -= inv_m;
            // ln of a probability that underflowed to zero is clamped
            loss -= p[t].as_f64().max(f64::MIN_POSITIVE).ln();
        }
    }
    Ok((loss / m as f64, grad))
}

/// Softmax and loss in one pass using log-sum-exp; returns the same
/// gradient as [`nll_loss`] without materializing tiny probabilities first.
pub fn softmax_nll<T: Real>(scores: &Tensor4<T>, labels: &LabelMap) -> Result<(f64, Tensor4<T>)> {
    let s = scores.shape();
    if s.c < 2 {
        return Err(Error::shape("softmax_nll", format!("needs >= 2 channels, got {}", s.c)));
    }
    let m = check_labels("softmax_nll", s, labels)?;
    if let Some(i) = scores.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "softmax_nll",
            index: i,
        });
    }
    let plane = s.plane();
    let inv_m = 1.0 / m as f64;
    let src = scores.data();
    let mut grad = Tensor4::zeros(s);
    let g = grad.data_mut();
    let mut loss = 0.0;
    let mut buf = vec![0.0f64; s.c];
    for n in 0..s.n {
        let base = n * s.c * plane;
        for px in 0..plane {
            let label = labels.labels[n * plane + px];
            if label == IGNORE {
                continue;
            }
            let mut mx = f64::NEG_INFINITY;
            for c in 0..s.c {
                mx = mx.max(src[base + c * plane + px].as_f64());
            }
            let mut total = 0.0;
            for (c, b) in buf.iter_mut().enumerate() {
                *b = (src[base + c * plane + px].as_f64() - mx).exp();
                total += *b;
            }
            let lse = mx + total.ln();
            loss += lse - src[base + label as usize * plane + px].as_f64();
            for (c, b) in buf.iter().enumerate() {
                let mut v = b / total;
                if c == label as usize {
                    v -= 1.0;
                }
                g[base + c * plane + px] = T::of(v * inv_m);
            }
        }
    }
    Ok((loss * inv_m, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_scores_give_uniform() {
        let x = Tensor4::full(Shape4::new(1, 5, 2, 2), 0.3f64);
        let p = softmax(&x).unwrap();
        assert!(p.tensor().data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn large_margin_is_nearly_one_hot() {
        // top entry is 1 / (1 + (K-1) e^-20), above 1 - 1e-8 for K <= 5
        let mut x = Tensor4::zeros(Shape4::new(1, 4, 1, 1));
        x.set(0, 0, 0, 0, 20.0f64);
        let p = softmax(&x).unwrap();
        assert!(p.tensor().at(0, 0, 0, 0) > 1.0 - 1e-8);
        let expect = 1.0 / (1.0 + 3.0 * (-20.0f64).exp());
        assert!((p.tensor().at(0, 0, 0, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor4::from_fn(Shape4::new(2, 4, 3, 3), |_, _, _, _| rng.gen_range(-3.0..3.0));
        let a = softmax(&x).unwrap();
        let b = softmax(&x.map(|v| v + 17.5)).unwrap();
        assert!(a.tensor().max_abs_diff(b.tensor()).unwrap() < 1e-14);
    }

    #[test]
    fn nan_scores_rejected() {
        let mut x = Tensor4::zeros(Shape4::new(1, 2, 1, 1));
        x.set(0, 1, 0, 0, f64::NAN);
        assert!(softmax(&x).is_err());
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let mut p = Tensor4::zeros(Shape4::new(1, 3, 1, 2));
        p.set(0, 2, 0, 0, 1.0f64);
        p.set(0, 0, 0, 1, 1.0);
        let labels = LabelMap::new(1, 1, 2, vec![2, 0]).unwrap();
        let (loss, g) = nll_loss(&ScoreMap(p), &labels).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_class_coin_flip_costs_ln2() {
        let x = Tensor4::<f64>::zeros(Shape4::new(1, 2, 1, 1));
        let labels = LabelMap::new(1, 1, 1, vec![1]).unwrap();
        let (loss, _) = nll_loss(&softmax(&x).unwrap(), &labels).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        let (fused, _) = softmax_nll(&x, &labels).unwrap();
        assert!((fused - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn all_ignored_or_out_of_range_is_an_error() {
        let x = Tensor4::<f64>::zeros(Shape4::new(1, 3, 1, 2));
        let ignored = LabelMap::new(1, 1, 2, vec![IGNORE, IGNORE]).unwrap();
        assert!(softmax_nll(&x, &ignored).is_err());
        let bad = LabelMap::new(1, 1, 2, vec![0, 3]).unwrap();
        assert!(softmax_nll(&x, &bad).is_err());
    }

    fn random_case(seed: u64) -> (Tensor4<f64>, LabelMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor4::from_fn(Shape4::new(1, 5, 4, 4), |_, _, _, _| rng.gen_range(-2.0..2.0));
        let mut labels: Vec<u32> = (0..16).map(|_| rng.gen_range(0..5)).collect();
        for i in [1, 6, 11] {
            labels[i] = IGNORE;
        }
        (x, LabelMap::new(1, 4, 4, labels).unwrap())
    }

    #[test]
    fn fused_and_separate_paths_agree() {
        let (x, labels) = random_case(8);
        let (l1, g1) = nll_loss(&softmax(&x).unwrap(), &labels).unwrap();
        let (l2, g2) = softmax_nll(&x, &labels).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        assert!(g1.max_abs_diff(&g2).unwrap() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, labels) = random_case(21);
        let (_, g) = softmax_nll(&x, &labels).unwrap();
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let lp = softmax_nll(&xp, &labels).unwrap().0;
            let lm = softmax_nll(&xm, &labels).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let a = g.data()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-6 || (a - fd).abs() < 1e-10, "i={i} analytic={a} fd={fd}");
        }
    }

    #[test]
    fn gradient_sums_to_zero_and_ignored_pixels_are_inert() {
        let (x, labels) = random_case(33);
        let (loss, g) = softmax_nll(&x, &labels).unwrap();
        assert!(loss >= 0.0);
        for px in 0..16 {
            let col: f64 = (0..5).map(|c| g.data()[c * 16 + px]).sum();
            assert!(col.abs() < 1e-15);
            if labels.labels[px] == IGNORE {
                assert!((0..5).all(|c| g.data()[c * 16 + px] == 0.0));
            }
        }
        // scrambling scores at ignored pixels changes nothing
        let mut y = x.clone();
        for px in [1, 6, 11] {
            for c in 0..5 {
                y.data_mut()[c * 16 + px] = 9.0 * c as f64;
            }
        }
        let (loss2, g2) = softmax_nll(&y, &labels).unwrap();
        assert_eq!(loss, loss2);
        assert_eq!(g, g2);
    }
}
