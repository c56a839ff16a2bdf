//! Depth error metrics, pixel accuracy and confusion matrices.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::loss::IGNORE;

pub const DELTA_BASE: f64 = 1.25;
pub const METRICS_CSV_HEADER: &str = "delta1,delta2,delta3,rel,log10,rms,count";

/// Threshold accuracies and error means over the evaluated pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub rel: f64,
    pub log10: f64,
    pub rms: f64,
    pub count: usize,
}

impl MetricSet {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.delta1, self.delta2, self.delta3, self.rel, self.log10, self.rms, self.count
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{METRICS_CSV_HEADER}\n{}\n", self.csv_row())
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Metrics over pixels with `mask` set and, when `cap` is given, ground
/// truth at most `cap`.
pub fn compute_metrics(pred: &[f64], gt: &[f64], mask: &[bool], cap: Option<f64>) -> Result<MetricSet> {
    if pred.len() != gt.len() || gt.len() != mask.len() {
        return Err(Error::shape(
            "compute_metrics",
            format!(
                "pred {}, gt {}, mask {} pixels",
                pred.len(),
                gt.len(),
                mask.len()
            ),
        ));
    }
    let mut hits = [0usize; 3];
    let (mut rel, mut lg, mut sq) = (KahanSum::default(), KahanSum::default(), KahanSum::default());
    let mut count = 0usize;
    let thresholds = [DELTA_BASE, DELTA_BASE.powi(2), DELTA_BASE.powi(3)];
    for i in 0..pred.len() {
        if !mask[i] {
            continue;
        }
        let (p, g) = (pred[i], gt[i]);
        if cap.is_some_and(|c| g > c) {
            continue;
        }
        if !(p > 0.0 && g > 0.0 && p.is_finite() && g.is_finite()) {
            return Err(Error::invalid(format!(
                "pixel {i}: metrics need positive depths, got pred {p}, gt {g}"
            )));
        }
        let ratio = (p / g).max(g / p);
        for (h, &t) in hits.iter_mut().zip(&thresholds) {
            if ratio < t {
                *h += 1;
            }
        }
        rel.add((p - g).abs() / g);
        lg.add((p.log10() - g.log10()).abs());
        sq.add((p - g) * (p - g));
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("no evaluable pixels (mask and cap exclude all)"));
    }
    let n = count as f64;
    Ok(MetricSet {
        delta1: hits[0] as f64 / n,
        delta2: hits[1] as f64 / n,
        delta3: hits[2] as f64 / n,
        rel: rel.value() / n,
        log10: lg.value() / n,
        rms: (sq.value() / n).sqrt(),
        count,
    })
}

/// Fraction of pixels, ignoring [`IGNORE`] in the ground truth, whose labels
/// agree exactly.
pub fn pixel_accuracy(pred: &[u32], gt: &[u32]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape(
            "pixel_accuracy",
            format!("{} predicted vs {} true labels", pred.len(), gt.len()),
        ));
    }
    let (mut hit, mut n) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        if g == IGNORE {
            continue;
        }
        n += 1;
        hit += usize::from(p == g);
    }
    if n == 0 {
        return Err(Error::invalid("pixel accuracy over zero labelled pixels"));
    }
    Ok(hit as f64 / n as f64)
}

/// Row = true label, column = predicted label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    size: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(size: usize) -> Self {
        ConfusionMatrix {
            size,
            counts: vec![0; size * size],
        }
    }

    /// Counts every pair whose true label is not [`IGNORE`]. Labels below
    /// `k` are grouped `merge` at a time into `k / merge` classes.
    pub fn from_labels(pred: &[u32], gt: &[u32], k: usize, merge: usize) -> Result<Self> {
        let mut m = Self::new(merged_size(k, merge)?);
        m.accumulate(pred, gt, k, merge)?;
        Ok(m)
    }

    pub fn accumulate(&mut self, pred: &[u32], gt: &[u32], k: usize, merge: usize) -> Result<()> {
        if merged_size(k, merge)? != self.size {
            return Err(Error::invalid(format!(
                "{k} bins merged by {merge} do not fit a {0}x{0} matrix",
                self.size
            )));
        }
        if pred.len() != gt.len() {
            return Err(Error::shape(
                "confusion",
                format!("{} predicted vs {} true labels", pred.len(), gt.len()),
            ));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g == IGNORE {
                continue;
            }
            if p as usize >= k || g as usize >= k {
                return Err(Error::invalid(format!("label pair ({g}, {p}) outside {k} bins")));
            }
            let (r, c) = (g as usize / merge, p as usize / merge);
            self.counts[r * self.size + c] += 1;
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.size + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.size).map(|r| r.iter().sum()).collect()
    }

    /// Groups `factor` adjacent classes into one.
    pub fn merge(&self, factor: usize) -> Result<Self> {
        let size = merged_size(self.size, factor)?;
        let mut m = Self::new(size);
        for r in 0..self.size {
            for c in 0..self.size {
                m.counts[(r / factor) * size + c / factor] += self.get(r, c);
            }
        }
        Ok(m)
    }

    /// Share of the mass with `|row - col| <= band`.
    pub fn near_diagonal_fraction(&self, band: usize) -> f64 {
        let mut near = 0u64;
        for r in 0..self.size {
            for c in 0..self.size {
                if r.abs_diff(c) <= band {
                    near += self.get(r, c);
                }
            }
        }
        near as f64 / self.total().max(1) as f64
    }

    /// `||C - C^T||_1 / ||C||_1`.
    pub fn asymmetry_ratio(&self) -> f64 {
        let mut diff = 0u64;
        for r in 0..self.size {
            for c in 0..self.size {
                diff += self.get(r, c).abs_diff(self.get(c, r));
            }
        }
        diff as f64 / self.total().max(1) as f64
    }

    /// One CSV row of integer counts per true label, with a header row
    /// naming the predicted-label columns.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in 0..self.size {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for r in 0..self.size {
            let _ = write!(s, "{r}");
            for c in 0..self.size {
                let _ = write!(s, ",{}", self.get(r, c));
            }
            s.push('\n');
        }
        s
    }
}

fn merged_size(k: usize, merge: usize) -> Result<usize> {
    if merge == 0 || k == 0 || k % merge != 0 {
        return Err(Error::invalid(format!(
            "merge factor {merge} must be positive and divide the bin count {k}"
        )));
    }
    Ok(k / merge)
}

/// One row of a bin-count sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub bins: usize,
    pub pixel_accuracy: f64,
    pub rel: f64,
}

pub const SWEEP_CSV_HEADER: &str = "bins,pixel_accuracy,rel";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6}", r.bins, r.pixel_accuracy, r.rel);
    }
    s
}
