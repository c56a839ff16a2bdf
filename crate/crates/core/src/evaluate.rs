//! Runs a trained network over a dataset and scores the predictions.

use crate::bins::{argmax, Binning, InferenceRule};
use crate::data::{network_input, Sample};
use crate::error::{Error, Result};
use crate::loss::IGNORE;
use crate::metrics::{compute_metrics, pixel_accuracy, ConfusionMatrix, MetricSet};
use crate::net::{predict_scores, NetParams};

const EVAL_BATCH: usize = 16;

/// Per-pixel predictions at the network's half resolution, concatenated
/// over all samples in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub num_bins: usize,
    pub soft: Vec<f64>,
    pub hard: Vec<f64>,
    pub pred_labels: Vec<u32>,
    pub gt: Vec<f64>,
    /// Ground-truth labels; [`IGNORE`] where invalid.
    pub gt_labels: Vec<u32>,
    pub valid: Vec<bool>,
}

pub fn predict_dataset(
    params: &NetParams<f32>,
    samples: &[Sample],
    binning: &Binning,
) -> Result<Predictions> {
    let k = binning.num_bins();
    if params.arch().num_bins != k {
        return Err(Error::invalid(format!(
            "network has {} bins, binning has {k}",
            params.arch().num_bins
        )));
    }
    let mut out = Predictions {
        num_bins: k,
        soft: Vec::new(),
        hard: Vec::new(),
        pred_labels: Vec::new(),
        gt: Vec::new(),
        gt_labels: Vec::new(),
        valid: Vec::new(),
    };
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let probs = predict_scores(params, &network_input::<f32>(&refs)?)?;
        let shape = probs.tensor().shape();
        let plane = shape.plane();
        let data = probs.tensor().data();
        let mut p = vec![0.0f32; k];
        for (n, s) in chunk.iter().enumerate() {
            for px in 0..plane {
                for (c, v) in p.iter_mut().enumerate() {
                    *v = data[(n * k + c) * plane + px];
                }
                out.soft.push(binning.soft_weighted_sum(&p)?);
                out.hard.push(binning.hard_max(&p)?);
                out.pred_labels.push(argmax(&p) as u32);
            }
            let (depth, valid) = s.half_res();
            if depth.len() != plane {
                return Err(Error::shape(
                    "predict_dataset",
                    format!("{} ground-truth pixels for a {plane}-pixel output", depth.len()),
                ));
            }
            for (&d, &v) in depth.iter().zip(&valid) {
                out.gt.push(d as f64);
                out.gt_labels
                    .push(if v { binning.quantize(d as f64)? as u32 } else { IGNORE });
            }
            out.valid.extend(valid);
        }
    }
    Ok(out)
}

impl Predictions {
    pub fn depths(&self, rule: InferenceRule) -> &[f64] {
        match rule {
            InferenceRule::Soft => &self.soft,
            InferenceRule::Hard => &self.hard,
        }
    }

    pub fn metrics(&self, rule: InferenceRule, cap: Option<f64>) -> Result<MetricSet> {
        compute_metrics(self.depths(rule), &self.gt, &self.valid, cap)
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        pixel_accuracy(&self.pred_labels, &self.gt_labels)
    }

    pub fn confusion(&self, merge: usize) -> Result<ConfusionMatrix> {
        ConfusionMatrix::from_labels(&self.pred_labels, &self.gt_labels, self.num_bins, merge)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SceneSpec};
    use crate::net::{init_params, NetArch};

    #[test]
    fn predictions_line_up_with_ground_truth() {
        let spec = SceneSpec {
            height: 16,
            width: 16,
            ..SceneSpec::default()
        };
        let data = generate_dataset(&spec, 0, 20).unwrap();
        let b = Binning::new(1.0, 10.0, 6).unwrap();
        let p = init_params::<f32>(0, NetArch::reduced(6)).unwrap();
        let pr = predict_dataset(&p, &data, &b).unwrap();
        assert_eq!(pr.soft.len(), 20 * 64);
        assert_eq!(pr.gt_labels.len(), pr.pred_labels.len());
        let centres: Vec<f64> = (0..6).map(|i| b.bin_center(i)).collect();
        assert!(pr.hard.iter().all(|v| centres.contains(v)));
        for (h, &l) in pr.hard.iter().zip(&pr.pred_labels) {
            assert_eq!(*h, centres[l as usize]);
        }
        let m = pr.metrics(InferenceRule::Soft, None).unwrap();
        assert_eq!(m.count, pr.valid.iter().filter(|&&v| v).count());
        assert_eq!(pr.confusion(1).unwrap().total() as usize, m.count);
        assert!(predict_dataset(&p, &data, &Binning::new(1.0, 10.0, 5).unwrap()).is_err());
    }
}
