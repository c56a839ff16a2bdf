//! The fixed synthetic benchmark: data split, variant training and the
//! bin-count sweep.

use crate::bins::{Binning, InferenceRule};
use crate::data::{generate_dataset, Sample, SceneSpec};
use crate::error::Result;
use crate::evaluate::{predict_dataset, Predictions};
use crate::metrics::{MetricSet, SweepRow};
use crate::net::{NetArch, NetParams};
use crate::trainer::{train, TrainConfig, TrainLog};

/// Test scenes use seeds offset by this much from the training scenes.
pub const TEST_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub scene: SceneSpec,
    pub train_count: usize,
    pub test_count: usize,
    pub bins: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            scene: SceneSpec::default(),
            train_count: 512,
            test_count: 128,
            bins: 40,
            d_min: 1.0,
            d_max: 10.0,
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn binning(&self, bins: usize) -> Result<Binning> {
        Binning::new(self.d_min, self.d_max, bins)
    }

    /// Default training config for `bins` bins and the given architecture.
    pub fn train_config(&self, bins: usize, arch: NetArch) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::new(self.binning(bins)?);
        cfg.arch = arch;
        cfg.seed = self.seed;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn make_split(cfg: &BenchmarkConfig) -> Result<Split> {
    Ok(Split {
        train: generate_dataset(&cfg.scene, 0, cfg.train_count)?,
        test: generate_dataset(&cfg.scene, TEST_SEED_OFFSET, cfg.test_count)?,
    })
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub params: NetParams<f32>,
    pub log: TrainLog,
    pub predictions: Predictions,
    pub soft: MetricSet,
    pub hard: MetricSet,
    pub pixel_accuracy: f64,
}

/// Trains `arch` on the training split and evaluates it on the test split.
pub fn run_variant(split: &Split, cfg: &TrainConfig) -> Result<VariantResult> {
    let (params, log) = train(&split.train, cfg)?;
    let predictions = predict_dataset(&params, &split.test, &cfg.binning)?;
    Ok(VariantResult {
        soft: predictions.metrics(InferenceRule::Soft, None)?,
        hard: predictions.metrics(InferenceRule::Hard, None)?,
        pixel_accuracy: predictions.pixel_accuracy()?,
        params,
        log,
        predictions,
    })
}

/// One model per bin count with the budget, seed and architecture flags of
/// `template`; reports test pixel accuracy and soft-rule Rel.
pub fn bins_sweep(split: &Split, template: &TrainConfig, bins: &[usize]) -> Result<Vec<SweepRow>> {
    bins.iter()
        .map(|&k| {
            let mut cfg = template.clone();
            cfg.binning = Binning::new(template.binning.d_min(), template.binning.d_max(), k)?;
            cfg.arch.num_bins = k;
            let r = run_variant(split, &cfg)?;
            Ok(SweepRow {
                bins: k,
                pixel_accuracy: r.pixel_accuracy,
                rel: r.soft.rel,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let cfg = BenchmarkConfig {
            scene: SceneSpec {
                height: 8,
                width: 8,
                ..SceneSpec::default()
            },
            train_count: 4,
            test_count: 3,
            ..BenchmarkConfig::default()
        };
        let a = make_split(&cfg).unwrap();
        let b = make_split(&cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!((a.train.len(), a.test.len()), (4, 3));
        assert!(a.test.iter().all(|t| !a.train.contains(t)));
    }

    #[test]
    fn single_entry_sweep_gives_one_row() {
        let cfg = BenchmarkConfig {
            scene: SceneSpec {
                height: 16,
                width: 16,
                ..SceneSpec::default()
            },
            train_count: 2,
            test_count: 2,
            ..BenchmarkConfig::default()
        };
        let split = make_split(&cfg).unwrap();
        // a tiny budget keeps this a plumbing check
        let mut c = cfg.train_config(5, NetArch::reduced(5)).unwrap();
        c.total_iters = 8;
        c.fixed_iters = 8;
        let rows = bins_sweep(&split, &c, &[7]).unwrap();
        assert_eq!(rows[0].bins, 7);
        assert_eq!(rows.len(), 1);
        assert!((0.0..=1.0).contains(&rows[0].pixel_accuracy));
    }
}
