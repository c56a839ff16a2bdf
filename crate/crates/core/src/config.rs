//! Flat `key = value` run configuration shared by every CLI command.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must appear
//! in [`SCHEMA`]; unknown keys, repeated keys and unparsable values are
//! errors that name the line and the key.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::bins::{Binning, InferenceRule};
use crate::data::SceneSpec;
use crate::error::{Error, Result};
use crate::net::NetArch;
use crate::trainer::{AugmentMode, TrainConfig};

/// Where the key list is published, quoted in diagnostics.
pub const SCHEMA_HINT: &str = "run `softdepth schema` for the list of valid keys";

/// Offline expansion applied by `gen-data`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataAugment {
    None,
    /// Four independent augmentation draws per generated scene.
    Offline,
}

impl DataAugment {
    pub fn name(self) -> &'static str {
        match self {
            DataAugment::None => "none",
            DataAugment::Offline => "offline",
        }
    }
}

impl FromStr for DataAugment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DataAugment::None),
            "offline" => Ok(DataAugment::Offline),
            other => Err(Error::invalid(format!(
                "unknown data augmentation `{other}` (expected none or offline)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub train_count: usize,
    pub test_count: usize,
    pub data_augment: DataAugment,
    pub bins: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub dilation: bool,
    pub concat: bool,
    /// One block per stage and 8 channels; for quick runs.
    pub reduced: bool,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub accum_steps: usize,
    pub total_iters: usize,
    pub fixed_iters: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub train_seed: u64,
    pub augment: AugmentMode,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub rule: InferenceRule,
    /// Evaluation depth cap; `None` evaluates every valid pixel.
    pub cap: Option<f64>,
    pub merge: usize,
    pub sweep_bins: Vec<usize>,
}

/// Every accepted key with a one-line description, in file order.
pub const SCHEMA: &[(&str, &str)] = &[
    ("data_seed", "seed of the first generated scene; scene i uses data_seed + i"),
    ("height", "image height in pixels (multiple of 4)"),
    ("width", "image width in pixels (multiple of 4)"),
    ("d_near", "nearest scene depth"),
    ("d_far", "farthest scene depth"),
    ("min_objects", "fewest objects per scene"),
    ("max_objects", "most objects per scene"),
    ("haze", "haze coefficient beta in exp(-beta d)"),
    ("invalid_fraction", "probability that a pixel has no depth"),
    ("texture_amplitude", "relative amplitude of surface texture"),
    ("chroma_jitter", "per-channel relative deviation of albedo from grey"),
    ("depth_noise", "standard deviation of the per-pixel log-depth noise of the measured depth"),
    ("ramp_curvature", "bow g of the background log-depth profile t + a t (1 - t), a ~ U(-g, g)"),
    ("train_count", "scenes generated for the train split"),
    ("test_count", "scenes generated for the test split"),
    ("data_augment", "none | offline (four augmented copies per scene)"),
    ("bins", "number of depth bins K"),
    ("d_min", "lower end of the binned depth range"),
    ("d_max", "upper end of the binned depth range"),
    ("no_dilation", "true drops stage dilation and adds a pool after stage 2"),
    ("no_concat", "true feeds only the last stage to the head"),
    ("reduced", "true uses one block per stage and 8 channels"),
    ("base_lr", "learning rate before decay"),
    ("momentum", "SGD momentum"),
    ("weight_decay", "L2 coefficient (batch-norm scale and shift exempt)"),
    ("accum_steps", "passes averaged into one update"),
    ("total_iters", "total forward/backward passes"),
    ("fixed_iters", "passes at base_lr before the first decay"),
    ("decay_every", "passes between decays"),
    ("decay_factor", "learning-rate multiplier per decay"),
    ("train_seed", "seed for initialization, shuffling and augmentation"),
    ("augment", "off | online (fresh augmentation per drawn sample)"),
    ("log_every", "passes per training-log row"),
    ("checkpoint_every", "passes between checkpoints, 0 disables"),
    ("rule", "soft | hard inference"),
    ("cap", "evaluate only pixels with true depth <= cap; none disables"),
    ("merge", "adjacent bins merged per confusion-matrix class"),
    ("sweep_bins", "comma-separated bin counts for sweep-bins"),
];

impl Default for RunConfig {
    fn default() -> Self {
        let scene = SceneSpec::default();
        let binning = Binning::new(1.0, 10.0, 40).expect("default binning is valid");
        let t = TrainConfig::new(binning.clone());
        RunConfig {
            scene,
            train_count: 512,
            test_count: 128,
            data_augment: DataAugment::None,
            bins: binning.num_bins(),
            d_min: binning.d_min(),
            d_max: binning.d_max(),
            dilation: t.arch.dilation,
            concat: t.arch.concat,
            reduced: false,
            base_lr: t.base_lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            accum_steps: t.accum_steps,
            total_iters: t.total_iters,
            fixed_iters: t.fixed_iters,
            decay_every: t.decay_every,
            decay_factor: t.decay_factor,
            train_seed: t.seed,
            augment: t.augment,
            log_every: t.log_every,
            checkpoint_every: t.checkpoint_every,
            rule: InferenceRule::Soft,
            cap: None,
            merge: 1,
            sweep_bins: vec![10, 20, 40, 80],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("`{key}` cannot take the value `{value}`")))
}

fn parse_with<T>(key: &str, value: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    f(value).map_err(|e| Error::invalid(format!("`{key}`: {e}")))
}

impl RunConfig {
    /// Assigns one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "data_seed" => self.scene.seed = parse(key, v)?,
            "height" => self.scene.height = parse(key, v)?,
            "width" => self.scene.width = parse(key, v)?,
            "d_near" => self.scene.d_near = parse(key, v)?,
            "d_far" => self.scene.d_far = parse(key, v)?,
            "min_objects" => self.scene.min_objects = parse(key, v)?,
            "max_objects" => self.scene.max_objects = parse(key, v)?,
            "haze" => self.scene.haze = parse(key, v)?,
            "invalid_fraction" => self.scene.invalid_fraction = parse(key, v)?,
            "texture_amplitude" => self.scene.texture_amplitude = parse(key, v)?,
            "chroma_jitter" => self.scene.chroma_jitter = parse(key, v)?,
            "depth_noise" => self.scene.depth_noise = parse(key, v)?,
            "ramp_curvature" => self.scene.ramp_curvature = parse(key, v)?,
            "train_count" => self.train_count = parse(key, v)?,
            "test_count" => self.test_count = parse(key, v)?,
            "data_augment" => self.data_augment = parse_with(key, v, DataAugment::from_str)?,
            "bins" => self.bins = parse(key, v)?,
            "d_min" => self.d_min = parse(key, v)?,
            "d_max" => self.d_max = parse(key, v)?,
            "no_dilation" => self.dilation = !parse::<bool>(key, v)?,
            "no_concat" => self.concat = !parse::<bool>(key, v)?,
            "reduced" => self.reduced = parse(key, v)?,
            "base_lr" => self.base_lr = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "accum_steps" => self.accum_steps = parse(key, v)?,
            "total_iters" => self.total_iters = parse(key, v)?,
            "fixed_iters" => self.fixed_iters = parse(key, v)?,
            "decay_every" => self.decay_every = parse(key, v)?,
            "decay_factor" => self.decay_factor = parse(key, v)?,
            "train_seed" => self.train_seed = parse(key, v)?,
            "augment" => self.augment = parse_with(key, v, AugmentMode::from_str)?,
            "log_every" => self.log_every = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "rule" => self.rule = parse_with(key, v, InferenceRule::from_str)?,
            "cap" => {
                self.cap = if v == "none" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "merge" => self.merge = parse(key, v)?,
            "sweep_bins" => {
                self.sweep_bins = v
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            other => {
                return Err(Error::invalid(format!("unknown key `{other}`; {SCHEMA_HINT}")));
            }
        }
        Ok(())
    }

    /// Text form of one key's current value; `None` for unknown keys.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "data_seed" => self.scene.seed.to_string(),
            "height" => self.scene.height.to_string(),
            "width" => self.scene.width.to_string(),
            "d_near" => self.scene.d_near.to_string(),
            "d_far" => self.scene.d_far.to_string(),
            "min_objects" => self.scene.min_objects.to_string(),
            "max_objects" => self.scene.max_objects.to_string(),
            "haze" => self.scene.haze.to_string(),
            "invalid_fraction" => self.scene.invalid_fraction.to_string(),
            "texture_amplitude" => self.scene.texture_amplitude.to_string(),
            "chroma_jitter" => self.scene.chroma_jitter.to_string(),
            "depth_noise" => self.scene.depth_noise.to_string(),
            "ramp_curvature" => self.scene.ramp_curvature.to_string(),
            "train_count" => self.train_count.to_string(),
            "test_count" => self.test_count.to_string(),
            "data_augment" => self.data_augment.name().to_string(),
            "bins" => self.bins.to_string(),
            "d_min" => self.d_min.to_string(),
            "d_max" => self.d_max.to_string(),
            "no_dilation" => (!self.dilation).to_string(),
            "no_concat" => (!self.concat).to_string(),
            "reduced" => self.reduced.to_string(),
            "base_lr" => self.base_lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "accum_steps" => self.accum_steps.to_string(),
            "total_iters" => self.total_iters.to_string(),
            "fixed_iters" => self.fixed_iters.to_string(),
            "decay_every" => self.decay_every.to_string(),
            "decay_factor" => self.decay_factor.to_string(),
            "train_seed" => self.train_seed.to_string(),
            "augment" => self.augment.name().to_string(),
            "log_every" => self.log_every.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "rule" => self.rule.name().to_string(),
            "cap" => self.cap.map_or("none".to_string(), |c| c.to_string()),
            "merge" => self.merge.to_string(),
            "sweep_bins" => self
                .sweep_bins
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(","),
            _ => return None,
        };
        Some(s)
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| Error::Config {
                line,
                detail: format!("expected `key = value`, got `{body}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(first) = seen.insert(key.to_string(), line) {
                return Err(Error::Config {
                    line,
                    detail: format!("key `{key}` already set on line {first}"),
                });
            }
            cfg.set(key, value).map_err(|e| Error::Config {
                line,
                detail: match e {
                    Error::InvalidArgument(d) => d,
                    other => other.to_string(),
                },
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            Error::Config { line, detail } => Error::format(path, format!("line {line}: {detail}")),
            other => other,
        })
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Every key with its current value, one `key = value` line each,
    /// preceded by its description as a comment.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, help) in SCHEMA {
            let value = self.get(key).expect("schema keys are all gettable");
            let _ = writeln!(s, "# {help}\n{key} = {value}");
        }
        s
    }

    pub fn binning(&self) -> Result<Binning> {
        Binning::new(self.d_min, self.d_max, self.bins)
    }

    pub fn arch(&self) -> NetArch {
        let base = if self.reduced {
            NetArch::reduced(self.bins)
        } else {
            NetArch::new(self.bins)
        };
        base.with_dilation(self.dilation).with_concat(self.concat)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut t = TrainConfig::new(self.binning()?);
        t.arch = self.arch();
        t.base_lr = self.base_lr;
        t.momentum = self.momentum;
        t.weight_decay = self.weight_decay;
        t.accum_steps = self.accum_steps;
        t.total_iters = self.total_iters;
        t.fixed_iters = self.fixed_iters;
        t.decay_every = self.decay_every;
        t.decay_factor = self.decay_factor;
        t.seed = self.train_seed;
        t.augment = self.augment;
        t.log_every = self.log_every;
        t.checkpoint_every = self.checkpoint_every;
        t.validate()?;
        Ok(t)
    }
}
