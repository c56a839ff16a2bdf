//! The `softdepth` command line: argument parsing and one function per
//! subcommand. Every command reads its settings from a [`RunConfig`] file,
//! optionally overridden by `--set key=value` and a few dedicated flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bins::InferenceRule;
use crate::config::{DataAugment, RunConfig, SCHEMA};
use crate::data::io::{read_ppm, write_pfm};
use crate::data::{expand_offline, generate_dataset, image_input, read_dataset, write_dataset, Sample};
use crate::error::{Error, Result};
use crate::evaluate::predict_dataset;
use crate::experiments::{bins_sweep, Split, TEST_SEED_OFFSET};
use crate::gradcheck;
use crate::metrics::sweep_csv;
use crate::net::{predict_scores, scores_to_depth, Checkpoint};
use crate::trainer::Trainer;

#[derive(Debug, Parser)]
#[command(
    name = "softdepth",
    version,
    about = "Monocular depth estimation as classification over log-spaced depth bins"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Run configuration file (key = value lines); defaults apply without it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set bins=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Soft,
    Hard,
}

impl From<RuleArg> for InferenceRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Soft => InferenceRule::Soft,
            RuleArg::Hard => InferenceRule::Hard,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print every configuration key with its default value.
    Schema,
    /// Generate a synthetic dataset split.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Train a network on a dataset directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Final checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV; defaults to the checkpoint path with `.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many passes and write the checkpoint there.
        #[arg(long)]
        stop_at: Option<usize>,
    },
    /// Predict a depth map for one PPM image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output depth map (PFM) at half the input resolution.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "soft")]
        rule: RuleArg,
        /// Output pixels whose score distributions are exported, as
        /// `y,x;y,x;...` in output coordinates.
        #[arg(long)]
        pixels: Option<String>,
        /// Score CSV path; defaults to the output path with `.scores.csv`.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Error metrics of a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the config's rule.
        #[arg(long, value_enum)]
        rule: Option<RuleArg>,
        /// Overrides the config's depth cap.
        #[arg(long)]
        cap: Option<f64>,
        /// CSV output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Confusion matrix of predicted against true bins.
    Confusion {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the config's merge factor.
        #[arg(long)]
        merge: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per bin count and report pixel accuracy and Rel.
    SweepBins {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite; fails on any mismatch.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// What a command produced: text for stdout and whether it succeeded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub stdout: String,
    pub success: bool,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Outcome { stdout, success: true }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Schema => Ok(Outcome::ok(cmd_schema())),
        Command::GenData { cfg, out, split } => cmd_gen_data(&cfg.load()?, &out, split),
        Command::Train {
            cfg,
            data,
            out,
            log,
            resume,
            stop_at,
        } => {
            let log = log.unwrap_or_else(|| with_suffix(&out, ".log.csv"));
            cmd_train(&cfg.load()?, &data, &out, &log, resume.as_deref(), stop_at)
        }
        Command::Infer {
            checkpoint,
            image,
            out,
            rule,
            pixels,
            scores,
        } => {
            let pixels = pixels.as_deref().map(parse_pixels).transpose()?;
            let scores = scores.unwrap_or_else(|| with_suffix(&out, ".scores.csv"));
            cmd_infer(&checkpoint, &image, rule.into(), &out, pixels.as_deref(), &scores)
        }
        Command::Eval {
            cfg,
            checkpoint,
            data,
            rule,
            cap,
            out,
        } => {
            let mut run = cfg.load()?;
            if let Some(r) = rule {
                run.rule = r.into();
            }
            if cap.is_some() {
                run.cap = cap;
            }
            emit(cmd_eval(&checkpoint, &data, run.rule, run.cap)?, out.as_deref())
        }
        Command::Confusion {
            cfg,
            checkpoint,
            data,
            merge,
            out,
        } => {
            let merge = merge.unwrap_or(cfg.load()?.merge);
            emit(cmd_confusion(&checkpoint, &data, merge)?, out.as_deref())
        }
        Command::SweepBins { cfg, train, test, out } => {
            emit(cmd_sweep_bins(&cfg.load()?, &train, &test)?, out.as_deref())
        }
        Command::GradCheck { seed, out } => {
            let (csv, passed) = cmd_grad_check(seed)?;
            let mut o = emit(csv, out.as_deref())?;
            o.success = passed;
            Ok(o)
        }
    }
}

/// `path` with `suffix` appended to its file name.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `text` to `out` when given, otherwise returns it for stdout.
fn emit(text: String, out: Option<&Path>) -> Result<Outcome> {
    match out {
        Some(p) => {
            write_text(p, &text)?;
            Ok(Outcome::ok(format!("wrote {}\n", p.display())))
        }
        None => Ok(Outcome::ok(text)),
    }
}

pub fn cmd_schema() -> String {
    RunConfig::default().to_text()
}

fn load_samples(dir: &Path) -> Result<Vec<Sample>> {
    Ok(read_dataset(dir)?.into_iter().map(|(_, s)| s).collect())
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path, split: SplitArg) -> Result<Outcome> {
    let (name, start, count) = match split {
        SplitArg::Train => ("train", 0, cfg.train_count),
        SplitArg::Test => ("test", TEST_SEED_OFFSET, cfg.test_count),
    };
    let base = generate_dataset(&cfg.scene, start, count)?;
    let named: Vec<(String, Sample)> = match cfg.data_augment {
        DataAugment::None => base
            .into_iter()
            .enumerate()
            .map(|(i, s)| (format!("{name}_{i:05}"), s))
            .collect(),
        DataAugment::Offline => {
            let seed = cfg.scene.seed.wrapping_add(start);
            expand_offline(&base, seed)?
                .into_iter()
                .enumerate()
                .map(|(i, s)| (format!("{name}_{:05}_a{}", i / 4, i % 4), s))
                .collect()
        }
    };
    write_dataset(out, &named)?;
    Ok(Outcome::ok(format!(
        "wrote {} samples to {}\n",
        named.len(),
        out.display()
    )))
}

pub fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    log: &Path,
    resume: Option<&Path>,
    stop_at: Option<usize>,
) -> Result<Outcome> {
    let samples = load_samples(data)?;
    let tcfg = cfg.train_config()?;
    let total = tcfg.total_iters;
    let mut trainer = match resume {
        Some(p) => Trainer::resume(&samples, tcfg, &Checkpoint::load(p)?)?,
        None => Trainer::new(&samples, tcfg)?,
    };
    let until = stop_at.unwrap_or(total);
    let start = trainer.iter();
    trainer.run_until(until, |ck| {
        let iter = ck.meta.get("iter").map(String::as_str).unwrap_or("?");
        ck.save(&with_suffix(out, &format!(".iter{iter}")))
    })?;
    trainer.checkpoint()?.save(out)?;
    write_text(log, &trainer.log().to_csv())?;
    write_text(&with_suffix(log, ".epochs.csv"), &trainer.log().epochs_csv())?;
    let last = trainer.log().entries.last().map(|e| e.loss);
    Ok(Outcome::ok(format!(
        "trained passes {start}..{} of {total}; last logged loss {}\nwrote {} and {}\n",
        trainer.iter(),
        last.map_or("n/a".to_string(), |l| format!("{l:.6}")),
        out.display(),
        log.display()
    )))
}

/// Parses `y,x;y,x;...`.
pub fn parse_pixels(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let bad = || Error::invalid(format!("pixel `{p}` is not `y,x`"));
            let (y, x) = p.split_once(',').ok_or_else(bad)?;
            Ok((
                y.trim().parse().map_err(|_| bad())?,
                x.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

pub fn cmd_infer(
    checkpoint: &Path,
    image: &Path,
    rule: InferenceRule,
    out: &Path,
    pixels: Option<&[(usize, usize)]>,
    scores_path: &Path,
) -> Result<Outcome> {
    let ck = Checkpoint::load(checkpoint)?;
    let rgb = read_ppm(image)?;
    let probs = predict_scores(&ck.params, &image_input::<f32>(&rgb)?)?;
    let depth = scores_to_depth(&probs, &ck.binning, rule)?;
    let s = depth.shape();
    write_pfm(out, depth.data(), s.h, s.w)?;
    let mut msg = format!("wrote {}x{} {} depth map to {}\n", s.h, s.w, rule.name(), out.display());
    if let Some(pixels) = pixels {
        let mut csv = String::from("y,x,bin,w,probability\n");
        let k = ck.binning.num_bins();
        let t = probs.tensor();
        for &(y, x) in pixels {
            if y >= s.h || x >= s.w {
                return Err(Error::invalid(format!(
                    "pixel ({y}, {x}) outside the {}x{} output",
                    s.h, s.w
                )));
            }
            for b in 0..k {
                csv.push_str(&format!(
                    "{y},{x},{b},{},{}\n",
                    ck.binning.weights()[b],
                    t.at(0, b, y, x)
                ));
            }
        }
        write_text(scores_path, &csv)?;
        msg.push_str(&format!("wrote scores of {} pixels to {}\n", pixels.len(), scores_path.display()));
    }
    Ok(Outcome::ok(msg))
}

pub fn cmd_eval(checkpoint: &Path, data: &Path, rule: InferenceRule, cap: Option<f64>) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let samples = load_samples(data)?;
    let pred = predict_dataset(&ck.params, &samples, &ck.binning)?;
    Ok(pred.metrics(rule, cap)?.to_csv())
}

pub fn cmd_confusion(checkpoint: &Path, data: &Path, merge: usize) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let samples = load_samples(data)?;
    let pred = predict_dataset(&ck.params, &samples, &ck.binning)?;
    Ok(pred.confusion(merge)?.to_csv())
}

pub fn cmd_sweep_bins(cfg: &RunConfig, train: &Path, test: &Path) -> Result<String> {
    let split = Split {
        train: load_samples(train)?,
        test: load_samples(test)?,
    };
    let rows = bins_sweep(&split, &cfg.train_config()?, &cfg.sweep_bins)?;
    Ok(sweep_csv(&rows))
}

/// The gradient report CSV and whether every check passed.
pub fn cmd_grad_check(seed: u64) -> Result<(String, bool)> {
    let results = gradcheck::run_suite(seed)?;
    let passed = results.iter().all(|r| r.passed());
    Ok((gradcheck::report_csv(&results), passed))
}

/// Keys listed by `softdepth schema`, for documentation tests.
pub fn schema_keys() -> impl Iterator<Item = &'static str> {
    SCHEMA.iter().map(|(k, _)| *k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_lists_parse() {
        assert_eq!(parse_pixels("1,2; 3,4").unwrap(), vec![(1, 2), (3, 4)]);
        assert!(parse_pixels("1;2").is_err());
        assert!(parse_pixels("a,b").is_err());
    }

    #[test]
    fn suffix_appends_to_file_name() {
        assert_eq!(with_suffix(Path::new("a/b.ckpt"), ".log.csv"), PathBuf::from("a/b.ckpt.log.csv"));
    }

    #[test]
    fn schema_lists_every_key_once() {
        let text = cmd_schema();
        for k in schema_keys() {
            assert_eq!(text.lines().filter(|l| l.starts_with(&format!("{k} = "))).count(), 1, "{k}");
        }
    }

    #[test]
    fn cli_parses_subcommands() {
        let c = Cli::try_parse_from([
            "softdepth", "train", "--data", "d", "--out", "m.ckpt", "--set", "bins=20", "--set", "reduced=true",
        ])
        .unwrap();
        match c.command {
            Command::Train { cfg, .. } => {
                let r = cfg.load().unwrap();
                assert_eq!(r.bins, 20);
                assert!(r.reduced);
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["softdepth", "frobnicate"]).is_err());
    }
}
