//! End-to-end acceptance checks. Each test writes one `[criterion N] PASS`
//! or `FAIL` line straight to stderr so it shows up even when the harness
//! captures output, then asserts.
//!
//! The training-based criteria share one synthetic split and one trained
//! model per configuration; the first test that needs a model trains it.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softdepth::bins::Binning;
use softdepth::experiments::{bins_sweep, make_split, run_variant, BenchmarkConfig, Split, VariantResult};
use softdepth::gradcheck;
use softdepth::layers::{conv2d, receptive_field, ConvSpec, FieldLayer};
use softdepth::metrics::{compute_metrics, SweepRow};
use softdepth::net::NetArch;
use softdepth::tensor::{Shape4, Tensor4};

fn report(criterion: u32, passed: bool, detail: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[criterion {criterion}] {status}: {detail}");
}

// ---------------------------------------------------------------- shared runs

const K: usize = 40;

fn bench() -> BenchmarkConfig {
    BenchmarkConfig::default()
}

fn split() -> &'static Split {
    static SPLIT: OnceLock<Split> = OnceLock::new();
    SPLIT.get_or_init(|| make_split(&bench()).expect("benchmark split"))
}

struct Timed {
    result: VariantResult,
    elapsed: Duration,
}

fn train_timed(arch: NetArch, bins: usize) -> Timed {
    let split = split();
    let cfg = bench().train_config(bins, arch).expect("train config");
    let start = Instant::now();
    let result = run_variant(split, &cfg).expect("training run");
    Timed {
        result,
        elapsed: start.elapsed(),
    }
}

fn full_model() -> &'static Timed {
    static FULL: OnceLock<Timed> = OnceLock::new();
    FULL.get_or_init(|| {
        // includes data generation so the timing covers the whole run
        let start = Instant::now();
        split();
        let mut t = train_timed(NetArch::new(K), K);
        t.elapsed = start.elapsed();
        t
    })
}

// ------------------------------------------------------------------ criteria

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let results = gradcheck::run_suite(0).expect("gradient suite");
    let elapsed = start.elapsed();
    let failures: Vec<_> = results.iter().filter(|r| !r.passed()).collect();
    let mut covered = Vec::new();
    for stride in [1, 2] {
        for dilation in [1, 2, 4] {
            let tag = format!("stride={stride} dilation={dilation} ");
            covered.push(results.iter().any(|r| r.name.contains(&tag)));
        }
    }
    let worst_layer = results
        .iter()
        .filter(|r| r.tolerance == gradcheck::LAYER_TOLERANCE)
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    let worst_e2e = results
        .iter()
        .filter(|r| r.tolerance == gradcheck::END_TO_END_TOLERANCE)
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    let passed = failures.is_empty()
        && results.len() >= 20
        && covered.iter().all(|&c| c)
        && elapsed < Duration::from_secs(120);
    report(
        1,
        passed,
        &format!(
            "{} checks, worst layer error {worst_layer:.2e}, worst end-to-end error {worst_e2e:.2e}, {:.1}s",
            results.len(),
            elapsed.as_secs_f64()
        ),
    );
    for f in &failures {
        eprintln!("failed: {} error {:.3e} > {:.0e}", f.name, f.max_rel_error, f.tolerance);
    }
    assert!(passed);
}

/// Naive reference: insert `dilation - 1` zeros between kernel taps, then run
/// a plain strided cross-correlation.
fn zero_inserted_oracle(x: &Tensor4<f64>, w: &Tensor4<f64>, stride: usize, pad: usize, dilation: usize) -> Tensor4<f64> {
    let xs = x.shape();
    let ws = w.shape();
    let ek = (ws.h - 1) * dilation + 1;
    let mut dilated = Tensor4::zeros(Shape4::new(ws.n, ws.c, ek, ek));
    for o in 0..ws.n {
        for c in 0..ws.c {
            for i in 0..ws.h {
                for j in 0..ws.w {
                    dilated.set(o, c, i * dilation, j * dilation, w.at(o, c, i, j));
                }
            }
        }
    }
    let ho = (xs.h + 2 * pad - ek) / stride + 1;
    let wo = (xs.w + 2 * pad - ek) / stride + 1;
    let mut y = Tensor4::zeros(Shape4::new(xs.n, ws.n, ho, wo));
    for n in 0..xs.n {
        for o in 0..ws.n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..xs.c {
                        for i in 0..ek {
                            for j in 0..ek {
                                let iy = (oy * stride + i) as isize - pad as isize;
                                let ix = (ox * stride + j) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                    acc += dilated.at(o, c, i, j) * x.at(n, c, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    y.set(n, o, oy, ox, acc);
                }
            }
        }
    }
    y
}

#[test]
fn criterion_2_dilated_conv_oracle_and_receptive_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for dilation in [1, 2, 4] {
        for stride in [1, 2] {
            let spec = ConvSpec {
                kernel_h: 3,
                kernel_w: 3,
                stride,
                pad: dilation,
                dilation,
                in_channels: 3,
                out_channels: 4,
            };
            let x = Tensor4::from_fn(Shape4::new(2, 3, 13, 11), |_, _, _, _| rng.gen_range(-1.0..1.0));
            let w = Tensor4::from_fn(spec.weight_shape(), |_, _, _, _| rng.gen_range(-1.0..1.0));
            let y = conv2d(&x, &w, None, &spec).expect("conv2d");
            let oracle = zero_inserted_oracle(&x, &w, stride, dilation, dilation);
            worst = worst.max(y.max_abs_diff(&oracle).expect("same shape"));
        }
    }
    let fields: Vec<usize> = (1..=3)
        .map(|depth| {
            let stack: Vec<FieldLayer> = [1, 2, 4][..depth].iter().map(|&d| FieldLayer::new(3, 1, d)).collect();
            receptive_field(&stack).0
        })
        .collect();
    let passed = worst <= 1e-12 && fields == [3, 7, 15];
    report(
        2,
        passed,
        &format!("max |conv - oracle| {worst:.2e}; receptive fields {fields:?}"),
    );
    assert!(passed);
}

#[test]
fn criterion_3_quantization_round_trip() {
    let b = Binning::new(1.0, 10.0, 200).expect("binning");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut one_hot = vec![0.0f64; 200];
    for _ in 0..10_000 {
        let d: f64 = rng.gen_range(1.0f64.ln()..=10.0f64.ln()).exp();
        let label = b.quantize(d).expect("in range");
        one_hot.fill(0.0);
        one_hot[label] = 1.0;
        let back = b.soft_weighted_sum(&one_hot).expect("weighted sum");
        worst = worst.max((back.ln() - d.ln()).abs());
    }
    let bound = b.q() / 2.0 + 1e-9;
    let passed = worst <= bound;
    report(3, passed, &format!("max |ln error| {worst:.6} vs bound {bound:.6}"));
    assert!(passed);
}

#[test]
fn criterion_4_soft_beats_hard() {
    let t = full_model();
    let r = &t.result;
    let binning = bench().binning(K).expect("binning");
    let centres: Vec<f64> = (0..K).map(|i| binning.bin_center(i)).collect();
    let all_centres = r.predictions.hard.iter().all(|h| centres.contains(h));
    let passed = r.soft.rel <= r.hard.rel && all_centres && t.elapsed < Duration::from_secs(15 * 60);
    report(
        4,
        passed,
        &format!(
            "soft Rel {:.4} vs hard Rel {:.4}; hard outputs are bin centres: {all_centres}; {:.0}s",
            r.soft.rel,
            r.hard.rel,
            t.elapsed.as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_5_ablation_ordering() {
    let full = &full_model().result;
    let no_concat = train_timed(NetArch::new(K).with_concat(false), K).result;
    let no_dilation = train_timed(NetArch::new(K).with_dilation(false), K).result;
    let passed = full.soft.rel <= no_concat.soft.rel && full.soft.rel <= no_dilation.soft.rel;
    report(
        5,
        passed,
        &format!(
            "Rel full {:.4}, no-concat {:.4}, no-dilation {:.4}",
            full.soft.rel, no_concat.soft.rel, no_dilation.soft.rel
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_6_bins_sensitivity() {
    let full = &full_model().result;
    let template = bench().train_config(K, NetArch::new(K)).expect("train config");
    let mut rows: Vec<SweepRow> = bins_sweep(split(), &template, &[10, 20, 80]).expect("sweep");
    rows.insert(
        2,
        SweepRow {
            bins: K,
            pixel_accuracy: full.pixel_accuracy,
            rel: full.soft.rel,
        },
    );
    let decreasing = rows.windows(2).all(|w| w[1].pixel_accuracy < w[0].pixel_accuracy);
    let rels: Vec<f64> = rows.iter().filter(|r| r.bins >= 20).map(|r| r.rel).collect();
    let min = rels.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = rels.iter().cloned().fold(0.0, f64::max);
    let passed = decreasing && max <= 1.35 * min;
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("K={} acc {:.3} Rel {:.4}", r.bins, r.pixel_accuracy, r.rel))
        .collect();
    report(
        6,
        passed,
        &format!("{}; Rel band {:.3}x", table.join(", "), max / min),
    );
    assert!(passed);
}

#[test]
fn criterion_7_confusion_structure() {
    let r = &full_model().result;
    let c = r.predictions.confusion(1).expect("confusion");
    let near = c.near_diagonal_fraction(2);
    let asym = c.asymmetry_ratio();
    let passed = near >= 0.60 && asym <= 0.35;
    report(
        7,
        passed,
        &format!("mass within 2 bins {near:.3} (need >= 0.60), asymmetry {asym:.3} (need <= 0.35)"),
    );
    assert!(passed);
}

#[test]
fn criterion_8_metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gt: Vec<f64> = (0..500).map(|_| rng.gen_range(0.5..20.0)).collect();
    let mask = vec![true; gt.len()];
    let exact = compute_metrics(&gt, &gt, &mask, None).expect("metrics");
    let identity = (exact.delta1, exact.delta2, exact.delta3) == (1.0, 1.0, 1.0)
        && (exact.rel, exact.log10, exact.rms) == (0.0, 0.0, 0.0);

    let scaled: Vec<f64> = gt.iter().map(|g| 1.3 * g).collect();
    let s = compute_metrics(&scaled, &gt, &mask, None).expect("metrics");
    let scale_ok = s.delta1 == 0.0 && s.delta2 == 1.0 && (s.rel - 0.3).abs() <= 1e-12;

    let mut symmetric = true;
    let mut capped = true;
    for _ in 0..50 {
        let n = rng.gen_range(1..200);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..20.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..20.0)).collect();
        let m: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.8)).collect();
        if !m.iter().any(|&v| v) {
            continue;
        }
        let ab = compute_metrics(&a, &b, &m, None).expect("metrics");
        let ba = compute_metrics(&b, &a, &m, None).expect("metrics");
        symmetric &= (ab.delta1, ab.delta2, ab.delta3) == (ba.delta1, ba.delta2, ba.delta3);

        let cap = rng.gen_range(2.0..20.0);
        let m_cap: Vec<bool> = m.iter().zip(&b).map(|(&v, &g)| v && g <= cap).collect();
        if m_cap.iter().any(|&v| v) {
            let via_cap = compute_metrics(&a, &b, &m, Some(cap)).expect("metrics");
            let via_mask = compute_metrics(&a, &b, &m_cap, None).expect("metrics");
            capped &= via_cap == via_mask;
        }
    }
    let passed = identity && scale_ok && symmetric && capped;
    report(
        8,
        passed,
        &format!(
            "identity {identity}; 1.3x gives delta1 {} delta2 {} Rel {:.15}; delta symmetry {symmetric}; cap equals mask {capped}",
            s.delta1, s.delta2, s.rel
        ),
    );
    assert!(passed);
}

// -------------------------------------------------------------- determinism

const PIPELINE_CONFIG: &str = "\
height = 32
width = 32
train_count = 12
test_count = 4
bins = 10
reduced = true
total_iters = 48
fixed_iters = 32
decay_every = 8
log_every = 8
checkpoint_every = 16
";

fn softdepth(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_softdepth"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "softdepth {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Runs gen-data, train and eval into `dir`.
fn pipeline(dir: &Path) {
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, PIPELINE_CONFIG).expect("write config");
    let p = |name: &str| dir.join(name).to_str().expect("utf-8 path").to_string();
    let cfg = p("run.cfg");
    softdepth(&["gen-data", "--config", &cfg, "--split", "train", "--out", &p("train")]);
    softdepth(&["gen-data", "--config", &cfg, "--split", "test", "--out", &p("test")]);
    softdepth(&["train", "--config", &cfg, "--data", &p("train"), "--out", &p("model.ckpt")]);
    softdepth(&["eval", "--config", &cfg, "--checkpoint", &p("model.ckpt"), "--data", &p("test"), "--out", &p("metrics.csv")]);
    softdepth(&["confusion", "--config", &cfg, "--checkpoint", &p("model.ckpt"), "--data", &p("test"), "--out", &p("confusion.csv")]);
}

/// Every file under `dir`, relative path to contents, in sorted order.
fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("read dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("under root").to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).expect("read file")));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_9_pipeline_determinism() {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    pipeline(a.path());
    pipeline(b.path());
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let names: Vec<&str> = ta.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = ta
        .iter()
        .zip(&tb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let expected = ["metrics.csv", "confusion.csv", "model.ckpt"];
    let complete = expected.iter().all(|e| names.contains(e)) && names.iter().any(|n| n.starts_with("train"));
    let passed = ta.len() == tb.len() && differing.is_empty() && complete;
    report(
        9,
        passed,
        &format!("{} files compared across two runs, {} differ {differing:?}", ta.len(), differing.len()),
    );
    assert!(passed);
}
