//! Acceptance criteria, one test each. Every test writes a single
//! `[PASS]`/`[FAIL]` line with its measurements to stderr. The tests run one
//! at a time so the timed training run has the machine to itself.

mod common;

use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use common::*;
use confies_core::eval::{
    decoupling_score, icc, icc_protocol, interpolation_eval, training_view_quality, FieldRenderer, RAMP_POINTS,
};
use confies_core::facs::{
    balanced_sample, block_imbalance, build_blocks, normalize_au, preprocess, uniform_sample, PreprocessConfig,
    Quantizer,
};
use confies_core::field::{FieldConfig, QueryMode, SceneField};
use confies_core::numerics::DenseArray;
use confies_core::render::{composite_color, composite_mask, render_image, RaySample, RenderOptions};
use confies_core::synthetic::{generate_dataset, BlobSceneSpec};
use confies_core::train::{Holdout, TrainConfig, Trainer, TrainingSet};
use confies_core::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(name: &str, passed: bool, detail: String) {
    let tag = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[{tag}] {name}: {detail}");
    assert!(passed, "{name}: {detail}");
}

fn log(line: String) {
    let _ = writeln!(std::io::stderr(), "      {line}");
}

// ---- gradients ----------------------------------------------------------

#[test]
fn c01_gradient_correctness() {
    let _g = serial();
    let t0 = Instant::now();
    let suite = gradient_suite(3);
    let elapsed = t0.elapsed();
    let failed: Vec<String> = suite
        .iter()
        .filter(|(_, r)| !r.passed() || r.probes < FD_PROBES)
        .map(|(n, r)| format!("{n} ({} probes, max rel err {:.2e})", r.probes, r.max_error))
        .collect();
    let worst = suite.iter().map(|(_, r)| r.max_error).fold(0.0, f64::max);
    let fewest = suite.iter().map(|(_, r)| r.probes).min().unwrap_or(0);
    let passed = failed.is_empty() && elapsed < Duration::from_secs(300);
    verdict(
        "gradient correctness",
        passed,
        format!(
            "{} groups, >= {fewest} probes each, worst rel err {worst:.2e} (< {FD_TOLERANCE:e}), {:.1}s (< 300s){}",
            suite.len(),
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
        ),
    );
}

// ---- normalization ------------------------------------------------------

#[test]
fn c02_normalization_suite() {
    let _g = serial();
    let mut failures = Vec::new();
    let examples = [((1.0, 1.0, 4.0, 0.8), -1.0), ((4.0, 0.0, 5.0, 0.8), 1.0), ((5.0, 0.0, 5.0, 0.8), 1.0)];
    for ((au, lo, hi, a), want) in examples {
        let got = normalize_au(au, lo, hi, a).unwrap();
        if got != want {
            failures.push(format!("({au}, {lo}, {hi}, {a}) -> {got}, want {want}"));
        }
    }
    let mut checked = 0;
    for lo_i in 0..8 {
        for span_i in 1..8 {
            for alpha_i in 0..4 {
                let (lo, hi, alpha) = (lo_i as f64 * 0.25, lo_i as f64 * 0.25 + span_i as f64 * 0.5, 0.7 + 0.1 * alpha_i as f64);
                if alpha * hi <= lo {
                    continue;
                }
                for t in 0..=40 {
                    let au = lo + (hi - lo) * t as f64 / 40.0;
                    let v = normalize_au(au, lo, hi, alpha).unwrap();
                    checked += 1;
                    let in_range = (-1.0..=1.0).contains(&v);
                    let low_end = (v == -1.0) == (au == lo);
                    let clamp = au < alpha * hi || v == 1.0;
                    if !(in_range && low_end && clamp) {
                        failures.push(format!("au {au} in [{lo}, {hi}] alpha {alpha} -> {v}"));
                    }
                }
            }
        }
    }
    verdict(
        "normalization suite",
        failures.is_empty(),
        format!("3 worked examples and {checked} sweep points{}", if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }),
    );
}

// ---- balanced sampling --------------------------------------------------

#[test]
fn c03_balanced_sampling() {
    let _g = serial();
    let t0 = Instant::now();
    let mut wins = 0;
    let mut singletons_ok = true;
    for seed in 0..50 {
        let track = random_track(3000, 17, seed);
        let balanced = balanced_sample(&track, 300, Quantizer::AU, seed);
        let uniform = uniform_sample(track.len(), 300);
        if block_imbalance(&track, &balanced, Quantizer::AU) <= block_imbalance(&track, &uniform, Quantizer::AU) {
            wins += 1;
        }
        let blocks = build_blocks(&track, Quantizer::AU);
        let all = balanced_sample(&track, blocks.len(), Quantizer::AU, seed);
        singletons_ok &= blocks.iter().filter(|b| b.members.len() == 1).all(|b| all.contains(&b.members[0]));
        singletons_ok &= blocks.iter().all(|b| b.members.iter().any(|f| all.contains(f)));
    }
    let elapsed = t0.elapsed();
    verdict(
        "balanced sampling",
        wins == 50 && singletons_ok && elapsed < Duration::from_secs(60),
        format!("flatter than uniform in {wins}/50 tracks, singleton inclusion {singletons_ok}, {:.1}s (< 60s)", elapsed.as_secs_f64()),
    );
}

// ---- rendering algebra --------------------------------------------------

fn random_samples(rng: &mut ChaCha8Rng, channels: usize) -> Vec<RaySample> {
    let n = rng.gen_range(2..64);
    let mut depth = rng.gen_range(0.5..2.0);
    (0..n)
        .map(|_| {
            let interval = rng.gen_range(0.001..0.2);
            let logits: Vec<f64> = (0..channels).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let s = RaySample {
                depth,
                interval,
                density: if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..80.0) },
                color: [rng.gen(), rng.gen(), rng.gen()],
                masks: logits.iter().map(|l| l.exp() / z).collect(),
            };
            depth += interval;
            s
        })
        .collect()
}

#[test]
fn c04_rendering_algebra() {
    let _g = serial();
    let ln2 = std::f64::consts::LN_2;
    let two = [
        RaySample { depth: 1.0, interval: 1.0, density: ln2, color: [1.0, 0.0, 0.0], masks: vec![0.0, 1.0] },
        RaySample { depth: 2.0, interval: 1.0, density: ln2, color: [0.0, 1.0, 0.0], masks: vec![1.0, 0.0] },
    ];
    // Closed form: w = (1/2, 1/4), so C = (1/2, 1/4, 0), opacity 3/4,
    // depth (1/2 + 2/4) / (3/4) = 4/3.
    let c = composite_color(&two);
    let closed = (c.color[0] - 0.5).abs() < 1e-6
        && (c.color[1] - 0.25).abs() < 1e-6
        && c.color[2].abs() < 1e-6
        && (c.opacity - 0.75).abs() < 1e-6
        && (c.depth - 4.0 / 3.0).abs() < 1e-6;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_sum = 0.0f64;
    let mut opacity_ok = true;
    for _ in 0..10_000 {
        let s = random_samples(&mut rng, 4);
        let c = composite_color(&s);
        let m = composite_mask(&s);
        opacity_ok &= (0.0..=1.0).contains(&c.opacity);
        worst_sum = worst_sum.max((m.iter().sum::<f64>() - c.opacity).abs());
    }

    // The same identity through the network renderer on randomized fields.
    let spec = BlobSceneSpec::default();
    let camera = spec.orbit.frame_camera(7).unwrap().resized(12, 12);
    let options = RenderOptions { samples: 24, ..RenderOptions::default() };
    let mut field_worst = 0.0f64;
    for seed in 0..4 {
        let mut field = SceneField::<f64>::new(tiny_config(4), seed).unwrap();
        randomize(&mut field, seed, 0.8);
        let img = render_image(&field, &camera, &QueryMode::Control { alpha: vec![0.3; 6] }, &options).unwrap();
        for p in 0..img.pixel_count() {
            let sum: f32 = img.mask(p).iter().sum();
            opacity_ok &= (0.0..=1.0).contains(&img.opacity[p]);
            field_worst = field_worst.max((sum - img.opacity[p]).abs() as f64);
        }
    }
    verdict(
        "rendering algebra",
        closed && opacity_ok && worst_sum < 1e-6 && field_worst < 1e-6,
        format!(
            "two-sample closed form {closed}, opacity in [0,1] {opacity_ok}, max |sum(mask) - opacity| {worst_sum:.1e} on 10^4 random sample sets and {field_worst:.1e} on rendered fields (< 1e-6)"
        ),
    );
}

// ---- exact decoupling ---------------------------------------------------

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Slicing outputs and region logits for `alpha`, per point, as raw bits.
fn slice_bits(field: &SceneField<f32>, pts: &[f64], alpha: &[f64], omega: &[f64]) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let mut tape = Tape::new();
    let params = field.store().bind(&mut tape);
    let psi = vec![0.0; field.config().appearance_dim];
    let codes = field.control_codes(&mut tape, &[alpha.to_vec()], omega, &psi).unwrap();
    let rows = pts.len() / 3;
    let pos = tape.constant(DenseArray::from_f64(&[rows, 3], pts).unwrap());
    let s = field.slice(&mut tape, &params, pos, &codes, &vec![0; rows]).unwrap();
    let logits = field.eval_mask_logits(&mut tape, &params, s.warped_encoded, s.w0, &s.w).unwrap();
    (
        s.w.iter().map(|&v| bits(tape.value(v).data())).collect(),
        logits.iter().map(|&v| bits(tape.value(v).data())).collect(),
    )
}

#[test]
fn c05_exact_decoupling() {
    let _g = serial();
    let spec = BlobSceneSpec::default();
    let topo = spec.topology().unwrap();
    let mut field = SceneField::<f32>::new(FieldConfig::desk(topo.clone(), 6), 21).unwrap();
    randomize(&mut field, 21, 0.3);
    let k = field.attribute_count();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let pts: Vec<f64> = (0..3 * 256).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let omega: Vec<f64> = (0..field.config().deformation_dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let base: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (w, logits) = slice_bits(&field, &pts, &base, &omega);
    let mut violations = Vec::new();
    let mut comparisons = 0;
    for j in 0..k {
        let mut alpha = base.clone();
        alpha[j] = if alpha[j] > 0.0 { alpha[j] - 0.9 } else { alpha[j] + 0.9 };
        let (w2, logits2) = slice_bits(&field, &pts, &alpha, &omega);
        for i in 0..k {
            comparisons += 1;
            if (w[i] == w2[i]) != (i != j) {
                violations.push(format!("w_{i} vs alpha_{j}"));
            }
        }
        for n in 1..=topo.region_count {
            comparisons += 1;
            let member = topo.region_of(j) == n;
            if (logits[n - 1] == logits2[n - 1]) == member {
                violations.push(format!("mask {n} vs alpha_{j}"));
            }
        }
    }
    let shifted: Vec<f64> = omega.iter().map(|v| v + 0.3).collect();
    let (w3, _) = slice_bits(&field, &pts, &base, &shifted);
    for i in 0..k {
        comparisons += 1;
        if w3[i] != w[i] {
            violations.push(format!("w_{i} vs omega"));
        }
    }
    verdict(
        "exact decoupling",
        violations.is_empty(),
        format!(
            "{comparisons} perturbation comparisons over 256 points, bit-exact in f32{}",
            if violations.is_empty() { String::new() } else { format!("; violations: {}", violations.join(", ")) }
        ),
    );
}

// ---- trained desk model -------------------------------------------------

struct Trained {
    _dir: tempfile::TempDir,
    spec: BlobSceneSpec,
    data: TrainingSet,
    field: SceneField<f32>,
    seconds: f64,
}

const TRAINING_BUDGET: Duration = Duration::from_secs(2 * 3600);

fn trained() -> &'static Trained {
    static MODEL: OnceLock<Trained> = OnceLock::new();
    MODEL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let spec = BlobSceneSpec::default();
        let manifest = generate_dataset(&spec, dir.path(), 0).unwrap();
        let data = TrainingSet::load(&manifest, Holdout::Odd).unwrap();
        let config = TrainConfig { holdout: Holdout::Odd, ..TrainConfig::desk() };
        let fc = FieldConfig::desk(data.topology.clone(), data.latent_count);
        log(format!(
            "training: {} frames ({} train, {} held out), {}x{}, {} iterations",
            manifest.frames.len(),
            data.train.len(),
            data.held_out.len(),
            spec.orbit.width,
            spec.orbit.height,
            config.iterations
        ));
        let mut trainer = Trainer::new(data.clone(), fc, config).unwrap();
        let t0 = Instant::now();
        trainer
            .run(None, |m| {
                if (m.step + 1) % 2000 == 0 {
                    log(format!(
                        "step {} recon {:.3e} mask {:.3e} attr {:.3e} ({:.0}s)",
                        m.step + 1,
                        m.recon,
                        m.mask,
                        m.attr,
                        t0.elapsed().as_secs_f64()
                    ));
                }
            })
            .unwrap();
        let seconds = t0.elapsed().as_secs_f64();
        Trained { _dir: dir, spec, data, field: trainer.trained_field(), seconds }
    })
}

#[test]
fn c06_end_to_end_training() {
    let _g = serial();
    let m = trained();
    let options = RenderOptions::default();
    let train = training_view_quality(&m.field, &m.data.train, &options).unwrap();
    let held = interpolation_eval(&m.field, &m.data.train, &m.data.held_out, &options).unwrap();
    let in_budget = m.seconds <= TRAINING_BUDGET.as_secs_f64();
    verdict(
        "end-to-end desk training",
        in_budget && train.mean_psnr > 30.0 && held.mean_psnr > 28.0 && held.mean_ms_ssim > 0.95,
        format!(
            "training {:.0}s (<= 7200s), training-view PSNR {:.2} dB (> 30), held-out PSNR {:.2} dB (> 28), held-out MS-SSIM {:.4} (> 0.95)",
            m.seconds, train.mean_psnr, held.mean_psnr, held.mean_ms_ssim
        ),
    );
}

#[test]
fn c07_attribute_control_fidelity() {
    let _g = serial();
    let m = trained();
    let renderer = FieldRenderer { field: &m.field, options: RenderOptions::default() };
    let camera = m.spec.orbit.frame_camera(0).unwrap();
    let report = icc_protocol(&renderer, &m.spec, &camera, RAMP_POINTS).unwrap();
    for line in report.table().lines() {
        log(line.to_string());
    }
    let mean = report.mean.unwrap_or(f64::NAN);
    verdict("attribute-control fidelity", mean >= 0.8, format!("mean ICC {mean:.3} (>= 0.8)"));
}

#[test]
fn c08_image_level_decoupling() {
    let _g = serial();
    let m = trained();
    let renderer = FieldRenderer { field: &m.field, options: RenderOptions::default() };
    let camera = m.spec.orbit.frame_camera(0).unwrap();
    let report = decoupling_score(&renderer, &m.spec, &camera).unwrap();
    let per: Vec<String> = report.names.iter().zip(&report.leakage).map(|(n, l)| format!("{n} {l:.4}")).collect();
    verdict(
        "image-level decoupling",
        report.leakage.iter().all(|&l| l < 0.05),
        format!("leakage {} (each < 0.05)", per.join(", ")),
    );
}

// ---- ICC metric ---------------------------------------------------------

#[test]
fn c09_icc_matches_anova() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..30);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v * rng.gen_range(-1.0..2.0) + rng.gen_range(-1.0..1.0)).collect();
        worst = worst.max((icc(&a, &b).unwrap() - anova_icc(&table(&a, &b))).abs());
    }
    verdict("ICC vs ANOVA", worst < 1e-9, format!("max |difference| {worst:.1e} over 1000 random series (< 1e-9)"));
}

// ---- determinism --------------------------------------------------------

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn weight_bits(field: &SceneField<f32>) -> Vec<u32> {
    field.store().blocks().iter().flat_map(|b| bits(b.value.data())).collect()
}

#[test]
fn c10_determinism() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);

    preprocess_fixture(dir.path(), 40);
    let config = PreprocessConfig { budget: 16, sg_window: 7, sg_order: 2, ..PreprocessConfig::default() };
    preprocess(&p("track.csv"), &p("frames"), &p("poses.json"), &config, &p("pre_a")).unwrap();
    preprocess(&p("track.csv"), &p("frames"), &p("poses.json"), &config, &p("pre_b")).unwrap();
    let preprocess_same = tree_bytes(&p("pre_a")) == tree_bytes(&p("pre_b"));

    let mut spec = BlobSceneSpec::default();
    spec.orbit.frames = 8;
    spec.orbit.width = 32;
    spec.orbit.height = 32;
    let manifest = generate_dataset(&spec, &p("synth"), 0).unwrap();
    let train = |deterministic: bool| {
        let data = TrainingSet::load(&manifest, Holdout::None).unwrap();
        let fc = FieldConfig::desk(data.topology.clone(), data.latent_count);
        let config = TrainConfig { iterations: 12, rays_per_batch: 128, chunk_rays: 32, deterministic, ..TrainConfig::desk() };
        let mut trainer = Trainer::new(data, fc, config).unwrap();
        trainer.run(None, |_| {}).unwrap();
        trainer.trained_field()
    };
    let a = train(true);
    let b = train(true);
    let c = train(false);
    let train_same = weight_bits(&a) == weight_bits(&b) && weight_bits(&a) == weight_bits(&c);

    let camera = spec.orbit.frame_camera(3).unwrap();
    let options = RenderOptions { samples: 32, ..RenderOptions::default() };
    let mode = QueryMode::Control { alpha: vec![0.4, -0.2, 0.0, 0.9, -1.0, 0.1] };
    let r1 = render_image(&a, &camera, &mode, &options).unwrap();
    let r2 = render_image(&b, &camera, &mode, &options).unwrap();
    let render_same = bits(&r1.color) == bits(&r2.color) && bits(&r1.masks) == bits(&r2.masks) && bits(&r1.depth) == bits(&r2.depth);

    let eval = |field: &SceneField<f32>| {
        let renderer = FieldRenderer { field, options: options.clone() };
        let cam = spec.orbit.frame_camera(0).unwrap();
        let icc = icc_protocol(&renderer, &spec, &cam, 5).unwrap();
        let dec = decoupling_score(&renderer, &spec, &cam).unwrap();
        let data = TrainingSet::load(&manifest, Holdout::None).unwrap();
        let q = training_view_quality(field, &data.train, &options).unwrap();
        (
            serde_json::to_string(&icc).unwrap(),
            serde_json::to_string(&dec).unwrap(),
            serde_json::to_string(&q).unwrap(),
        )
    };
    let eval_same = eval(&a) == eval(&b);
    verdict(
        "determinism",
        preprocess_same && train_same && render_same && eval_same,
        format!("preprocess {preprocess_same}, train {train_same}, render {render_same}, eval {eval_same} (all bit-identical)"),
    );
}
