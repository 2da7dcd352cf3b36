//! Shared fixtures: small fields, weight randomization and the central
//! finite-difference gradient check.

#![allow(dead_code)]

use std::path::Path;

use confies_core::facs::{canonical_landmarks, write_tracking_csv, PoseRecord, TrackingFrame};
use confies_core::field::{FieldConfig, NetShape, SceneField};
use confies_core::numerics::{DenseArray, ParamId, ParamVars, Real};
use confies_core::render::{save_rgb, generate_rays, render_rays_tape, CameraModel, RayBatchVars};
use confies_core::synthetic::BlobSceneSpec;
use confies_core::train::{attribute_loss, latent_reg_grad, latent_reg_loss, mask_loss, recon_loss};
use confies_core::{Result, Tape, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so that entries whose gradient
/// is numerically zero are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;
pub const FD_PROBES: usize = 100;

/// The synthetic-scene topology with every network shrunk to a few units.
pub fn tiny_config(latents: usize) -> FieldConfig {
    let topology = BlobSceneSpec::default().topology().unwrap();
    let mut c = FieldConfig::desk(topology, latents);
    c.deformation_dim = 3;
    c.appearance_dim = 2;
    c.position_frequencies = 2;
    c.direction_frequencies = 1;
    c.attribute_net = NetShape::new(&[6, 6, 6], Some(2));
    c.deformation_net = NetShape::new(&[6, 6], None);
    c.slicing_net = NetShape::new(&[5, 5], None);
    c.mask_net = NetShape::new(&[5, 5], None);
    c.uncertainty_net = NetShape::new(&[5, 5], None);
    c.template_net = NetShape::new(&[8, 8, 8], Some(2));
    c.color_width = 6;
    c
}

/// Fresh fields have zeroed and down-scaled heads; spread every weight so
/// every path carries gradient.
pub fn randomize<S: Real>(field: &mut SceneField<S>, seed: u64, spread: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let store = field.store_mut();
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).data_mut() {
            *v = S::of(v.as_f64() + rng.gen_range(-spread..spread));
        }
    }
}

pub fn tiny_field(seed: u64) -> SceneField<f64> {
    let mut field = SceneField::<f64>::new(tiny_config(4), seed).unwrap();
    randomize(&mut field, seed, 0.4);
    field
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub probes: usize,
    pub max_error: f64,
    pub worst: String,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.probes >= FD_PROBES && self.max_error < FD_TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Compare reverse-mode gradients of `objective` with central differences on
/// `probes` randomly chosen coordinates of the blocks `ids`.
pub fn fd_check(
    field: &mut SceneField<f64>,
    ids: &[ParamId],
    probes: usize,
    seed: u64,
    objective: &dyn Fn(&SceneField<f64>, &mut Tape<f64>, &ParamVars) -> Result<Var>,
) -> FdReport {
    let eval = |field: &SceneField<f64>| -> (Tape<f64>, Var) {
        let mut tape = Tape::new();
        let params = field.store().bind(&mut tape);
        let loss = objective(field, &mut tape, &params).unwrap();
        (tape, loss)
    };
    let (tape, loss) = eval(field);
    let grads = tape.backward(loss).unwrap().into_params(field.store());
    let mut coords: Vec<(ParamId, usize)> =
        ids.iter().flat_map(|&id| (0..field.store().get(id).len()).map(move |k| (id, k))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    coords.shuffle(&mut rng);
    let mut chosen: Vec<(ParamId, usize)> = coords.iter().copied().take(probes).collect();
    while chosen.len() < probes && !coords.is_empty() {
        chosen.push(coords[chosen.len() % coords.len()]);
    }
    let mut report = FdReport { probes: 0, max_error: 0.0, worst: String::new() };
    for (id, k) in chosen {
        let orig = field.store().get(id).data()[k];
        let mut at = |v: f64| {
            field.store_mut().get_mut(id).data_mut()[k] = v;
            let (t, l) = eval(field);
            t.value(l).data()[0]
        };
        let plus = at(orig + FD_STEP);
        let minus = at(orig - FD_STEP);
        field.store_mut().get_mut(id).data_mut()[k] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let analytic = grads.get(id).data()[k];
        let err = relative_error(analytic, numeric);
        report.probes += 1;
        if err >= report.max_error {
            report.max_error = err;
            report.worst = format!("{}[{k}]: analytic {analytic:.9e} numeric {numeric:.9e}", field.store().name(id));
        }
    }
    report
}

/// Dot product of `v` with fixed pseudo-random weights.
pub fn project(tape: &mut Tape<f64>, v: Var, salt: f64) -> Var {
    let value = tape.value(v).clone();
    let w = DenseArray::from_fn(value.shape(), |i| ((i as f64) * 0.7 + salt).sin());
    let w = tape.constant(w);
    let prod = tape.mul(v, w);
    tape.sum(prod)
}

/// Random points with unit view directions.
pub fn random_points(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = Vec::with_capacity(3 * n);
    let mut dir = Vec::with_capacity(3 * n);
    for _ in 0..n {
        pos.extend((0..3).map(|_| rng.gen_range(-1.2..1.2)));
        let d: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        dir.extend(d.iter().map(|v| v / norm));
    }
    (pos, dir)
}

/// Every network output for a few points of two frames, contracted to a
/// scalar. Latent codes enter through the training path.
pub fn network_objective(field: &SceneField<f64>, tape: &mut Tape<f64>, params: &ParamVars) -> Result<Var> {
    let (pos, dir) = random_points(6, 5);
    let k = field.attribute_count();
    let alpha_gt: Vec<f64> = (0..2 * k).map(|i| ((i as f64) * 1.3).sin() * 0.8).collect();
    let delta: Vec<bool> = (0..2 * k).map(|i| i % 3 != 0).collect();
    let (codes, predicted) = field.train_codes(tape, params, &[1, 3], &alpha_gt, &delta)?;
    let positions = tape.constant(DenseArray::from_f64(&[6, 3], &pos)?);
    let directions = tape.constant(DenseArray::from_f64(&[6, 3], &dir)?);
    let groups = [0, 1, 0, 1, 1, 0];
    let out = field.forward(tape, params, positions, directions, &codes, &groups)?;
    let beta = field.uncertainty(tape, params, positions, &codes, &groups)?;
    let mut total = project(tape, predicted, 0.1);
    for (i, v) in [out.sigma, out.color, out.masks, out.warped, out.hyper, beta].into_iter().enumerate() {
        let p = project(tape, v, 0.3 * i as f64 + 0.2);
        total = tape.add(total, p);
    }
    Ok(total)
}

/// Networks by name, with the blocks each owns.
pub fn network_groups(field: &SceneField<f64>) -> Vec<(String, Vec<ParamId>)> {
    let mut out = vec![
        ("A (attribute)".to_string(), field.network_blocks("attribute")),
        ("T (deformation)".to_string(), field.network_blocks("deformation")),
    ];
    for i in 0..=field.attribute_count() {
        out.push((format!("H_{i} (slicing)"), field.network_blocks(&format!("slicing{i}"))));
    }
    for n in 1..=field.region_count() {
        out.push((format!("M_{n} (mask)"), field.network_blocks(&format!("mask{n}"))));
    }
    for i in 1..=field.attribute_count() {
        out.push((format!("B_{i} (uncertainty)"), field.network_blocks(&format!("uncertainty{i}"))));
    }
    out.push(("F (template)".to_string(), field.network_blocks("template")));
    out
}

/// A small batch of rays through the tiny field's volume.
pub struct LossFixture {
    pub latents: Vec<usize>,
    pub groups: Vec<usize>,
    pub camera: CameraModel,
    pub pixels: Vec<(usize, usize)>,
    pub gt_rgb: Vec<f64>,
    pub labels: Vec<usize>,
    pub alpha_gt: Vec<f64>,
    pub delta: Vec<bool>,
    pub samples: usize,
}

impl LossFixture {
    pub fn new() -> Self {
        let spec = BlobSceneSpec::default();
        let camera = spec.orbit.frame_camera(3).unwrap().resized(8, 8);
        let pixels = vec![(3, 3), (4, 2), (2, 5), (5, 5), (1, 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let gt_rgb = (0..pixels.len() * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let k = spec.attribute_count();
        Self {
            latents: vec![0, 2],
            groups: vec![0, 1, 0, 1, 1],
            camera,
            pixels,
            gt_rgb,
            labels: vec![1, 0, 2, 3, 1],
            alpha_gt: (0..2 * k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            delta: (0..2 * k).map(|i| i % 4 != 1).collect(),
            samples: 6,
        }
    }

    /// Forward pass shared by every loss term.
    pub fn render(
        &self,
        field: &SceneField<f64>,
        tape: &mut Tape<f64>,
        params: &ParamVars,
    ) -> Result<(RayBatchVars, Var, confies_core::field::GroupCodes)> {
        let (codes, predicted) = field.train_codes(tape, params, &self.latents, &self.alpha_gt, &self.delta)?;
        let rays = generate_rays(&self.camera, &self.pixels);
        let out = render_rays_tape(field, tape, params, &rays, &self.groups, &codes, self.samples, None)?;
        Ok((out, predicted, codes))
    }

    pub fn recon(&self, field: &SceneField<f64>, tape: &mut Tape<f64>, params: &ParamVars) -> Result<Var> {
        let (out, ..) = self.render(field, tape, params)?;
        recon_loss(tape, out.color, &self.gt_rgb)
    }

    /// Quadrature weights and opacities of the unperturbed field; the mask
    /// and attribute terms treat them as constants.
    pub fn frozen(&self, field: &SceneField<f64>) -> (DenseArray<f64>, Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let params = field.store().bind(&mut tape);
        let (out, ..) = self.render(field, &mut tape, &params).unwrap();
        (tape.value(out.weights).clone(), out.opacity(&tape), out.depths.clone())
    }

    pub fn mask(
        &self,
        field: &SceneField<f64>,
        tape: &mut Tape<f64>,
        params: &ParamVars,
        frozen: &(DenseArray<f64>, Vec<f64>, Vec<f64>),
    ) -> Result<Var> {
        let (out, ..) = self.render(field, tape, params)?;
        let weights = tape.constant(frozen.0.clone());
        let rendered = tape.weighted_sum(weights, out.sample_masks);
        let inv: Vec<f64> = frozen.1.iter().map(|o| 1.0 / o.max(1e-5)).collect();
        let inv = tape.constant(DenseArray::from_f64(&[inv.len(), 1], &inv)?);
        let probs = tape.mul_column(rendered, inv);
        mask_loss(tape, probs, &self.labels, 2.0)
    }

    pub fn attribute(
        &self,
        field: &SceneField<f64>,
        tape: &mut Tape<f64>,
        params: &ParamVars,
        frozen: &(DenseArray<f64>, Vec<f64>, Vec<f64>),
    ) -> Result<Var> {
        let (_, predicted, codes) = self.render(field, tape, params)?;
        let rays = generate_rays(&self.camera, &self.pixels);
        let s = self.samples;
        let probes: Vec<f64> = rays
            .iter()
            .enumerate()
            .flat_map(|(r, ray)| {
                let t: f64 = (0..s).map(|j| frozen.0.data()[r * s + j] * frozen.2[r * s + j]).sum::<f64>()
                    + (1.0 - frozen.1[r]).max(0.0) * ray.far;
                let p = ray.at(t);
                [p.x, p.y, p.z]
            })
            .collect();
        let probes = tape.constant(DenseArray::from_f64(&[rays.len(), 3], &probes)?);
        let beta = field.uncertainty(tape, params, probes, &codes, &self.groups)?;
        let pred = tape.gather_rows(predicted, &self.groups);
        let k = field.attribute_count();
        let ray_gt: Vec<f64> =
            self.groups.iter().flat_map(|&g| self.alpha_gt[g * k..(g + 1) * k].iter().copied()).collect();
        let ray_delta: Vec<bool> =
            self.groups.iter().flat_map(|&g| self.delta[g * k..(g + 1) * k].iter().copied()).collect();
        let weights: Vec<f64> = self.groups.iter().map(|&g| if g == 0 { 0.5 } else { 1.0 / 3.0 }).collect();
        attribute_loss(tape, pred, &ray_gt, beta, &ray_delta, &weights)
    }
}

/// Central differences of the code prior against its closed-form gradient.
pub fn regularizer_check(field: &SceneField<f64>, probes: usize, seed: u64) -> FdReport {
    let tables = [field.deformation_codes(), field.appearance_codes()];
    let values: Vec<Vec<f64>> = tables.iter().map(|&t| field.store().get(t).to_f64_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport { probes: 0, max_error: 0.0, worst: String::new() };
    for _ in 0..probes {
        let t = rng.gen_range(0..2);
        let k = rng.gen_range(0..values[t].len());
        let analytic = latent_reg_grad(&values[t])[k];
        let mut shifted = values.clone();
        shifted[t][k] += FD_STEP;
        let plus = latent_reg_loss(&[&shifted[0], &shifted[1]]);
        shifted[t][k] -= 2.0 * FD_STEP;
        let minus = latent_reg_loss(&[&shifted[0], &shifted[1]]);
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let err = relative_error(analytic, numeric);
        report.probes += 1;
        if err >= report.max_error {
            report.max_error = err;
            report.worst = format!("table {t}[{k}]: analytic {analytic:.9e} numeric {numeric:.9e}");
        }
    }
    report
}

/// Every network and every loss term, by name.
pub fn gradient_suite(seed: u64) -> Vec<(String, FdReport)> {
    let mut field = tiny_field(seed);
    let mut out = Vec::new();
    for (name, ids) in network_groups(&field) {
        let r = fd_check(&mut field, &ids, FD_PROBES, seed + out.len() as u64, &network_objective);
        out.push((name, r));
    }
    let all: Vec<ParamId> = field.store().ids().collect();
    let fx = LossFixture::new();
    let r = fd_check(&mut field, &all, FD_PROBES, seed + 100, &|f, t, p| fx.recon(f, t, p));
    out.push(("L_recon".into(), r));
    let frozen = fx.frozen(&field);
    let r = fd_check(&mut field, &all, FD_PROBES, seed + 101, &|f, t, p| fx.mask(f, t, p, &frozen));
    out.push(("L_mask".into(), r));
    let r = fd_check(&mut field, &all, FD_PROBES, seed + 102, &|f, t, p| fx.attribute(f, t, p, &frozen));
    out.push(("L_attr".into(), r));
    out.push(("L_reg".into(), regularizer_check(&field, FD_PROBES, seed + 103)));
    out
}

/// ICC(3,1) from the two-way ANOVA sums of squares of an n x k table.
pub fn anova_icc(table: &[Vec<f64>]) -> f64 {
    let n = table.len();
    let k = table[0].len();
    let cells = (n * k) as f64;
    let grand: f64 = table.iter().flatten().sum::<f64>() / cells;
    let mut ss_subjects = 0.0;
    for row in table {
        let m = row.iter().sum::<f64>() / k as f64;
        ss_subjects += k as f64 * (m - grand).powi(2);
    }
    let mut ss_residual = 0.0;
    for row in table {
        let row_mean = row.iter().sum::<f64>() / k as f64;
        for (j, &v) in row.iter().enumerate() {
            let col_mean = table.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            ss_residual += (v - row_mean - col_mean + grand).powi(2);
        }
    }
    let bms = ss_subjects / (n - 1) as f64;
    let ems = ss_residual / ((n - 1) * (k - 1)) as f64;
    (bms - ems) / (bms + (k as f64 - 1.0) * ems)
}

pub fn table(a: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(&x, &y)| vec![x, y]).collect()
}

/// Tracking CSV, flat gray frames and fixed poses for `frames` frames.
pub fn preprocess_fixture(dir: &Path, frames: usize) {
    let (w, h) = (48, 48);
    let lm = canonical_landmarks(w as f64, h as f64);
    let rows: Vec<TrackingFrame> = (0..frames)
        .map(|f| {
            let mut au = [0.0; 17];
            au[0] = 2.5 + 2.5 * (f as f64 * 0.3).sin();
            au[8] = if f % 7 == 0 { 4.0 } else { 0.5 };
            au[14] = (f % 5) as f64;
            TrackingFrame { frame: f, timestamp: f as f64 / 30.0, landmarks: lm, au, confidence: 0.9 }
        })
        .collect();
    write_tracking_csv(&dir.join("track.csv"), &rows).unwrap();
    std::fs::create_dir_all(dir.join("frames")).unwrap();
    let rgb = vec![0.5f32; w * h * 3];
    let mut poses = Vec::new();
    for f in 0..frames {
        save_rgb(&dir.join(format!("frames/{f:04}.png")), w, h, &rgb).unwrap();
        poses.push(PoseRecord {
            frame: f,
            intrinsics: [[40.0, 0.0, 24.0], [0.0, 40.0, 24.0], [0.0, 0.0, 1.0]],
            world_from_camera: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0], [0.0, 0.0, 0.0, 1.0]],
            near: None,
            far: None,
        });
    }
    std::fs::write(dir.join("poses.json"), serde_json::to_string(&poses).unwrap()).unwrap();
}


/// Detector-like AU tracks: mostly neutral with sparse activation episodes
/// of varying strength.
pub fn random_track(frames: usize, channels: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracks = vec![vec![0.0; channels]; frames];
    for c in 0..channels {
        let activity = rng.gen_range(0.5..4.0);
        let episodes = ((frames as f64 / 400.0) * activity).ceil() as usize;
        for row in tracks.iter_mut() {
            row[c] = rng.gen_range(0.0f64..0.3).powi(2);
        }
        for _ in 0..episodes {
            let len = rng.gen_range(20..200usize).min(frames);
            let start = rng.gen_range(0..frames - len + 1);
            let peak = rng.gen_range(0.6..5.0);
            for k in 0..len {
                let phase = k as f64 / (len - 1).max(1) as f64;
                let bump = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * phase).cos();
                let v = &mut tracks[start + k][c];
                *v = (*v).max(peak * bump);
            }
        }
    }
    tracks
}
