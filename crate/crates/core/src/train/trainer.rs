use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Holdout, TrainConfig};
use super::loss::{attribute_loss, latent_reg_grad, latent_reg_loss, mask_loss, recon_loss, total_loss, LossParts, LossWeights};
use crate::error::{Error, Result};
use crate::eval::dilate;
use crate::facs::{DatasetManifest, Normalization, RegionTopology};
use crate::field::{save_checkpoint, CheckpointMeta, FieldConfig, SceneField};
use crate::numerics::{AdamState, DenseArray, Gradients, Real, Tape};
use crate::render::{generate_rays, load_labels, load_rgb, render_rays_tape, CameraModel};
use crate::synthetic::BlobSceneSpec;

/// One frame with its pixels loaded.
#[derive(Clone, Debug)]
pub struct TrainFrame {
    pub index: usize,
    pub latent: usize,
    pub camera: CameraModel,
    pub rgb: Vec<f32>,
    pub labels: Option<Vec<u8>>,
    pub alpha: Vec<f64>,
    pub delta: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub train: Vec<TrainFrame>,
    pub held_out: Vec<TrainFrame>,
    pub topology: RegionTopology,
    pub attribute_names: Vec<String>,
    pub latent_count: usize,
    pub normalization: Option<Normalization>,
    pub scene: Option<BlobSceneSpec>,
}

impl TrainingSet {
    pub fn load(manifest: &DatasetManifest, holdout: Holdout) -> Result<Self> {
        manifest.validate_contents()?;
        let missing = manifest.missing_files();
        if !missing.is_empty() {
            return Err(Error::Integrity(missing));
        }
        let regions = manifest.topology.region_count;
        let mut train = Vec::new();
        let mut held_out = Vec::new();
        for f in &manifest.frames {
            let (w, h, rgb) = load_rgb(&manifest.resolve(&f.image))?;
            if (w, h) != (f.camera.width, f.camera.height) {
                return Err(Error::Validation(format!(
                    "frame {}: image is {w}x{h}, camera expects {}x{}",
                    f.index, f.camera.width, f.camera.height
                )));
            }
            let labels = match &f.mask {
                Some(p) => {
                    let (mw, mh, labels) = load_labels(&manifest.resolve(p))?;
                    if (mw, mh) != (w, h) {
                        return Err(Error::Validation(format!("frame {}: mask size differs from image", f.index)));
                    }
                    if let Some(&bad) = labels.iter().find(|&&l| l as usize > regions) {
                        return Err(Error::Label { label: bad as usize, max: regions });
                    }
                    Some(labels)
                }
                None => None,
            };
            let frame = TrainFrame {
                index: f.index,
                latent: f.latent_index,
                camera: f.camera.clone(),
                rgb,
                labels,
                alpha: f.attributes.clone(),
                delta: f.supervised.clone(),
            };
            match holdout {
                Holdout::Odd if f.index % 2 == 1 => held_out.push(frame),
                _ => train.push(frame),
            }
        }
        if train.is_empty() {
            return Err(Error::EmptyDataset("no training frames".into()));
        }
        Ok(Self {
            train,
            held_out,
            topology: manifest.topology.clone(),
            attribute_names: manifest.attribute_names.clone(),
            latent_count: manifest.latent_count(),
            normalization: manifest.normalization.clone(),
            scene: manifest.scene.clone(),
        })
    }

    pub fn training_latents(&self) -> Vec<usize> {
        self.train.iter().map(|f| f.latent).collect()
    }
}

/// Logged values of one step. `recon` is the per-ray mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub recon: f64,
    pub reg: f64,
    pub mask: f64,
    pub attr: f64,
    pub lr: f64,
    pub w_attr: f64,
    /// Objective value with the summed reconstruction term.
    pub total: f64,
}

pub const METRICS_HEADER: &str = "step,L_recon,L_reg,L_mask,L_attr,lr,w_attr";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            self.step, self.recon, self.reg, self.mask, self.attr, self.lr, self.w_attr
        )
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug)]
struct Pick {
    frame: usize,
    x: usize,
    y: usize,
}

/// Labeled pixels are grown by this many pixels before foreground sampling
/// so region boundaries get rays from both sides.
pub const FOREGROUND_DILATION: usize = 2;

pub struct Trainer {
    field: SceneField<f32>,
    /// Per training frame, pixel indices near labeled regions.
    foreground: Vec<Vec<usize>>,
    adam: AdamState<f32>,
    config: TrainConfig,
    data: TrainingSet,
    step: u64,
}

impl Trainer {
    pub fn new(data: TrainingSet, field_config: FieldConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if field_config.topology != data.topology {
            return Err(Error::Configuration("field topology differs from the dataset".into()));
        }
        if field_config.latent_count < data.latent_count {
            return Err(Error::Configuration("field has fewer latent codes than the dataset".into()));
        }
        let field = SceneField::new(field_config, config.seed)?;
        let adam = AdamState::new(field.store(), config.learning_rate());
        let foreground = data
            .train
            .iter()
            .map(|f| match &f.labels {
                Some(labels) => {
                    let hit: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
                    let grown = dilate(&hit, f.camera.width, f.camera.height, FOREGROUND_DILATION);
                    (0..grown.len()).filter(|&p| grown[p]).collect()
                }
                None => Vec::new(),
            })
            .collect();
        Ok(Self {
            field,
            foreground,
            adam,
            config,
            data,
            step: 0,
        })
    }

    pub fn field(&self) -> &SceneField<f32> {
        &self.field
    }

    pub fn data(&self) -> &TrainingSet {
        &self.data
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn sample_batch(&self, rng: &mut ChaCha8Rng) -> Vec<Pick> {
        (0..self.config.rays_per_batch)
            .map(|_| {
                let frame = rng.gen_range(0..self.data.train.len());
                let cam = &self.data.train[frame].camera;
                let near = &self.foreground[frame];
                if !near.is_empty() && rng.gen_bool(self.config.foreground_fraction) {
                    let p = near[rng.gen_range(0..near.len())];
                    return Pick { frame, x: p % cam.width, y: p / cam.width };
                }
                Pick {
                    frame,
                    x: rng.gen_range(0..cam.width),
                    y: rng.gen_range(0..cam.height),
                }
            })
            .collect()
    }

    /// Forward and backward for one chunk of rays.
    fn chunk(
        &self,
        picks: &[Pick],
        frame_rays: &HashMap<usize, usize>,
        w_attr: f64,
        seed: u64,
    ) -> Result<(Gradients<f32>, LossParts)> {
        let field = &self.field;
        let k = field.attribute_count();
        let mut tape = Tape::new();
        let params = field.store().bind(&mut tape);
        let mut group_of: HashMap<usize, usize> = HashMap::new();
        let mut frames: Vec<usize> = Vec::new();
        let groups: Vec<usize> = picks
            .iter()
            .map(|p| {
                *group_of.entry(p.frame).or_insert_with(|| {
                    frames.push(p.frame);
                    frames.len() - 1
                })
            })
            .collect();
        let data = &self.data.train;
        let latents: Vec<usize> = frames.iter().map(|&f| data[f].latent).collect();
        let alpha_gt: Vec<f64> = frames.iter().flat_map(|&f| data[f].alpha.iter().copied()).collect();
        let delta: Vec<bool> = frames.iter().flat_map(|&f| data[f].delta.iter().copied()).collect();
        let (codes, predicted) = field.train_codes(&mut tape, &params, &latents, &alpha_gt, &delta)?;

        let rays: Vec<_> = picks
            .iter()
            .map(|p| generate_rays(&data[p.frame].camera, &[(p.x, p.y)]).remove(0))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = render_rays_tape(
            field,
            &mut tape,
            &params,
            &rays,
            &groups,
            &codes,
            self.config.samples_per_ray,
            Some(&mut rng),
        )?;
        let gt: Vec<f64> = picks
            .iter()
            .flat_map(|p| {
                let f = &data[p.frame];
                let i = 3 * (p.y * f.camera.width + p.x);
                f.rgb[i..i + 3].iter().map(|&v| v as f64)
            })
            .collect();
        let recon = recon_loss(&mut tape, out.color, &gt)?;
        let mut objective = recon;
        let mut parts = LossParts {
            recon: tape.value(recon).data()[0].as_f64(),
            ..LossParts::default()
        };

        // Mask term: quadrature weights are held constant so only the mask
        // networks receive its gradient.
        let opacity = out.opacity(&tape);
        let labeled: Vec<usize> = (0..picks.len()).filter(|&r| data[picks[r].frame].labels.is_some()).collect();
        if !labeled.is_empty() && self.config.w_mask > 0.0 {
            let frozen = tape.detach(out.weights);
            let rendered = tape.weighted_sum(frozen, out.sample_masks);
            let inv: Vec<f64> = opacity.iter().map(|o| 1.0 / o.max(self.config.opacity_floor)).collect();
            let inv = tape.constant(DenseArray::from_f64(&[inv.len(), 1], &inv)?);
            let probs = tape.mul_column(rendered, inv);
            let probs = if labeled.len() == picks.len() {
                probs
            } else {
                tape.gather_rows(probs, &labeled)
            };
            let labels: Vec<usize> = labeled
                .iter()
                .map(|&r| {
                    let p = picks[r];
                    let f = &data[p.frame];
                    f.labels.as_ref().expect("filtered")[p.y * f.camera.width + p.x] as usize
                })
                .collect();
            let mask = mask_loss(&mut tape, probs, &labels, self.config.focal_gamma)?;
            parts.mask = tape.value(mask).data()[0].as_f64();
            let weighted = tape.scale(mask, self.config.w_mask);
            objective = tape.add(objective, weighted);
        }

        // Attribute term: uncertainty probed at each ray's expected surface,
        // averaged per frame.
        if delta.iter().any(|&d| d) {
            let depth_weights = tape.value(out.weights).clone();
            let s = out.samples;
            let probes: Vec<f64> = rays
                .iter()
                .enumerate()
                .flat_map(|(r, ray)| {
                    let t: f64 = (0..s)
                        .map(|j| depth_weights.data()[r * s + j].as_f64() * out.depths[r * s + j])
                        .sum::<f64>()
                        + (1.0 - opacity[r]).max(0.0) * ray.far;
                    let p = ray.at(t);
                    [p.x, p.y, p.z]
                })
                .collect();
            let probes = tape.constant(DenseArray::from_f64(&[rays.len(), 3], &probes)?);
            let beta = field.uncertainty(&mut tape, &params, probes, &codes, &groups)?;
            let pred = tape.gather_rows(predicted, &groups);
            let ray_gt: Vec<f64> = picks.iter().flat_map(|p| data[p.frame].alpha.iter().copied()).collect();
            let ray_delta: Vec<bool> = picks.iter().flat_map(|p| data[p.frame].delta.iter().copied()).collect();
            let weights: Vec<f64> = picks.iter().map(|p| 1.0 / frame_rays[&p.frame] as f64).collect();
            debug_assert_eq!(ray_gt.len(), picks.len() * k);
            let attr = attribute_loss(&mut tape, pred, &ray_gt, beta, &ray_delta, &weights)?;
            parts.attr = tape.value(attr).data()[0].as_f64();
            if w_attr > 0.0 {
                let weighted = tape.scale(attr, w_attr);
                objective = tape.add(objective, weighted);
            }
        }
        let grads = tape.backward(objective)?.into_params(field.store());
        Ok((grads, parts))
    }

    /// One optimization step over a fresh ray batch.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let step = self.step;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.config.seed, step, 0));
        let picks = self.sample_batch(&mut rng);
        let mut frame_rays: HashMap<usize, usize> = HashMap::new();
        for p in &picks {
            *frame_rays.entry(p.frame).or_default() += 1;
        }
        let w_attr = self.config.attribute_weight().value(step);
        let lr = self.adam.learning_rate();
        let chunks: Vec<&[Pick]> = picks.chunks(self.config.chunk_rays).collect();
        let run = |(i, c): (usize, &&[Pick])| self.chunk(c, &frame_rays, w_attr, mix(self.config.seed, step, i as u64 + 1));
        let results: Vec<Result<(Gradients<f32>, LossParts)>> = if self.config.deterministic {
            chunks.iter().enumerate().map(run).collect()
        } else {
            chunks.par_iter().enumerate().map(run).collect()
        };
        let mut grads = Gradients::zeros(self.field.store());
        let mut parts = LossParts::default();
        for r in results {
            let (g, p) = r?;
            grads.accumulate(&g);
            parts.recon += p.recon;
            parts.mask += p.mask;
            parts.attr += p.attr;
        }

        // Gaussian prior on the codes, with its exact gradient 2 mu.
        let store = self.field.store();
        let tables = [self.field.deformation_codes(), self.field.appearance_codes()];
        let code_values: Vec<Vec<f64>> = tables.iter().map(|&t| store.get(t).to_f64_vec()).collect();
        parts.reg = latent_reg_loss(&[&code_values[0], &code_values[1]]);
        for (&t, values) in tables.iter().zip(&code_values) {
            let g = grads.get_mut(t);
            for (gv, d) in g.data_mut().iter_mut().zip(latent_reg_grad(values)) {
                *gv += (self.config.w_reg * d) as f32;
            }
        }

        let weights = LossWeights {
            reg: self.config.w_reg,
            mask: self.config.w_mask,
            attr: w_attr,
        };
        let metrics = StepMetrics {
            step,
            recon: parts.recon / picks.len() as f64,
            reg: parts.reg,
            mask: parts.mask,
            attr: parts.attr,
            lr,
            w_attr,
            total: total_loss(parts, weights),
        };
        if !metrics.total.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: format!("non-finite loss {metrics:?}"),
            });
        }
        self.adam.step(self.field.store_mut(), &grads).map_err(|e| match e {
            Error::NonFinite { block, count } => Error::Diverged {
                step,
                reason: format!("{count} non-finite gradients in `{block}`"),
            },
            other => other,
        })?;
        self.step += 1;
        Ok(metrics)
    }

    /// Checkpoint metadata for the current state.
    pub fn meta(&self) -> CheckpointMeta {
        let mut field = self.field.clone();
        field.set_reference_from(&self.data.training_latents());
        CheckpointMeta {
            config: field.config().clone(),
            attribute_names: self.data.attribute_names.clone(),
            normalization: self.data.normalization.clone(),
            scene: self.data.scene.clone(),
            reference_omega: field.reference_omega,
            reference_psi: field.reference_psi,
            reference_camera: self.data.train.first().map(|f| f.camera.clone()),
            step: self.step,
        }
    }

    /// The field with control-mode reference codes set to the mean of the
    /// training frames' codes.
    pub fn trained_field(&self) -> SceneField<f32> {
        let mut field = self.field.clone();
        field.set_reference_from(&self.data.training_latents());
        field
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.trained_field(), &self.meta(), path)
    }

    /// Train to `config.iterations`. With `out_dir`, writes `metrics.csv`,
    /// periodic `checkpoint_<step>.cnfs` files and the final `model.cnfs`;
    /// on divergence the last good state goes to `last_good.cnfs`.
    pub fn run(&mut self, out_dir: Option<&Path>, mut progress: impl FnMut(&StepMetrics)) -> Result<Vec<StepMetrics>> {
        let mut csv = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let mut f = fs::File::create(dir.join("metrics.csv"))?;
                writeln!(f, "{METRICS_HEADER}")?;
                Some(f)
            }
            None => None,
        };
        let mut history = Vec::new();
        while self.step < self.config.iterations {
            let m = match self.step() {
                Ok(m) => m,
                Err(e) => {
                    if let Some(dir) = out_dir {
                        let path = dir.join("last_good.cnfs");
                        match self.save(&path) {
                            Ok(()) => warn!("training diverged; last good state saved to {}", path.display()),
                            Err(save) => warn!("training diverged and the dump failed: {save}"),
                        }
                    }
                    return Err(e);
                }
            };
            let last = self.step == self.config.iterations;
            let log_every = self.config.log_every.max(1);
            if m.step % log_every == 0 || last {
                if let Some(f) = csv.as_mut() {
                    writeln!(f, "{}", m.csv_row())?;
                }
                info!(
                    "step {} recon {:.3e} mask {:.3e} attr {:.3e} lr {:.2e}",
                    m.step, m.recon, m.mask, m.attr, m.lr
                );
            }
            progress(&m);
            history.push(m);
            if let Some(dir) = out_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.step % every == 0 && !last {
                    self.save(&checkpoint_path(dir, self.step))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.save(&dir.join("model.cnfs"))?;
        }
        Ok(history)
    }
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint_{step:06}.cnfs"))
}
