use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DecaySchedule;

/// Which manifest frames are kept out of training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Holdout {
    None,
    /// Train on even frames, hold out odd ones for interpolation checks.
    Odd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: u64,
    pub rays_per_batch: usize,
    /// Share of each batch drawn from pixels near labeled regions; the rest
    /// is uniform over the image.
    #[serde(default)]
    pub foreground_fraction: f64,
    pub samples_per_ray: usize,
    /// Rays per tape; bounds peak memory.
    pub chunk_rays: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub w_reg: f64,
    pub w_mask: f64,
    /// Decays to zero over `iterations`.
    pub w_attr: f64,
    pub focal_gamma: f64,
    pub opacity_floor: f64,
    pub seed: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub holdout: Holdout,
    /// Evaluate chunks one after another. Off, chunks run on the rayon pool;
    /// the reduction order is the same either way.
    pub deterministic: bool,
}

impl TrainConfig {
    /// CPU-sized run for 64x64 synthetic scenes.
    pub fn desk() -> Self {
        Self {
            iterations: 20_000,
            rays_per_batch: 256,
            foreground_fraction: 0.5,
            samples_per_ray: 64,
            chunk_rays: 128,
            lr_initial: 1e-4,
            lr_final: 1e-5,
            w_reg: 1e-4,
            w_mask: 1e-2,
            w_attr: 0.1,
            focal_gamma: 2.0,
            opacity_floor: 1e-5,
            seed: 0,
            checkpoint_every: 5_000,
            log_every: 100,
            holdout: Holdout::None,
            deterministic: true,
        }
    }

    /// Iteration count, sampling and batch size of the full-scale recipe.
    pub fn full() -> Self {
        Self {
            iterations: 250_000,
            rays_per_batch: 512,
            samples_per_ray: 128,
            checkpoint_every: 25_000,
            ..Self::desk()
        }
    }

    pub fn learning_rate(&self) -> DecaySchedule {
        DecaySchedule::new(self.lr_initial, self.lr_final, self.iterations)
    }

    pub fn attribute_weight(&self) -> DecaySchedule {
        DecaySchedule::new(self.w_attr, 0.0, self.iterations)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = self.iterations > 0 && self.rays_per_batch > 0 && self.chunk_rays > 0;
        if !counts || self.samples_per_ray < 2 {
            return Err(Error::Configuration(
                "iterations, rays_per_batch and chunk_rays must be positive; samples_per_ray at least 2".into(),
            ));
        }
        let non_negative = [self.w_reg, self.w_mask, self.w_attr, self.focal_gamma, self.lr_final];
        if non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(self.lr_initial > 0.0) {
            return Err(Error::Configuration("loss weights and rates must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.foreground_fraction) {
            return Err(Error::Configuration("foreground_fraction must lie in [0, 1]".into()));
        }
        if !(self.opacity_floor > 0.0) || !self.learning_rate().is_well_formed() {
            return Err(Error::Configuration("opacity floor must be positive".into()));
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Configuration(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Configuration(format!("line {}: {e}", n + 1)))?;
        }
        self.validate()?;
        Ok(self)
    }

    /// Read a config file; `preset = desk|full` on the first setting line
    /// selects the base.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .find(|l| !l.is_empty())
            .and_then(|l| l.split_once('='))
            .filter(|(k, _)| k.trim() == "preset")
            .map(|(_, v)| v.trim().to_string());
        let start = match base.as_deref() {
            None | Some("desk") => Self::desk(),
            Some("full") => Self::full(),
            Some(other) => return Err(Error::Configuration(format!("unknown preset `{other}`"))),
        };
        start.apply_text(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn parse<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse `{v}`"))
        }
        match key {
            "preset" => {}
            "iterations" => self.iterations = parse(value)?,
            "rays_per_batch" => self.rays_per_batch = parse(value)?,
            "foreground_fraction" => self.foreground_fraction = parse(value)?,
            "samples_per_ray" => self.samples_per_ray = parse(value)?,
            "chunk_rays" => self.chunk_rays = parse(value)?,
            "lr_initial" => self.lr_initial = parse(value)?,
            "lr_final" => self.lr_final = parse(value)?,
            "w_reg" => self.w_reg = parse(value)?,
            "w_mask" => self.w_mask = parse(value)?,
            "w_attr" => self.w_attr = parse(value)?,
            "focal_gamma" => self.focal_gamma = parse(value)?,
            "opacity_floor" => self.opacity_floor = parse(value)?,
            "seed" => self.seed = parse(value)?,
            "checkpoint_every" => self.checkpoint_every = parse(value)?,
            "log_every" => self.log_every = parse(value)?,
            "deterministic" => self.deterministic = parse(value)?,
            "holdout" => {
                self.holdout = match value {
                    "none" => Holdout::None,
                    "odd" => Holdout::Odd,
                    _ => return Err(format!("holdout must be none or odd, got `{value}`")),
                }
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Inverse of [`TrainConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let holdout = match self.holdout {
            Holdout::None => "none",
            Holdout::Odd => "odd",
        };
        let _ = write!(
            s,
            "iterations = {}\nrays_per_batch = {}\nforeground_fraction = {}\nsamples_per_ray = {}\nchunk_rays = {}\nlr_initial = {:e}\n\
             lr_final = {:e}\nw_reg = {:e}\nw_mask = {:e}\nw_attr = {:e}\nfocal_gamma = {}\nopacity_floor = {:e}\n\
             seed = {}\ncheckpoint_every = {}\nlog_every = {}\nholdout = {holdout}\ndeterministic = {}\n",
            self.iterations,
            self.rays_per_batch,
            self.foreground_fraction,
            self.samples_per_ray,
            self.chunk_rays,
            self.lr_initial,
            self.lr_final,
            self.w_reg,
            self.w_mask,
            self.w_attr,
            self.focal_gamma,
            self.opacity_floor,
            self.seed,
            self.checkpoint_every,
            self.log_every,
            self.deterministic,
        );
        s
    }
}
