use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{all_pixels, generate_rays, intervals, sample_along_ray, CameraModel, Ray, RenderedImage};
use crate::error::{Error, Result};
use crate::field::{GroupCodes, QueryMode, SceneField};
use crate::numerics::{DenseArray, ParamVars, Real, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions {
    pub samples: usize,
    /// Rays evaluated per tape.
    pub chunk_rays: usize,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            samples: 64,
            chunk_rays: 512,
            stratified: false,
            seed: 0,
        }
    }
}

/// Tape nodes of a rendered ray batch.
#[derive(Clone, Debug)]
pub struct RayBatchVars {
    /// `[R, S]` quadrature weights shared by color, masks and depth.
    pub weights: Var,
    /// `[R, 3]`, composited over black.
    pub color: Var,
    /// `[R * S, N + 1]` per-sample mask values.
    pub sample_masks: Var,
    /// Sample depths, `R * S`.
    pub depths: Vec<f64>,
    pub samples: usize,
}

impl RayBatchVars {
    /// Accumulated opacity per ray.
    pub fn opacity<S: Real>(&self, tape: &Tape<S>) -> Vec<f64> {
        let w = tape.value(self.weights);
        (0..w.rows())
            .map(|r| w.row(r).iter().map(|v| v.as_f64()).sum::<f64>().clamp(0.0, 1.0))
            .collect()
    }

    /// Opacity-normalized expected depth per ray (0 for empty rays).
    pub fn expected_depth<S: Real>(&self, tape: &Tape<S>) -> Vec<f64> {
        let w = tape.value(self.weights);
        (0..w.rows())
            .map(|r| {
                let row = w.row(r);
                let o: f64 = row.iter().map(|v| v.as_f64()).sum();
                let d: f64 = row
                    .iter()
                    .zip(&self.depths[r * self.samples..(r + 1) * self.samples])
                    .map(|(w, t)| w.as_f64() * t)
                    .sum();
                if o > 1e-10 {
                    d / o
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Sample, query and composite `rays` on `tape`. Ray `r` uses code group
/// `groups[r]`; depths are stratified when `rng` is given.
#[allow(clippy::too_many_arguments)]
pub fn render_rays_tape<S: Real>(
    field: &SceneField<S>,
    tape: &mut Tape<S>,
    params: &ParamVars,
    rays: &[Ray],
    groups: &[usize],
    codes: &GroupCodes,
    samples: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<RayBatchVars> {
    if groups.len() != rays.len() {
        return Err(Error::dimension("ray groups", rays.len(), groups.len()));
    }
    if samples < 2 {
        return Err(Error::Parameter("need at least two samples per ray".into()));
    }
    let n = rays.len() * samples;
    let mut depths = Vec::with_capacity(n);
    let mut deltas = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(3 * n);
    let mut directions = Vec::with_capacity(3 * n);
    let mut point_groups = Vec::with_capacity(n);
    for (ray, &g) in rays.iter().zip(groups) {
        let t = match rng.as_deref_mut() {
            Some(rng) => sample_along_ray(ray.near, ray.far, samples, true, rng),
            None => super::linspace(ray.near, ray.far, samples),
        };
        deltas.extend(intervals(&t, ray.far).into_iter().map(S::of));
        for &tk in &t {
            let p = ray.at(tk);
            positions.extend_from_slice(&[p.x, p.y, p.z]);
            directions.extend_from_slice(ray.direction.as_slice());
            point_groups.push(g);
        }
        depths.extend(t);
    }
    let positions = tape.constant(DenseArray::from_f64(&[n, 3], &positions)?);
    let directions = tape.constant(DenseArray::from_f64(&[n, 3], &directions)?);
    let out = field.forward(tape, params, positions, directions, codes, &point_groups)?;
    let sigma = tape.reshape(out.sigma, &[rays.len(), samples]);
    let weights = tape.composite_weights(sigma, deltas);
    let color = tape.weighted_sum(weights, out.color);
    Ok(RayBatchVars {
        weights,
        color,
        sample_masks: out.masks,
        depths,
        samples,
    })
}

/// Render a full image of `field` seen from `camera`.
pub fn render_image<S: Real>(
    field: &SceneField<S>,
    camera: &CameraModel,
    mode: &QueryMode,
    options: &RenderOptions,
) -> Result<RenderedImage> {
    camera.validate()?;
    if options.chunk_rays == 0 {
        return Err(Error::Parameter("chunk size must be positive".into()));
    }
    let channels = field.region_count() + 1;
    let mut image = RenderedImage::new(camera.width, camera.height, channels);
    let rays = generate_rays(camera, &all_pixels(camera.width, camera.height));
    for (chunk_index, chunk) in rays.chunks(options.chunk_rays).enumerate() {
        let mut tape = Tape::new();
        let params = field.store().bind(&mut tape);
        let codes = field.mode_codes(&mut tape, &params, mode)?;
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ (chunk_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let rng = options.stratified.then_some(&mut rng);
        let groups = vec![0; chunk.len()];
        let out = render_rays_tape(field, &mut tape, &params, chunk, &groups, &codes, options.samples, rng)?;
        let masks = tape.weighted_sum(out.weights, out.sample_masks);
        let opacity = out.opacity(&tape);
        let depth = out.expected_depth(&tape);
        let (color, masks) = (tape.value(out.color), tape.value(masks));
        for (r, ray) in chunk.iter().enumerate() {
            let p = ray.pixel.1 * camera.width + ray.pixel.0;
            for c in 0..3 {
                image.color[3 * p + c] = color.at(r, c).as_f64() as f32;
            }
            for c in 0..channels {
                image.masks[channels * p + c] = masks.at(r, c).as_f64() as f32;
            }
            image.opacity[p] = opacity[r] as f32;
            image.depth[p] = depth[r] as f32;
        }
    }
    Ok(image)
}
