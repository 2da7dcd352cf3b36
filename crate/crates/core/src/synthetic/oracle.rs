use nalgebra::{Point3, Vector3};

use super::scene::{render_analytic, BlobSceneSpec, Effect};
use crate::error::{Error, Result};
use crate::render::{CameraModel, RenderedImage};

/// Minimum summed channel intensity for a region to count as visible.
pub const VISIBLE_MASS: f64 = 1.0;
const CALIBRATION_POINTS: usize = 21;
/// Intensities below this fraction of the channel peak are ignored, so
/// faint haze far from a blob cannot dominate its moments.
pub const FOOTPRINT_FLOOR: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub mass: f64,
    pub centroid: [f64; 2],
    pub spread: f64,
}

/// Centroid and RMS radius of one color channel, weighted by intensity
/// above the floor.
pub fn footprint(img: &RenderedImage, channel: usize) -> Option<Footprint> {
    let peak = (0..img.pixel_count())
        .map(|p| img.color[3 * p + channel].max(0.0) as f64)
        .fold(0.0, f64::max);
    let floor = FOOTPRINT_FLOOR * peak;
    let weight = |x: usize, y: usize| (img.color[3 * (y * img.width + x) + channel] as f64 - floor).max(0.0);
    let mut total = 0.0;
    let mut mass = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for y in 0..img.height {
        for x in 0..img.width {
            total += img.color[3 * (y * img.width + x) + channel].max(0.0) as f64;
            let v = weight(x, y);
            mass += v;
            cx += v * x as f64;
            cy += v * y as f64;
        }
    }
    if total < VISIBLE_MASS || mass <= 0.0 {
        return None;
    }
    let centroid = [cx / mass, cy / mass];
    let mut second = 0.0;
    for y in 0..img.height {
        for x in 0..img.width {
            let v = weight(x, y);
            second += v * ((x as f64 - centroid[0]).powi(2) + (y as f64 - centroid[1]).powi(2));
        }
    }
    Some(Footprint {
        mass: total,
        centroid,
        spread: (second / mass).sqrt(),
    })
}

#[derive(Clone, Debug)]
enum Response {
    Spread,
    Shift([f64; 2]),
}

impl Response {
    fn value(&self, f: &Footprint) -> f64 {
        match self {
            Response::Spread => f.spread,
            Response::Shift(u) => f.centroid[0] * u[0] + f.centroid[1] * u[1],
        }
    }
}

#[derive(Clone, Debug)]
struct Curve {
    channel: usize,
    response: Response,
    /// Responses at evenly spaced alphas in [-1, 1], strictly increasing.
    values: Vec<f64>,
}

/// Reads attribute values back from an image: each region is isolated by
/// its color channel, and its spread (size attributes) or displacement
/// along the projected offset direction (offset attributes) is inverted
/// through a response curve calibrated on analytic renders from the same
/// camera.
#[derive(Clone, Debug)]
pub struct Oracle {
    curves: Vec<Curve>,
}

fn grid_alpha(i: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (CALIBRATION_POINTS - 1) as f64
}

impl Oracle {
    pub fn calibrate(spec: &BlobSceneSpec, camera: &CameraModel) -> Result<Self> {
        let k = spec.attribute_count();
        let mut curves = Vec::with_capacity(k);
        for (a, binding) in spec.attributes.iter().enumerate() {
            let region = &spec.regions[binding.region - 1];
            let channel = (0..3)
                .max_by(|&i, &j| region.color[i].total_cmp(&region.color[j]))
                .unwrap_or(0);
            let response = match &binding.effect {
                Effect::RadiusScale => Response::Spread,
                Effect::Offset { direction } => {
                    let c = Point3::from(region.center);
                    let (u0, v0, _) = camera.project(&c);
                    let (u1, v1, _) = camera.project(&(c + 0.01 * Vector3::from(*direction)));
                    let n = (u1 - u0).hypot(v1 - v0);
                    if n < 1e-9 {
                        return Err(Error::Validation(format!(
                            "offset of {} is parallel to the viewing direction",
                            binding.name
                        )));
                    }
                    Response::Shift([(u1 - u0) / n, (v1 - v0) / n])
                }
            };
            let mut values = Vec::with_capacity(CALIBRATION_POINTS);
            for i in 0..CALIBRATION_POINTS {
                let mut alphas = vec![0.0; k];
                alphas[a] = grid_alpha(i);
                let img = render_analytic(spec, &alphas, camera);
                let f = footprint(&img, channel).ok_or_else(|| {
                    Error::Validation(format!("region of {} is not visible from this camera", binding.name))
                })?;
                values.push(response.value(&f));
            }
            if values.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Validation(format!(
                    "response of {} is not monotone from this camera",
                    binding.name
                )));
            }
            curves.push(Curve { channel, response, values });
        }
        Ok(Self { curves })
    }

    /// Estimated attribute values; `None` where the region is not visible.
    pub fn measure(&self, img: &RenderedImage) -> Vec<Option<f64>> {
        self.curves
            .iter()
            .map(|curve| {
                let f = footprint(img, curve.channel)?;
                Some(invert(&curve.values, curve.response.value(&f)))
            })
            .collect()
    }
}

fn invert(values: &[f64], r: f64) -> f64 {
    let last = values.len() - 1;
    if r <= values[0] {
        return -1.0;
    }
    if r >= values[last] {
        return 1.0;
    }
    let i = values.partition_point(|&v| v <= r) - 1;
    let t = (r - values[i]) / (values[i + 1] - values[i]);
    grid_alpha(i) + t * (grid_alpha(i + 1) - grid_alpha(i))
}

pub fn oracle_measure(img: &RenderedImage, spec: &BlobSceneSpec, camera: &CameraModel) -> Result<Vec<Option<f64>>> {
    Ok(Oracle::calibrate(spec, camera)?.measure(img))
}
