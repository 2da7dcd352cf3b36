use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facs::RegionTopology;
use crate::render::{
    all_pixels, composite_color, generate_rays, intervals, linspace, CameraModel, RaySample, RenderedImage,
};

/// How an attribute changes its region's blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    /// radius = base (1 + gain alpha)
    RadiusScale,
    /// center = base + gain alpha direction
    Offset { direction: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeBinding {
    pub name: String,
    pub region: usize,
    pub effect: Effect,
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobRegion {
    pub center: [f64; 3],
    pub radius: f64,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub radius: f64,
    pub elevation: f64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub fov_x: f64,
    pub near: f64,
    pub far: f64,
}

impl OrbitSpec {
    pub fn camera(&self, azimuth: f64) -> Result<CameraModel> {
        CameraModel::orbit(
            azimuth,
            self.elevation,
            self.radius,
            Vector3::zeros(),
            self.width,
            self.height,
            self.fov_x,
            self.near,
            self.far,
        )
    }

    /// Camera for frame `f` of the full circle.
    pub fn frame_camera(&self, f: usize) -> Result<CameraModel> {
        self.camera(2.0 * std::f64::consts::PI * f as f64 / self.frames as f64)
    }
}

/// Gaussian blobs, one per region, each truncated at `truncation` radii so
/// that regions never share support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSceneSpec {
    pub regions: Vec<BlobRegion>,
    pub attributes: Vec<AttributeBinding>,
    pub peak_density: f64,
    pub truncation: f64,
    pub orbit: OrbitSpec,
    pub render_samples: usize,
}

pub const LABEL_THRESHOLD: f64 = 1e-4;

impl Default for BlobSceneSpec {
    /// Three blobs stacked on the orbit axis (so no view sees one through
    /// another), red/green/blue, each with a radius-scale and a
    /// vertical-offset attribute.
    fn default() -> Self {
        let regions = vec![
            BlobRegion { center: [0.0, 1.0, 0.0], radius: 0.1, color: [0.85, 0.0, 0.0] },
            BlobRegion { center: [0.0, 0.0, 0.0], radius: 0.1, color: [0.0, 0.85, 0.0] },
            BlobRegion { center: [0.0, -1.0, 0.0], radius: 0.1, color: [0.0, 0.0, 0.85] },
        ];
        let mut attributes = Vec::new();
        for r in 1..=3 {
            attributes.push(AttributeBinding {
                name: format!("r{r}_size"),
                region: r,
                effect: Effect::RadiusScale,
                gain: 0.3,
            });
            attributes.push(AttributeBinding {
                name: format!("r{r}_lift"),
                region: r,
                effect: Effect::Offset { direction: [0.0, 1.0, 0.0] },
                gain: 0.08,
            });
        }
        Self {
            regions,
            attributes,
            peak_density: 30.0,
            truncation: 3.0,
            orbit: OrbitSpec {
                radius: 4.0,
                elevation: 0.2,
                frames: 120,
                width: 64,
                height: 64,
                fov_x: 2.0 * 0.3875f64.atan(),
                near: 2.6,
                far: 5.4,
            },
            render_samples: 128,
        }
    }
}

impl BlobSceneSpec {
    pub fn attribute_count(&self) -> usize {
        self.attributes.len()
    }

    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn topology(&self) -> Result<RegionTopology> {
        RegionTopology::new(self.regions.len(), self.attributes.iter().map(|a| a.region).collect())
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.attributes.iter().map(|a| a.name.clone()).collect()
    }

    /// Largest distance from a region's base center that its support can reach.
    pub fn max_extent(&self, region: usize) -> f64 {
        let mut scale = 1.0;
        let mut shift = 0.0;
        for a in self.attributes.iter().filter(|a| a.region == region) {
            match &a.effect {
                Effect::RadiusScale => scale *= 1.0 + a.gain.abs(),
                Effect::Offset { direction } => shift += a.gain.abs() * Vector3::from(*direction).norm(),
            }
        }
        self.truncation * self.regions[region - 1].radius * scale + shift
    }

    pub fn validate(&self) -> Result<()> {
        self.topology()?;
        for a in &self.attributes {
            if let Effect::RadiusScale = a.effect {
                if a.gain.abs() >= 1.0 {
                    return Err(Error::Validation(format!("radius gain of {} must be below 1", a.name)));
                }
            }
        }
        for i in 0..self.regions.len() {
            for j in i + 1..self.regions.len() {
                let d = (Vector3::from(self.regions[i].center) - Vector3::from(self.regions[j].center)).norm();
                if d <= self.max_extent(i + 1) + self.max_extent(j + 1) {
                    return Err(Error::Validation(format!("regions {} and {} can overlap", i + 1, j + 1)));
                }
            }
        }
        Ok(())
    }

    /// Center and radius of every region's blob under `alphas`.
    pub fn configure(&self, alphas: &[f64]) -> Vec<(Vector3<f64>, f64)> {
        let mut out: Vec<(Vector3<f64>, f64)> =
            self.regions.iter().map(|r| (Vector3::from(r.center), r.radius)).collect();
        for (a, &v) in self.attributes.iter().zip(alphas) {
            let slot = &mut out[a.region - 1];
            match &a.effect {
                Effect::RadiusScale => slot.1 *= 1.0 + a.gain * v,
                Effect::Offset { direction } => slot.0 += a.gain * v * Vector3::from(*direction),
            }
        }
        out
    }
}

/// Density, color and per-region densities of the analytic scene at one
/// configuration.
pub struct AnalyticField<'a> {
    spec: &'a BlobSceneSpec,
    blobs: Vec<(Vector3<f64>, f64)>,
}

impl<'a> AnalyticField<'a> {
    pub fn new(spec: &'a BlobSceneSpec, alphas: &[f64]) -> Self {
        Self {
            spec,
            blobs: spec.configure(alphas),
        }
    }

    pub fn region_densities(&self, x: &Point3<f64>) -> Vec<f64> {
        (0..self.blobs.len()).map(|n| self.density_of(n, x)).collect()
    }

    fn density_of(&self, n: usize, x: &Point3<f64>) -> f64 {
        let (c, r) = &self.blobs[n];
        let d2 = (x.coords - c).norm_squared();
        let cutoff = self.spec.truncation * r;
        if d2 > cutoff * cutoff {
            0.0
        } else {
            self.spec.peak_density * (-d2 / (2.0 * r * r)).exp()
        }
    }

    /// Whether the line through `origin` along unit `dir` enters region `n`'s support.
    fn line_hits(&self, n: usize, origin: &Point3<f64>, dir: &Vector3<f64>) -> bool {
        let (c, r) = &self.blobs[n];
        let to_center = c - origin.coords;
        let along = to_center.dot(dir);
        let cutoff = self.spec.truncation * r;
        to_center.norm_squared() - along * along <= cutoff * cutoff * (1.0 + 1e-9)
    }

    /// `(density, color, region label)`; the label is the dominant region, or
    /// 0 where every region's density is below the label threshold.
    pub fn eval(&self, x: &Point3<f64>) -> (f64, [f64; 3], usize) {
        let parts = self.region_densities(x);
        let sigma: f64 = parts.iter().sum();
        let mut color = [0.0; 3];
        let mut label = 0;
        let mut best = LABEL_THRESHOLD;
        for (n, &s) in parts.iter().enumerate() {
            if sigma > 0.0 {
                for (c, v) in color.iter_mut().zip(self.spec.regions[n].color) {
                    *c += s / sigma * v;
                }
            }
            if s > best {
                best = s;
                label = n + 1;
            }
        }
        (sigma, color, label)
    }
}

pub fn analytic_field(spec: &BlobSceneSpec, alphas: &[f64], x: &Point3<f64>) -> (f64, [f64; 3], usize) {
    AnalyticField::new(spec, alphas).eval(x)
}

/// Renders the analytic scene with the deterministic (linspace) quadrature.
/// Mask channel 0 is unused background weight and channel `n` holds the
/// weight contributed by region `n`.
pub fn render_analytic(spec: &BlobSceneSpec, alphas: &[f64], camera: &CameraModel) -> RenderedImage {
    let field = AnalyticField::new(spec, alphas);
    let channels = spec.region_count() + 1;
    let mut img = RenderedImage::new(camera.width, camera.height, channels);
    let rays = generate_rays(camera, &all_pixels(camera.width, camera.height));
    let depths = linspace(camera.near, camera.far, spec.render_samples);
    let deltas = intervals(&depths, camera.far);
    let mut parts = vec![0.0; spec.region_count()];
    for (p, ray) in rays.iter().enumerate() {
        let hit: Vec<usize> = (0..parts.len())
            .filter(|&n| field.line_hits(n, &ray.origin, &ray.direction))
            .collect();
        if hit.is_empty() {
            continue;
        }
        let mut samples = Vec::with_capacity(depths.len());
        for (&t, &delta) in depths.iter().zip(&deltas) {
            let x = ray.at(t);
            for (n, slot) in parts.iter_mut().enumerate() {
                *slot = if hit.contains(&n) { field.density_of(n, &x) } else { 0.0 };
            }
            let sigma: f64 = parts.iter().sum();
            let mut color = [0.0; 3];
            let mut masks = vec![0.0; channels];
            if sigma > 0.0 {
                for (n, &s) in parts.iter().enumerate() {
                    for (c, v) in color.iter_mut().zip(spec.regions[n].color) {
                        *c += s / sigma * v;
                    }
                    masks[n + 1] = s / sigma;
                }
            }
            samples.push(RaySample { depth: t, interval: delta, density: sigma, color, masks });
        }
        let comp = composite_color(&samples);
        for c in 0..3 {
            img.color[3 * p + c] = comp.color[c] as f32;
        }
        img.opacity[p] = comp.opacity as f32;
        img.depth[p] = comp.depth as f32;
        for (s, &w) in samples.iter().zip(&comp.weights) {
            for (k, m) in s.masks.iter().enumerate() {
                img.masks[p * channels + k] += (w * m) as f32;
            }
        }
    }
    img
}

/// Per-pixel label of the region contributing the most accumulated weight,
/// 0 where no region exceeds the label threshold.
pub fn analytic_labels(img: &RenderedImage) -> Vec<u8> {
    (0..img.pixel_count())
        .map(|p| {
            let m = img.mask(p);
            let mut label = 0;
            let mut best = LABEL_THRESHOLD as f32;
            for (k, &v) in m.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    label = k as u8;
                }
            }
            label
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scene_is_valid() {
        let spec = BlobSceneSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.attribute_count(), 6);
        assert_eq!(spec.topology().unwrap().attributes_of(2), vec![2, 3]);
    }

    #[test]
    fn overlapping_regions_are_rejected() {
        let mut spec = BlobSceneSpec::default();
        spec.regions[1].center = [0.0, 0.5, 0.0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn far_point_is_empty_and_zero_is_base() {
        let spec = BlobSceneSpec::default();
        assert_eq!(analytic_field(&spec, &[0.0; 6], &Point3::new(3.0, 3.0, 3.0)).0, 0.0);
        let base = spec.configure(&[0.0; 6]);
        for (b, r) in base.iter().zip(&spec.regions) {
            assert_eq!(b.1, r.radius);
            assert_eq!(b.0, Vector3::from(r.center));
        }
    }

    #[test]
    fn radius_gain_at_full_intensity() {
        let spec = BlobSceneSpec::default();
        let cfg = spec.configure(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((cfg[0].1 - 0.1 * 1.3).abs() < 1e-15);
        let c = spec.regions[0].center;
        let (sigma, color, label) = analytic_field(&spec, &[0.0; 6], &Point3::from(c));
        assert_eq!((sigma, label), (30.0, 1));
        assert_eq!(color, [0.85, 0.0, 0.0]);
    }

    #[test]
    fn render_is_deterministic_and_covers_all_regions() {
        let spec = BlobSceneSpec::default();
        let cam = spec.orbit.frame_camera(0).unwrap();
        let a = render_analytic(&spec, &[0.0; 6], &cam);
        let b = render_analytic(&spec, &[0.0; 6], &cam);
        assert_eq!(a, b);
        let labels = analytic_labels(&a);
        for r in 1..=3u8 {
            let n = labels.iter().filter(|&&l| l == r).count();
            assert!(n > 40, "region {r} covers {n} px");
        }
    }
}
