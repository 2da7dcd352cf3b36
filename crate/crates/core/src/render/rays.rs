use nalgebra::{Point3, Vector3};
use rand::Rng;

use super::CameraModel;

#[derive(Clone, Debug, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Vector3<f64>,
    pub near: f64,
    pub far: f64,
    pub pixel: (usize, usize),
}

impl Ray {
    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.direction * t
    }
}

/// One ray per requested pixel `(x, y)`, through the pixel center.
pub fn generate_rays(camera: &CameraModel, pixels: &[(usize, usize)]) -> Vec<Ray> {
    let origin = Point3::from(camera.center());
    pixels
        .iter()
        .map(|&(x, y)| {
            debug_assert!(x < camera.width && y < camera.height, "pixel outside image");
            Ray {
                origin,
                direction: camera.pixel_direction(x as f64, y as f64),
                near: camera.near,
                far: camera.far,
                pixel: (x, y),
            }
        })
        .collect()
}

/// Every pixel in row-major order.
pub fn all_pixels(width: usize, height: usize) -> Vec<(usize, usize)> {
    (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).collect()
}

/// `count` depths in `[near, far]`. Without stratification this is the
/// inclusive linspace; with it, one uniform draw inside each of `count`
/// equal bins.
pub fn sample_along_ray<R: Rng>(
    near: f64,
    far: f64,
    count: usize,
    stratified: bool,
    rng: &mut R,
) -> Vec<f64> {
    assert!(count >= 2, "need at least two samples per ray");
    if stratified {
        let width = (far - near) / count as f64;
        (0..count)
            .map(|k| near + (k as f64 + rng.gen::<f64>()) * width)
            .collect()
    } else {
        linspace(near, far, count)
    }
}

/// Inclusive evenly spaced depths.
pub fn linspace(near: f64, far: f64, count: usize) -> Vec<f64> {
    let step = (far - near) / (count - 1) as f64;
    (0..count)
        .map(|k| if k + 1 == count { far } else { near + k as f64 * step })
        .collect()
}

/// Quadrature intervals `t_{k+1} - t_k`, with the last interval running to `far`.
pub fn intervals(depths: &[f64], far: f64) -> Vec<f64> {
    let n = depths.len();
    (0..n)
        .map(|k| if k + 1 < n { depths[k + 1] - depths[k] } else { far - depths[k] })
        .collect()
}
