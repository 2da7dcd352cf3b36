use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera with OpenCV axes (x right, y down, z forward) and
/// world-from-camera extrinsics. Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`
/// and its ray passes through the pixel center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "CameraRecord", try_from = "CameraRecord")]
pub struct CameraModel {
    pub intrinsics: Matrix3<f64>,
    pub world_from_camera: Matrix4<f64>,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

/// Row-major serialized form.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct CameraRecord {
    intrinsics: [[f64; 3]; 3],
    world_from_camera: [[f64; 4]; 4],
    width: usize,
    height: usize,
    near: f64,
    far: f64,
}

impl From<CameraModel> for CameraRecord {
    fn from(c: CameraModel) -> Self {
        Self {
            intrinsics: std::array::from_fn(|r| std::array::from_fn(|k| c.intrinsics[(r, k)])),
            world_from_camera: std::array::from_fn(|r| std::array::from_fn(|k| c.world_from_camera[(r, k)])),
            width: c.width,
            height: c.height,
            near: c.near,
            far: c.far,
        }
    }
}

impl TryFrom<CameraRecord> for CameraModel {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        CameraModel::new(
            Matrix3::from_fn(|i, j| r.intrinsics[i][j]),
            Matrix4::from_fn(|i, j| r.world_from_camera[i][j]),
            r.width,
            r.height,
            r.near,
            r.far,
        )
    }
}

impl CameraModel {
    pub fn new(
        intrinsics: Matrix3<f64>,
        world_from_camera: Matrix4<f64>,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Self {
            intrinsics,
            world_from_camera,
            width,
            height,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `radius` from `target`, `azimuth` around +y (0 looks along -z),
    /// raised by `elevation` (radians), square image with horizontal field of
    /// view `fov_x` (radians).
    #[allow(clippy::too_many_arguments)]
    pub fn orbit(
        azimuth: f64,
        elevation: f64,
        radius: f64,
        target: Vector3<f64>,
        width: usize,
        height: usize,
        fov_x: f64,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let eye = target
            + radius
                * Vector3::new(
                    azimuth.sin() * elevation.cos(),
                    elevation.sin(),
                    azimuth.cos() * elevation.cos(),
                );
        let forward = (target - eye).normalize();
        let right = forward.cross(&Vector3::y()).normalize();
        let down = forward.cross(&right);
        let mut pose = Matrix4::identity();
        pose.fixed_view_mut::<3, 1>(0, 0).copy_from(&right);
        pose.fixed_view_mut::<3, 1>(0, 1).copy_from(&down);
        pose.fixed_view_mut::<3, 1>(0, 2).copy_from(&forward);
        pose.fixed_view_mut::<3, 1>(0, 3).copy_from(&eye);
        let focal = 0.5 * width as f64 / (0.5 * fov_x).tan();
        let k = Matrix3::new(
            focal,
            0.0,
            0.5 * width as f64,
            0.0,
            focal,
            0.5 * height as f64,
            0.0,
            0.0,
            1.0,
        );
        Self::new(k, pose, width, height, near, far)
    }

    pub fn validate(&self) -> Result<()> {
        let (fx, fy) = (self.intrinsics[(0, 0)], self.intrinsics[(1, 1)]);
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Validation(format!("focal lengths must be positive: {fx}, {fy}")));
        }
        if !(self.far > self.near && self.near > 0.0) {
            return Err(Error::Validation(format!(
                "bounds need far > near > 0, got near {} far {}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("image dims must be positive".into()));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-6 {
            return Err(Error::Validation(format!(
                "pose rotation is not orthonormal (max deviation {err:.2e})"
            )));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_from_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn center(&self) -> Vector3<f64> {
        self.world_from_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Unit world-space direction through the center of pixel `(x, y)`.
    pub fn pixel_direction(&self, x: f64, y: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        let cam = Vector3::new(
            (x + 0.5 - k[(0, 2)]) / k[(0, 0)],
            (y + 0.5 - k[(1, 2)]) / k[(1, 1)],
            1.0,
        );
        (self.rotation() * cam).normalize()
    }

    /// Continuous pixel coordinates of a world point (pixel centers land on
    /// integers) and its camera-space depth.
    pub fn project(&self, p: &Point3<f64>) -> (f64, f64, f64) {
        let local = self.rotation().transpose() * (p.coords - self.center());
        let k = &self.intrinsics;
        let u = k[(0, 0)] * local.x / local.z + k[(0, 2)] - 0.5;
        let v = k[(1, 1)] * local.y / local.z + k[(1, 2)] - 0.5;
        (u, v, local.z)
    }

    /// Same camera at a different resolution (intrinsics rescaled).
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let mut out = self.clone();
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        out.intrinsics[(0, 0)] *= sx;
        out.intrinsics[(0, 2)] *= sx;
        out.intrinsics[(1, 1)] *= sy;
        out.intrinsics[(1, 2)] *= sy;
        out.width = width;
        out.height = height;
        out
    }
}
