use confies_core::field::CheckpointMeta;
use confies_core::render::CameraModel;
use confies_core::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Orbit around a target that reproduces a checkpoint's default view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraDefaults {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
    pub target: [f64; 3],
    pub fov_x: f64,
    pub near: f64,
    pub far: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraDefaults {
    /// The synthetic orbit when the checkpoint carries its scene, otherwise
    /// an orbit through the reference camera around the middle of its depth
    /// range.
    pub fn from_meta(meta: &CheckpointMeta) -> Result<Self> {
        if let Some(scene) = &meta.scene {
            let o = &scene.orbit;
            return Ok(Self {
                azimuth: 0.0,
                elevation: o.elevation,
                radius: o.radius,
                target: [0.0; 3],
                fov_x: o.fov_x,
                near: o.near,
                far: o.far,
                width: o.width,
                height: o.height,
            });
        }
        let cam = meta
            .reference_camera
            .as_ref()
            .ok_or_else(|| Error::Validation("checkpoint has neither a scene nor a reference camera".into()))?;
        let center = cam.center();
        let forward = cam.rotation().column(2).into_owned();
        let radius = 0.5 * (cam.near + cam.far);
        let target = center + radius * forward;
        let offset = (center - target) / radius;
        Ok(Self {
            azimuth: offset.x.atan2(offset.z),
            elevation: offset.y.clamp(-1.0, 1.0).asin(),
            radius,
            target: [target.x, target.y, target.z],
            fov_x: 2.0 * (0.5 * cam.width as f64 / cam.intrinsics[(0, 0)]).atan(),
            near: cam.near,
            far: cam.far,
            width: cam.width,
            height: cam.height,
        })
    }

    /// Orbit camera; unset values come from the defaults. Depth bounds keep
    /// their distance from the orbit radius.
    pub fn orbit(
        &self,
        azimuth: Option<f64>,
        elevation: Option<f64>,
        radius: Option<f64>,
        width: usize,
        height: usize,
    ) -> Result<CameraModel> {
        let r = radius.unwrap_or(self.radius);
        let shift = r - self.radius;
        CameraModel::orbit(
            azimuth.unwrap_or(self.azimuth),
            elevation.unwrap_or(self.elevation),
            r,
            Vector3::from(self.target),
            width,
            height,
            self.fov_x,
            (self.near + shift).max(1e-3),
            self.far + shift,
        )
    }
}
