use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::{Matrix3, Matrix4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{write_dataset_manifest, DatasetManifest, FrameRecord, MANIFEST_VERSION};
use super::normalize::{Normalization, DEFAULT_ALPHA};
use super::regions::{build_region_masks, RegionTopology};
use super::sampling::{balanced_sample, Quantizer};
use super::savgol::smooth_au_tracks;
use super::tracking::{ingest_tracking_csv, AU_NAMES};
use crate::error::{Error, Result};
use crate::render::{save_labels, CameraModel};

/// One entry of the pose file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame: usize,
    pub intrinsics: [[f64; 3]; 3],
    pub world_from_camera: [[f64; 4]; 4],
    #[serde(default)]
    pub near: Option<f64>,
    #[serde(default)]
    pub far: Option<f64>,
}

pub fn read_poses(path: &Path) -> Result<Vec<PoseRecord>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub budget: usize,
    pub alpha: f64,
    pub sg_window: usize,
    pub sg_order: usize,
    pub seed: u64,
    /// Depth bounds for poses that do not carry their own.
    pub near: f64,
    pub far: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            budget: 750,
            alpha: DEFAULT_ALPHA,
            sg_window: 31,
            sg_order: 3,
            seed: 0,
            near: 0.1,
            far: 2.0,
        }
    }
}

/// Image of `frame` under `dir`: `0042.png`, `42.png` or `frame_0042.png`.
pub fn frame_image(dir: &Path, frame: usize) -> Option<PathBuf> {
    [format!("{frame:04}.png"), format!("{frame}.png"), format!("frame_{frame:04}.png")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
}

/// Tracking CSV, frame images and camera poses to a training dataset under
/// `out_dir`: AU tracks are smoothed, normalization constants are fitted on
/// all frames, a balanced subset is selected, and each selected frame gets a
/// copied image and a region mask. Attributes are the 17 tracked AUs.
pub fn preprocess(
    csv: &Path,
    images: &Path,
    poses: &Path,
    config: &PreprocessConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let log = ingest_tracking_csv(csv)?;
    if log.frames.is_empty() {
        return Err(Error::EmptyDataset("every tracking row failed detection".into()));
    }
    let frames = smooth_au_tracks(&log.frames, config.sg_window, config.sg_order)?;
    let tracks: Vec<Vec<f64>> = frames.iter().map(|f| f.au.to_vec()).collect();
    let normalization = Normalization::fit(&tracks, config.alpha)?;
    let usable: Vec<bool> = (0..AU_NAMES.len()).map(|a| normalization.is_usable(a)).collect();
    for (a, ok) in usable.iter().enumerate() {
        if !ok {
            warn!("{} never varies; it is left unsupervised", AU_NAMES[a]);
        }
    }
    let selected = balanced_sample(&tracks, config.budget, Quantizer::AU, config.seed);
    info!("selected {} of {} frames", selected.len(), frames.len());

    let poses: HashMap<usize, PoseRecord> = read_poses(poses)?.into_iter().map(|p| (p.frame, p)).collect();
    let topology = RegionTopology::face();
    std::fs::create_dir_all(out_dir.join("images"))?;
    std::fs::create_dir_all(out_dir.join("masks"))?;
    let records = selected
        .par_iter()
        .enumerate()
        .map(|(latent, &i)| -> Result<FrameRecord> {
            let f = &frames[i];
            let source = frame_image(images, f.frame)
                .ok_or_else(|| Error::Integrity(vec![images.join(format!("{:04}.png", f.frame))]))?;
            let pose = poses
                .get(&f.frame)
                .ok_or_else(|| Error::Validation(format!("no camera pose for frame {}", f.frame)))?;
            let (width, height) = image::image_dimensions(&source)?;
            let (width, height) = (width as usize, height as usize);
            let camera = CameraModel::new(
                Matrix3::from_fn(|r, c| pose.intrinsics[r][c]),
                Matrix4::from_fn(|r, c| pose.world_from_camera[r][c]),
                width,
                height,
                pose.near.unwrap_or(config.near),
                pose.far.unwrap_or(config.far),
            )?;
            let mask = build_region_masks(&f.landmarks, width, height, &topology)?;
            let image = PathBuf::from(format!("images/{:04}.png", f.frame));
            let mask_path = PathBuf::from(format!("masks/{:04}.png", f.frame));
            std::fs::copy(&source, out_dir.join(&image))?;
            save_labels(&out_dir.join(&mask_path), width, height, &mask.labels)?;
            let attributes = (0..AU_NAMES.len()).map(|a| normalization.apply(a, f.au[a]).unwrap_or(0.0)).collect();
            Ok(FrameRecord {
                index: f.frame,
                latent_index: latent,
                image,
                mask: Some(mask_path),
                camera,
                attributes,
                supervised: usable.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        synthetic: false,
        attribute_names: AU_NAMES.iter().map(|s| s.to_string()).collect(),
        topology,
        normalization: Some(normalization),
        frames: records,
        scene: None,
        root: out_dir.to_path_buf(),
    };
    write_dataset_manifest(&manifest, &out_dir.join("manifest.json"))?;
    Ok(manifest)
}
