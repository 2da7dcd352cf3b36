use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::normalize::Normalization;
use super::regions::RegionTopology;
use crate::error::{Error, Result};
use crate::render::CameraModel;
use crate::synthetic::BlobSceneSpec;

pub const MANIFEST_VERSION: u32 = 1;

/// One training observation. Paths are relative to the manifest's directory
/// unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub latent_index: usize,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub camera: CameraModel,
    pub attributes: Vec<f64>,
    pub supervised: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(default)]
    pub synthetic: bool,
    pub attribute_names: Vec<String>,
    pub topology: RegionTopology,
    pub normalization: Option<Normalization>,
    pub frames: Vec<FrameRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<BlobSceneSpec>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn attribute_count(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn latent_count(&self) -> usize {
        self.frames.iter().map(|f| f.latent_index + 1).max().unwrap_or(0)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.root.join(path)
    }

    /// Range and shape checks that do not touch the filesystem.
    pub fn validate_contents(&self) -> Result<()> {
        self.topology.validate()?;
        let k = self.attribute_count();
        if self.topology.attribute_count() != k {
            return Err(Error::Validation(format!(
                "{k} attribute names but the topology maps {}",
                self.topology.attribute_count()
            )));
        }
        for f in &self.frames {
            if f.attributes.len() != k || f.supervised.len() != k {
                return Err(Error::Validation(format!("frame {} does not carry {k} attributes", f.index)));
            }
            if let Some(v) = f.attributes.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                return Err(Error::Validation(format!(
                    "frame {}: attribute value {v} outside [-1, 1]",
                    f.index
                )));
            }
            f.camera.validate()?;
        }
        Ok(())
    }

    pub fn missing_files(&self) -> Vec<PathBuf> {
        self.frames
            .iter()
            .flat_map(|f| std::iter::once(&f.image).chain(f.mask.as_ref()))
            .map(|p| self.resolve(p))
            .filter(|p| !p.is_file())
            .collect()
    }
}

pub fn write_dataset_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.validate_contents()?;
    std::fs::write(path, serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

pub fn read_dataset_manifest(path: &Path) -> Result<DatasetManifest> {
    let mut manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "manifest version {} is not supported (expected {MANIFEST_VERSION})",
            manifest.version
        )));
    }
    manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.validate_contents()?;
    let missing = manifest.missing_files();
    if !missing.is_empty() {
        return Err(Error::Integrity(missing));
    }
    Ok(manifest)
}
