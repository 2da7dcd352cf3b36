#![allow(dead_code)]

use std::path::{Path, PathBuf};

use confies_core::field::{save_checkpoint, CheckpointMeta, FieldConfig, NetShape, SceneField};
use confies_core::synthetic::BlobSceneSpec;

/// Small synthetic-scene field, written as `model.cnfs` under `dir`.
pub fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let spec = BlobSceneSpec::default();
    let mut config = FieldConfig::desk(spec.topology().unwrap(), 4);
    config.position_frequencies = 3;
    config.attribute_net = NetShape::new(&[8, 8], None);
    config.deformation_net = NetShape::new(&[8], None);
    config.slicing_net = NetShape::new(&[8], None);
    config.mask_net = NetShape::new(&[8], None);
    config.uncertainty_net = NetShape::new(&[8], None);
    config.template_net = NetShape::new(&[16, 16], None);
    config.color_width = 8;
    let field = SceneField::<f32>::new(config, 5).unwrap();
    let meta = CheckpointMeta {
        config: field.config().clone(),
        attribute_names: spec.attribute_names(),
        normalization: None,
        reference_omega: field.reference_omega.clone(),
        reference_psi: field.reference_psi.clone(),
        reference_camera: Some(spec.orbit.frame_camera(0).unwrap()),
        scene: Some(spec),
        step: 0,
    };
    let path = dir.join("model.cnfs");
    save_checkpoint(&field, &meta, &path).unwrap();
    path
}
