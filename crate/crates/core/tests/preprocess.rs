//! Tracking CSV, images and poses through to a loadable training manifest.

mod common;

use common::preprocess_fixture;
use confies_core::facs::*;
use confies_core::train::{Holdout, TrainingSet};

fn config(budget: usize) -> PreprocessConfig {
    PreprocessConfig { budget, sg_window: 7, sg_order: 2, ..PreprocessConfig::default() }
}

#[test]
fn produces_a_loadable_balanced_dataset() {
    let dir = tempfile::tempdir().unwrap();
    preprocess_fixture(dir.path(), 60);
    let out = dir.path().join("out");
    let p = |n: &str| dir.path().join(n);
    let manifest = preprocess(&p("track.csv"), &p("frames"), &p("poses.json"), &config(20), &out).unwrap();
    assert_eq!(manifest.frames.len(), 20);
    assert_eq!(manifest.latent_count(), 20);
    assert_eq!(manifest.attribute_names.len(), 17);
    let norm = manifest.normalization.as_ref().unwrap();
    assert_eq!(norm.alpha, 0.8);
    for f in &manifest.frames {
        assert!(f.attributes.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(f.supervised[0] && !f.supervised[1]);
        let (_, _, labels) = confies_core::render::load_labels(&out.join(f.mask.as_ref().unwrap())).unwrap();
        for region in 1..=3 {
            assert!(labels.contains(&region));
        }
    }
    let reread = read_dataset_manifest(&out.join("manifest.json")).unwrap();
    assert_eq!(reread.frames, manifest.frames);
    let data = TrainingSet::load(&reread, Holdout::None).unwrap();
    assert_eq!(data.train.len(), 20);

    let again_dir = dir.path().join("again");
    let again = preprocess(&p("track.csv"), &p("frames"), &p("poses.json"), &config(20), &again_dir).unwrap();
    assert_eq!(
        std::fs::read(out.join("manifest.json")).unwrap(),
        std::fs::read(again_dir.join("manifest.json")).unwrap()
    );
    assert_eq!(again.frames, manifest.frames);
}

#[test]
fn missing_pose_or_image_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    preprocess_fixture(dir.path(), 30);
    let p = |n: &str| dir.path().join(n);
    std::fs::write(p("few.json"), "[]").unwrap();
    let err = preprocess(&p("track.csv"), &p("frames"), &p("few.json"), &config(10), &p("o1")).unwrap_err();
    assert!(err.to_string().contains("pose"), "{err}");
    for f in 0..30 {
        std::fs::remove_file(p(&format!("frames/{f:04}.png"))).unwrap();
    }
    let err = preprocess(&p("track.csv"), &p("frames"), &p("poses.json"), &config(10), &p("o2")).unwrap_err();
    assert!(matches!(err, confies_core::Error::Integrity(_)), "{err}");
}
