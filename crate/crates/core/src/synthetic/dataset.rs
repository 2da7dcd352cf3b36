use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::scene::{analytic_labels, render_analytic, BlobSceneSpec};
use crate::error::Result;
use crate::facs::{write_dataset_manifest, DatasetManifest, FrameRecord, MANIFEST_VERSION};
use crate::render::{save_labels, save_rgb};

/// Frames spent on each attribute's solo sweep.
pub const SOLO_FRAMES: usize = 16;
/// Spacing of the random waypoints after the solo sweeps.
pub const WAYPOINT_SPACING: usize = 4;

fn triangle(t: usize) -> f64 {
    // 0 -> 1 -> -1 -> 0 over SOLO_FRAMES frames, corners on frames 4 and 12.
    let q = SOLO_FRAMES as f64 / 4.0;
    let t = t as f64;
    if t <= q {
        t / q
    } else if t <= 3.0 * q {
        1.0 - (t - q) / q
    } else {
        -1.0 + (t - 3.0 * q) / q
    }
}

/// Attribute values per frame: one solo sweep per attribute, then random
/// joint configurations linearly interpolated between waypoints, held
/// after the last one.
pub fn attribute_trajectory(attributes: usize, frames: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; attributes]; frames];
    let solo_end = (attributes * SOLO_FRAMES).min(frames);
    for (f, row) in out.iter_mut().enumerate().take(solo_end) {
        row[f / SOLO_FRAMES] = triangle(f % SOLO_FRAMES);
    }
    if solo_end == frames {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // The sweeps end at the neutral configuration, which is the first waypoint.
    let mut waypoints: Vec<(usize, Vec<f64>)> = vec![(solo_end, vec![0.0; attributes])];
    let mut f = solo_end + WAYPOINT_SPACING;
    while f < frames {
        waypoints.push((f, (0..attributes).map(|_| rng.gen_range(-1.0..=1.0)).collect()));
        f += WAYPOINT_SPACING;
    }
    for (f, row) in out.iter_mut().enumerate().skip(solo_end) {
        let i = (f - solo_end) / WAYPOINT_SPACING;
        let (f0, a) = &waypoints[i];
        *row = match waypoints.get(i + 1) {
            Some((f1, b)) => {
                let t = (f - f0) as f64 / (f1 - f0) as f64;
                a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
            }
            None => a.clone(),
        };
    }
    out
}

/// Renders every orbit frame, writes `images/`, `masks/` and
/// `manifest.json` under `out_dir`, and returns the manifest.
pub fn generate_dataset(spec: &BlobSceneSpec, out_dir: &Path, seed: u64) -> Result<DatasetManifest> {
    spec.validate()?;
    let topology = spec.topology()?;
    let frames = spec.orbit.frames;
    let trajectory = attribute_trajectory(spec.attribute_count(), frames, seed);
    std::fs::create_dir_all(out_dir.join("images"))?;
    std::fs::create_dir_all(out_dir.join("masks"))?;
    let records: Vec<FrameRecord> = (0..frames)
        .into_par_iter()
        .map(|f| -> Result<FrameRecord> {
            let camera = spec.orbit.frame_camera(f)?;
            let img = render_analytic(spec, &trajectory[f], &camera);
            let image = PathBuf::from(format!("images/{f:04}.png"));
            let mask = PathBuf::from(format!("masks/{f:04}.png"));
            save_rgb(&out_dir.join(&image), img.width, img.height, &img.color)?;
            save_labels(&out_dir.join(&mask), img.width, img.height, &analytic_labels(&img))?;
            Ok(FrameRecord {
                index: f,
                latent_index: f,
                image,
                mask: Some(mask),
                camera,
                attributes: trajectory[f].clone(),
                supervised: vec![true; spec.attribute_count()],
            })
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        synthetic: true,
        attribute_names: spec.attribute_names(),
        topology,
        normalization: None,
        frames: records,
        scene: Some(spec.clone()),
        root: out_dir.to_path_buf(),
    };
    write_dataset_manifest(&manifest, &out_dir.join("manifest.json"))?;
    Ok(manifest)
}
