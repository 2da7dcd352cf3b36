use confies_core::facs::{balanced_sample, block_imbalance, read_dataset_manifest, uniform_sample, Quantizer};
use confies_core::render::load_rgb;
use confies_core::synthetic::{analytic_labels, generate_dataset, render_analytic, BlobSceneSpec, Oracle};

fn solo(k: usize, a: usize, v: f64) -> Vec<f64> {
    let mut alphas = vec![0.0; k];
    alphas[a] = v;
    alphas
}

#[test]
fn oracle_recovers_solo_ramps() {
    let spec = BlobSceneSpec::default();
    let k = spec.attribute_count();
    for azimuth in [0.0, 0.6] {
        let cam = spec.orbit.camera(azimuth).unwrap();
        let oracle = Oracle::calibrate(&spec, &cam).unwrap();
        for a in 0..k {
            let mut previous = f64::NEG_INFINITY;
            for i in 0..11 {
                // Off-grid values so the check is not just the calibration points.
                let v = (-1.0 + 0.2 * i as f64 + 0.037).clamp(-1.0, 1.0);
                let img = render_analytic(&spec, &solo(k, a, v), &cam);
                let m = oracle.measure(&img);
                let est = m[a].expect("region visible");
                assert!((est - v).abs() < 0.05, "attr {a} at {v}: measured {est}");
                assert!(est > previous, "attr {a} response not increasing");
                previous = est;
            }
        }
    }
}

fn dilate(mask: &[bool], w: usize, h: usize, r: isize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !mask[(y * w as isize + x) as usize] {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize {
                        out[(ny * w as isize + nx) as usize] = true;
                    }
                }
            }
        }
    }
    out
}

#[test]
fn attributes_only_touch_their_own_region() {
    let spec = BlobSceneSpec::default();
    let topo = spec.topology().unwrap();
    let k = spec.attribute_count();
    for f in (0..spec.orbit.frames).step_by(5) {
        let cam = spec.orbit.frame_camera(f).unwrap();
        for a in 0..k {
            let lo = render_analytic(&spec, &solo(k, a, -1.0), &cam);
            let hi = render_analytic(&spec, &solo(k, a, 1.0), &cam);
            let region = topo.region_of(a) as u8;
            let union: Vec<bool> = analytic_labels(&lo)
                .iter()
                .zip(analytic_labels(&hi))
                .map(|(&x, y)| x == region || y == region)
                .collect();
            let near = dilate(&union, cam.width, cam.height, 2);
            for p in 0..lo.pixel_count() {
                if !near[p] {
                    assert_eq!(lo.rgb(p), hi.rgb(p), "frame {f} attr {a} pixel {p}");
                }
            }
        }
    }
}

#[test]
fn generated_dataset_round_trips_and_balances() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = BlobSceneSpec::default();
    spec.orbit.width = 24;
    spec.orbit.height = 24;
    let manifest = generate_dataset(&spec, dir.path(), 5).unwrap();
    let back = read_dataset_manifest(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(back, manifest);
    assert!(back.synthetic && back.scene.is_some());

    // A neutral frame reproduces the base render.
    let neutral = back.frames.iter().find(|f| f.attributes.iter().all(|&v| v == 0.0)).unwrap();
    let base = render_analytic(&spec, &[0.0; 6], &neutral.camera);
    let (_, _, pixels) = load_rgb(&back.resolve(&neutral.image)).unwrap();
    for (a, b) in pixels.iter().zip(&base.color) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
    }

    let tracks: Vec<Vec<f64>> = back.frames.iter().map(|f| f.attributes.clone()).collect();
    let q = Quantizer { lo: -1.0, hi: 1.0, levels: 6 };
    let balanced = balanced_sample(&tracks, 40, q, 1);
    let uniform = uniform_sample(tracks.len(), 40);
    assert!(block_imbalance(&tracks, &balanced, q) < block_imbalance(&tracks, &uniform, q));
}

#[test]
fn manifest_integrity_and_range_checks() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = BlobSceneSpec::default();
    spec.orbit.frames = 8;
    spec.orbit.width = 8;
    spec.orbit.height = 8;
    let mut manifest = generate_dataset(&spec, dir.path(), 1).unwrap();
    let path = dir.path().join("manifest.json");

    std::fs::remove_file(dir.path().join("images/0003.png")).unwrap();
    match read_dataset_manifest(&path) {
        Err(confies_core::Error::Integrity(missing)) => {
            assert_eq!(missing.len(), 1);
            assert!(missing[0].ends_with("images/0003.png"));
        }
        other => panic!("expected integrity error, got {other:?}"),
    }

    manifest.frames[0].attributes[0] = 1.2;
    let text = serde_json::to_string(&manifest).unwrap();
    std::fs::write(&path, text).unwrap();
    assert!(matches!(read_dataset_manifest(&path), Err(confies_core::Error::Validation(_))));
}
