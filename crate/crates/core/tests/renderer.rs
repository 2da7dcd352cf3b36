//! Image rendering of fields and of the analytic scene.

mod common;

use common::{randomize, tiny_config};
use confies_core::field::{QueryMode, SceneField};
use confies_core::render::{render_image, RenderOptions, RenderedImage};
use confies_core::synthetic::{render_analytic, BlobSceneSpec};
use nalgebra::Point3;

fn field() -> SceneField<f32> {
    let mut f = SceneField::<f32>::new(tiny_config(4), 8).unwrap();
    randomize(&mut f, 8, 0.4);
    f
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn renders_are_bit_identical_for_equal_inputs() {
    let f = field();
    let camera = BlobSceneSpec::default().orbit.frame_camera(2).unwrap().resized(12, 12);
    let mode = QueryMode::Control { alpha: vec![0.3, -0.2, 0.0, 0.9, -1.0, 0.5] };
    for stratified in [false, true] {
        let options = RenderOptions { samples: 16, chunk_rays: 40, stratified, seed: 5 };
        let a = render_image(&f, &camera, &mode, &options).unwrap();
        let b = render_image(&f, &camera, &mode, &options).unwrap();
        assert_eq!(bits(&a.color), bits(&b.color));
        assert_eq!(bits(&a.masks), bits(&b.masks));
        assert_eq!(bits(&a.depth), bits(&b.depth));
    }
    let a = render_image(&f, &camera, &mode, &RenderOptions { samples: 16, stratified: true, seed: 1, ..Default::default() }).unwrap();
    let b = render_image(&f, &camera, &mode, &RenderOptions { samples: 16, stratified: true, seed: 2, ..Default::default() }).unwrap();
    assert_ne!(bits(&a.color), bits(&b.color));
}

#[test]
fn chunking_does_not_change_the_image() {
    let f = field();
    let camera = BlobSceneSpec::default().orbit.frame_camera(5).unwrap().resized(10, 10);
    let mode = QueryMode::Control { alpha: vec![0.0; 6] };
    let a = render_image(&f, &camera, &mode, &RenderOptions { samples: 12, chunk_rays: 7, ..Default::default() }).unwrap();
    let b = render_image(&f, &camera, &mode, &RenderOptions { samples: 12, chunk_rays: 100, ..Default::default() }).unwrap();
    for (x, y) in a.color.iter().zip(&b.color) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn field_masks_share_the_color_weights() {
    let f = field();
    let camera = BlobSceneSpec::default().orbit.frame_camera(0).unwrap().resized(10, 10);
    let img = render_image(&f, &camera, &QueryMode::Control { alpha: vec![0.5; 6] }, &RenderOptions { samples: 24, ..Default::default() }).unwrap();
    for p in 0..img.pixel_count() {
        let o = img.opacity[p];
        assert!((0.0..=1.0 + 1e-6).contains(&o));
        let sum: f32 = img.mask(p).iter().sum();
        assert!((sum - o).abs() < 1e-5, "pixel {p}: {sum} vs {o}");
    }
    let depth_ok = img.depth.iter().all(|&d| d == 0.0 || (camera.near as f32 - 1e-4..=camera.far as f32 + 1e-4).contains(&d));
    assert!(depth_ok);
}

fn mask_centroid(img: &RenderedImage, channel: usize) -> [f64; 2] {
    let (mut m, mut x, mut y) = (0.0, 0.0, 0.0);
    for p in 0..img.pixel_count() {
        let v = img.mask(p)[channel] as f64;
        m += v;
        x += v * (p % img.width) as f64;
        y += v * (p / img.width) as f64;
    }
    [x / m, y / m]
}

#[test]
fn region_masks_follow_the_camera() {
    let spec = BlobSceneSpec::default();
    let alphas = vec![0.0; 6];
    for frame in [0, 17, 40, 77] {
        let camera = spec.orbit.frame_camera(frame).unwrap();
        let img = render_analytic(&spec, &alphas, &camera);
        for (n, region) in spec.regions.iter().enumerate() {
            let c = mask_centroid(&img, n + 1);
            let (u, v, _) = camera.project(&Point3::from(region.center));
            let err = (c[0] - u).hypot(c[1] - v);
            assert!(err < 2.0, "frame {frame} region {}: {err} px", n + 1);
        }
    }
}

#[test]
fn doubling_samples_barely_changes_the_analytic_image() {
    let mut spec = BlobSceneSpec::default();
    let camera = spec.orbit.frame_camera(9).unwrap();
    let alphas = vec![0.4, -0.3, 0.8, 0.0, -0.6, 0.2];
    spec.render_samples = 256;
    let coarse = render_analytic(&spec, &alphas, &camera);
    spec.render_samples = 512;
    let fine = render_analytic(&spec, &alphas, &camera);
    let diff: f64 = coarse.color.iter().zip(&fine.color).map(|(a, b)| (a - b).abs() as f64).sum();
    let total: f64 = fine.color.iter().map(|v| v.abs() as f64).sum();
    assert!(diff / total < 0.01, "relative change {}", diff / total);
}
