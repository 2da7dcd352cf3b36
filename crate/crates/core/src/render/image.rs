use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rendered color, opacity, expected depth and `mask_channels` mask
/// channels per pixel, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub color: Vec<f32>,
    pub opacity: Vec<f32>,
    pub depth: Vec<f32>,
    pub masks: Vec<f32>,
    pub mask_channels: usize,
}

/// Depth range stored next to a 16-bit depth PNG: `value = min + q/65535 (max - min)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min: f32,
    pub max: f32,
}

const REGION_PALETTE: [[f32; 3]; 6] = [
    [0.0, 0.0, 0.0],
    [0.95, 0.35, 0.25],
    [0.3, 0.8, 0.35],
    [0.25, 0.45, 0.95],
    [0.9, 0.8, 0.2],
    [0.7, 0.3, 0.85],
];

impl RenderedImage {
    pub fn new(width: usize, height: usize, mask_channels: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![0.0; 3 * n],
            opacity: vec![0.0; n],
            depth: vec![0.0; n],
            masks: vec![0.0; mask_channels * n],
            mask_channels,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn rgb(&self, pixel: usize) -> [f32; 3] {
        [self.color[3 * pixel], self.color[3 * pixel + 1], self.color[3 * pixel + 2]]
    }

    pub fn mask(&self, pixel: usize) -> &[f32] {
        &self.masks[pixel * self.mask_channels..(pixel + 1) * self.mask_channels]
    }

    /// Color composited over a solid background.
    pub fn over_background(&self, background: [f32; 3]) -> Vec<f32> {
        let mut out = self.color.clone();
        for (p, &a) in self.opacity.iter().enumerate() {
            for c in 0..3 {
                out[3 * p + c] += (1.0 - a) * background[c];
            }
        }
        out
    }

    /// Index of the largest mask channel per pixel; pixels with no opacity get 0.
    pub fn mask_labels(&self) -> Vec<u8> {
        (0..self.pixel_count())
            .map(|p| {
                if self.opacity[p] <= 1e-4 {
                    return 0;
                }
                let m = self.mask(p);
                let mut best = 0;
                for (k, &v) in m.iter().enumerate() {
                    if v > m[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect()
    }

    pub fn color_png(&self, background: [f32; 3]) -> Result<Vec<u8>> {
        encode_rgb(self.width, self.height, &self.over_background(background))
    }

    /// Mask channels blended with a fixed per-region palette.
    pub fn mask_png(&self) -> Result<Vec<u8>> {
        let mut rgb = vec![0.0; 3 * self.pixel_count()];
        for p in 0..self.pixel_count() {
            for (k, &m) in self.mask(p).iter().enumerate() {
                let col = REGION_PALETTE[k % REGION_PALETTE.len()];
                for c in 0..3 {
                    rgb[3 * p + c] += m * col[c];
                }
            }
        }
        encode_rgb(self.width, self.height, &rgb)
    }

    pub fn depth_png(&self) -> Result<(Vec<u8>, DepthRange)> {
        let hit: Vec<f32> = self
            .depth
            .iter()
            .zip(&self.opacity)
            .filter(|(_, &a)| a > 1e-4)
            .map(|(&d, _)| d)
            .collect();
        let min = hit.iter().copied().fold(f32::INFINITY, f32::min);
        let max = hit.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let range = if min.is_finite() { DepthRange { min, max } } else { DepthRange { min: 0.0, max: 0.0 } };
        let span = (range.max - range.min).max(f32::EPSILON);
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = y as usize * self.width + x as usize;
            if self.opacity[p] <= 1e-4 {
                return Luma([0]);
            }
            let q = ((self.depth[p] - range.min) / span).clamp(0.0, 1.0);
            Luma([(q * 65535.0).round() as u16])
        });
        Ok((encode(img)?, range))
    }

    /// Writes `<stem>_color.png`, `<stem>_depth.png` with its JSON range
    /// sidecar, and one grayscale `<stem>_mask<n>.png` per mask channel.
    pub fn write_all(&self, dir: &Path, stem: &str, background: [f32; 3]) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, bytes: &[u8]| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, bytes)?;
            written.push(path);
            Ok(())
        };
        put(format!("{stem}_color.png"), &self.color_png(background)?)?;
        let (depth, range) = self.depth_png()?;
        put(format!("{stem}_depth.png"), &depth)?;
        put(format!("{stem}_depth.json"), serde_json::to_string_pretty(&range)?.as_bytes())?;
        for k in 0..self.mask_channels {
            let img: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
                    let p = y as usize * self.width + x as usize;
                    Luma([to_u8(self.masks[p * self.mask_channels + k])])
                });
            put(format!("{stem}_mask{k}.png"), &encode(img)?)?;
        }
        Ok(written)
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_rgb(width: usize, height: usize, rgb: &[f32]) -> Result<Vec<u8>> {
    let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        let p = 3 * (y as usize * width + x as usize);
        Rgb([to_u8(rgb[p]), to_u8(rgb[p + 1]), to_u8(rgb[p + 2])])
    });
    encode(img)
}

fn encode<P, C>(img: ImageBuffer<P, C>) -> Result<Vec<u8>>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// RGB image as `[0,1]` floats, row-major.
pub fn load_rgb(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()))
}

pub fn save_rgb(path: &Path, width: usize, height: usize, rgb: &[f32]) -> Result<()> {
    std::fs::write(path, encode_rgb(width, height, rgb)?)?;
    Ok(())
}

/// Single-channel label image.
pub fn load_labels(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.into_raw()))
}

pub fn save_labels(path: &Path, width: usize, height: usize, labels: &[u8]) -> Result<()> {
    if labels.len() != width * height {
        return Err(Error::dimension("label image", width * height, labels.len()));
    }
    let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(width as u32, height as u32, labels.to_vec())
        .ok_or_else(|| Error::Format("label buffer does not match dims".into()))?;
    std::fs::write(path, encode(img)?)?;
    Ok(())
}
