use std::collections::HashMap;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{icc, ms_ssim, psnr};
use crate::error::{Error, Result};
use crate::facs::{savgol_filter, Normalization};
use crate::field::{QueryMode, SceneField};
use crate::numerics::{DenseArray, Real, Tape};
use crate::render::{linspace, render_image, CameraModel, RenderOptions, RenderedImage};
use crate::synthetic::{analytic_labels, render_analytic, BlobSceneSpec, Oracle};
use crate::train::TrainFrame;

/// Default number of commanded values per attribute ramp.
pub const RAMP_POINTS: usize = 11;
/// Dilation, in pixels, of the ground-truth region masks used for leakage.
pub const MASK_DILATION: usize = 2;

/// Anything that renders an image from control attributes.
pub trait AttributeRenderer: Sync {
    fn attribute_count(&self) -> usize;
    fn render(&self, alpha: &[f64], camera: &CameraModel) -> Result<RenderedImage>;
}

/// Control renders of a trained field at its reference codes.
pub struct FieldRenderer<'a, S: Real> {
    pub field: &'a SceneField<S>,
    pub options: RenderOptions,
}

impl<S: Real> AttributeRenderer for FieldRenderer<'_, S> {
    fn attribute_count(&self) -> usize {
        self.field.attribute_count()
    }

    fn render(&self, alpha: &[f64], camera: &CameraModel) -> Result<RenderedImage> {
        render_image(self.field, camera, &QueryMode::Control { alpha: alpha.to_vec() }, &self.options)
    }
}

/// The ground-truth scene itself.
pub struct AnalyticRenderer<'a> {
    pub spec: &'a BlobSceneSpec,
}

impl AttributeRenderer for AnalyticRenderer<'_> {
    fn attribute_count(&self) -> usize {
        self.spec.attribute_count()
    }

    fn render(&self, alpha: &[f64], camera: &CameraModel) -> Result<RenderedImage> {
        if alpha.len() != self.spec.attribute_count() {
            return Err(Error::dimension("control attributes", self.spec.attribute_count(), alpha.len()));
        }
        let clamped: Vec<f64> = alpha.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Ok(render_analytic(self.spec, &clamped, camera))
    }
}

fn check_renderer(renderer: &dyn AttributeRenderer, spec: &BlobSceneSpec) -> Result<()> {
    if renderer.attribute_count() != spec.attribute_count() {
        return Err(Error::dimension("renderer attributes", spec.attribute_count(), renderer.attribute_count()));
    }
    Ok(())
}

fn solo(k: usize, attribute: usize, value: f64) -> Vec<f64> {
    let mut a = vec![0.0; k];
    a[attribute] = value;
    a
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeIcc {
    pub name: String,
    /// `None` when fewer than two ramp points were measurable.
    pub icc: Option<f64>,
    /// Ramp points the oracle could measure.
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IccReport {
    pub attributes: Vec<AttributeIcc>,
    /// Mean over measurable attributes.
    pub mean: Option<f64>,
}

impl IccReport {
    pub fn from_series(names: &[String], commanded: &[Vec<f64>], measured: &[Vec<Option<f64>>]) -> Result<Self> {
        let mut attributes = Vec::with_capacity(names.len());
        for (a, name) in names.iter().enumerate() {
            let (x, y): (Vec<f64>, Vec<f64>) = commanded[a]
                .iter()
                .zip(&measured[a])
                .filter_map(|(&c, m)| m.map(|m| (c, m)))
                .unzip();
            let value = if x.len() >= 2 { Some(icc(&x, &y)?) } else { None };
            attributes.push(AttributeIcc { name: name.clone(), icc: value, samples: x.len() });
        }
        let measurable: Vec<f64> = attributes.iter().filter_map(|a| a.icc).collect();
        let mean = (!measurable.is_empty()).then(|| measurable.iter().sum::<f64>() / measurable.len() as f64);
        Ok(Self { attributes, mean })
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<16} {:>8} {:>8}\n", "attribute", "ICC", "samples");
        for a in &self.attributes {
            let v = a.icc.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!("{:<16} {v:>8} {:>8}\n", a.name, a.samples));
        }
        out.push_str(&format!("{:<16} {:>8}\n", "mean", self.mean.map_or("n/a".to_string(), |v| format!("{v:.4}"))));
        out
    }
}

/// Attribute fidelity: each attribute is swept alone over `points` values in
/// [-1, 1], every render is measured by the scene oracle, and the commanded
/// and measured values are compared with ICC.
pub fn icc_protocol(
    renderer: &dyn AttributeRenderer,
    spec: &BlobSceneSpec,
    camera: &CameraModel,
    points: usize,
) -> Result<IccReport> {
    check_renderer(renderer, spec)?;
    if points < 2 {
        return Err(Error::Parameter("a ramp needs at least two points".into()));
    }
    let oracle = Oracle::calibrate(spec, camera)?;
    let k = spec.attribute_count();
    let ramp = linspace(-1.0, 1.0, points);
    let jobs: Vec<(usize, f64)> = (0..k).flat_map(|a| ramp.iter().map(move |&v| (a, v))).collect();
    let measurements: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(a, v)| Ok(oracle.measure(&renderer.render(&solo(k, a, v), camera)?)[a]))
        .collect::<Result<_>>()?;
    let commanded = vec![ramp.clone(); k];
    let measured: Vec<Vec<Option<f64>>> = measurements.chunks(points).map(<[_]>::to_vec).collect();
    IccReport::from_series(&spec.attribute_names(), &commanded, &measured)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingReport {
    pub names: Vec<String>,
    /// Per attribute: mean change outside its region over mean change inside.
    pub leakage: Vec<f64>,
    /// `matrix[j][i]`: mean change inside attribute i's region when
    /// attribute j moves, relative to the change inside j's own region.
    pub matrix: Vec<Vec<f64>>,
}

impl DecouplingReport {
    pub fn max_leakage(&self) -> f64 {
        self.leakage.iter().copied().fold(0.0, f64::max)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<16} {:>10}\n", "attribute", "leakage");
        for (n, l) in self.names.iter().zip(&self.leakage) {
            out.push_str(&format!("{n:<16} {l:>10.5}\n"));
        }
        out
    }
}

/// Square dilation of a boolean mask.
pub fn dilate(mask: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            if !mask[y * width + x] {
                continue;
            }
            for yy in y.saturating_sub(radius)..(y + radius + 1).min(height) {
                for xx in x.saturating_sub(radius)..(x + radius + 1).min(width) {
                    out[yy * width + xx] = true;
                }
            }
        }
    }
    out
}

/// Pixels attribute `attribute`'s region can cover: the union of its
/// analytic labels at -1, 0 and +1 (others neutral), dilated.
pub fn region_support(spec: &BlobSceneSpec, camera: &CameraModel, attribute: usize) -> Vec<bool> {
    let k = spec.attribute_count();
    let region = spec.attributes[attribute].region as u8;
    let mut mask = vec![false; camera.width * camera.height];
    for v in [-1.0, 0.0, 1.0] {
        let labels = analytic_labels(&render_analytic(spec, &solo(k, attribute, v), camera));
        for (m, l) in mask.iter_mut().zip(labels) {
            *m |= l == region;
        }
    }
    dilate(&mask, camera.width, camera.height, MASK_DILATION)
}

/// Per-pixel mean absolute color change between two renders.
pub fn color_change(a: &RenderedImage, b: &RenderedImage) -> Vec<f64> {
    a.color
        .chunks(3)
        .zip(b.color.chunks(3))
        .map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / 3.0)
        .collect()
}

fn masked_mean(values: &[f64], mask: &[bool], inside: bool) -> f64 {
    let (sum, count) = values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == inside)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// How far each attribute's effect spills outside its own region.
pub fn decoupling_score(
    renderer: &dyn AttributeRenderer,
    spec: &BlobSceneSpec,
    camera: &CameraModel,
) -> Result<DecouplingReport> {
    check_renderer(renderer, spec)?;
    let k = spec.attribute_count();
    let supports: Vec<Vec<bool>> = (0..k).map(|a| region_support(spec, camera, a)).collect();
    let changes: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|a| {
            let lo = renderer.render(&solo(k, a, -1.0), camera)?;
            let hi = renderer.render(&solo(k, a, 1.0), camera)?;
            Ok(color_change(&lo, &hi))
        })
        .collect::<Result<_>>()?;
    let mut leakage = Vec::with_capacity(k);
    let mut matrix = Vec::with_capacity(k);
    for j in 0..k {
        let inside = masked_mean(&changes[j], &supports[j], true);
        leakage.push(ratio(masked_mean(&changes[j], &supports[j], false), inside));
        matrix.push((0..k).map(|i| ratio(masked_mean(&changes[j], &supports[i], true), inside)).collect());
    }
    Ok(DecouplingReport { names: spec.attribute_names(), leakage, matrix })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameQuality {
    pub index: usize,
    pub psnr: f64,
    pub ms_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub frames: Vec<FrameQuality>,
    pub mean_psnr: f64,
    pub mean_ms_ssim: f64,
}

impl QualityReport {
    pub fn from_frames(frames: Vec<FrameQuality>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyDataset("no frames to evaluate".into()));
        }
        let n = frames.len() as f64;
        let mean_psnr = frames.iter().map(|f| f.psnr).sum::<f64>() / n;
        let mean_ms_ssim = frames.iter().map(|f| f.ms_ssim).sum::<f64>() / n;
        Ok(Self { frames, mean_psnr, mean_ms_ssim })
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:>6} {:>9} {:>9}\n", "frame", "PSNR", "MS-SSIM");
        for f in &self.frames {
            out.push_str(&format!("{:>6} {:>9.3} {:>9.5}\n", f.index, f.psnr, f.ms_ssim));
        }
        out.push_str(&format!("{:>6} {:>9.3} {:>9.5}\n", "mean", self.mean_psnr, self.mean_ms_ssim));
        out
    }
}

/// Compare a render against a reference image.
pub fn frame_quality(index: usize, render: &RenderedImage, reference: &[f32]) -> Result<FrameQuality> {
    Ok(FrameQuality {
        index,
        psnr: psnr(&render.color, reference, 1.0)?,
        ms_ssim: ms_ssim(&render.color, reference, render.width, render.height, 3, 1.0)?,
    })
}

/// Attributes, deformation code and appearance code a training frame is
/// rendered with: supervised attributes come from the labels, the rest from
/// the attribute network.
pub fn frame_codes<S: Real>(field: &SceneField<S>, frame: &TrainFrame) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let omega = field.code_row(field.deformation_codes(), frame.latent);
    let psi = field.code_row(field.appearance_codes(), frame.latent);
    let alpha = if frame.delta.iter().all(|&d| d) {
        frame.alpha.clone()
    } else {
        let mut tape = Tape::new();
        let params = field.store().bind(&mut tape);
        let o = tape.constant(DenseArray::from_f64(&[1, omega.len()], &omega)?);
        let predicted = field.eval_attributes(&mut tape, &params, o)?;
        let predicted = tape.value(predicted);
        frame
            .alpha
            .iter()
            .zip(&frame.delta)
            .enumerate()
            .map(|(a, (&v, &d))| if d { v } else { predicted.at(0, a).as_f64() })
            .collect()
    };
    Ok((alpha, omega, psi))
}

/// Reconstruction quality of frames rendered with their own codes.
pub fn training_view_quality<S: Real>(
    field: &SceneField<S>,
    frames: &[TrainFrame],
    options: &RenderOptions,
) -> Result<QualityReport> {
    let per_frame = frames
        .par_iter()
        .map(|f| {
            let (alpha, omega, psi) = frame_codes(field, f)?;
            let img = render_image(field, &f.camera, &QueryMode::Explicit { alpha, omega, psi }, options)?;
            frame_quality(f.index, &img, &f.rgb)
        })
        .collect::<Result<Vec<_>>>()?;
    QualityReport::from_frames(per_frame)
}

/// Held-out frames rendered with codes and attributes averaged from the
/// neighbouring training frames (a single neighbour at the sequence ends).
pub fn interpolation_eval<S: Real>(
    field: &SceneField<S>,
    train: &[TrainFrame],
    held_out: &[TrainFrame],
    options: &RenderOptions,
) -> Result<QualityReport> {
    let by_index: HashMap<usize, &TrainFrame> = train.iter().map(|f| (f.index, f)).collect();
    let per_frame = held_out
        .par_iter()
        .map(|f| {
            let neighbours: Vec<&TrainFrame> = [f.index.checked_sub(1), Some(f.index + 1)]
                .into_iter()
                .flatten()
                .filter_map(|i| by_index.get(&i).copied())
                .collect();
            if neighbours.is_empty() {
                return Err(Error::Validation(format!("held-out frame {} has no training neighbour", f.index)));
            }
            let codes = neighbours.iter().map(|n| frame_codes(field, n)).collect::<Result<Vec<_>>>()?;
            let average = |pick: fn(&(Vec<f64>, Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
                let n = codes.len() as f64;
                let mut out = vec![0.0; pick(&codes[0]).len()];
                for c in &codes {
                    for (o, v) in out.iter_mut().zip(pick(c)) {
                        *o += v / n;
                    }
                }
                out
            };
            let mode = QueryMode::Explicit {
                alpha: average(|c| &c.0),
                omega: average(|c| &c.1),
                psi: average(|c| &c.2),
            };
            let img = render_image(field, &f.camera, &mode, options)?;
            frame_quality(f.index, &img, &f.rgb)
        })
        .collect::<Result<Vec<_>>>()?;
    QualityReport::from_frames(per_frame)
}

/// Named per-frame attribute intensities from another capture.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceTrack {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SourceTrack {
    /// Reads a CSV with one numeric column per attribute. Tracker output is
    /// accepted directly: intensity columns named `AU01_r` are matched as
    /// `AU01`, and rows with `success` 0 are dropped.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = reader.headers()?.clone();
        let success = headers.iter().position(|h| h == "success");
        let names: Vec<String> = headers.iter().map(|h| h.strip_suffix("_r").unwrap_or(h).to_string()).collect();
        let mut rows = Vec::new();
        let mut dropped = 0;
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let parsed: Vec<f64> = record
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Format(format!("row {}: `{v}` is not a number", line + 2)))
                })
                .collect::<Result<_>>()?;
            if success.is_some_and(|s| parsed[s] == 0.0) {
                dropped += 1;
                continue;
            }
            rows.push(parsed);
        }
        if dropped > 0 {
            warn!("dropped {dropped} source rows with failed detection");
        }
        if rows.is_empty() {
            return Err(Error::EmptyDataset(format!("{} has no usable rows", path.display())));
        }
        Ok(Self { names, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferControls {
    /// One control vector per source frame, in the target's attribute order.
    pub controls: Vec<Vec<f64>>,
    /// Target attributes the source lacks; held at 0.
    pub pinned: Vec<String>,
}

/// Source intensities mapped into the target's control space: each matching
/// column is smoothed, then normalized with the target's constants. Without
/// target constants the source is taken as already normalized.
pub fn transfer_controls(
    source: &SourceTrack,
    target_names: &[String],
    target_normalization: Option<&Normalization>,
    window: usize,
    order: usize,
) -> Result<TransferControls> {
    let frames = source.rows.len();
    let mut controls = vec![vec![0.0; target_names.len()]; frames];
    let mut pinned = Vec::new();
    for (a, name) in target_names.iter().enumerate() {
        let Some(raw) = source.column(name) else {
            warn!("source has no `{name}` column; holding it at 0");
            pinned.push(name.clone());
            continue;
        };
        let smooth = savgol_filter(&raw, window, order)?;
        for (row, v) in controls.iter_mut().zip(smooth) {
            row[a] = match target_normalization {
                Some(n) => match n.apply(a, v) {
                    Some(x) => x,
                    None => {
                        warn!("target range of `{name}` is degenerate; holding it at 0");
                        0.0
                    }
                },
                None => v.clamp(-1.0, 1.0),
            };
        }
    }
    Ok(TransferControls { controls, pinned })
}

/// Control renders driven by a source track. Frame `f` uses
/// `cameras[f % cameras.len()]`.
pub fn transfer_expressions(
    renderer: &dyn AttributeRenderer,
    controls: &TransferControls,
    cameras: &[CameraModel],
) -> Result<Vec<RenderedImage>> {
    if cameras.is_empty() {
        return Err(Error::Parameter("transfer needs at least one camera".into()));
    }
    controls
        .controls
        .par_iter()
        .enumerate()
        .map(|(f, alpha)| renderer.render(alpha, &cameras[f % cameras.len()]))
        .collect()
}

/// Mean absolute color change between consecutive frames, per transition.
pub fn temporal_change(frames: &[RenderedImage]) -> Vec<f64> {
    frames
        .windows(2)
        .map(|w| {
            let d = color_change(&w[0], &w[1]);
            d.iter().sum::<f64>() / d.len() as f64
        })
        .collect()
}
