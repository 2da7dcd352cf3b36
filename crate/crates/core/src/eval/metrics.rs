use log::warn;

use crate::error::{Error, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Standard MS-SSIM exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

fn check_pair(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dimension("image pair", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::Parameter("empty images".into()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP`].
pub fn psnr(a: &[f32], b: &[f32], peak: f64) -> Result<f64> {
    check_pair(a, b)?;
    let mse = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Number of MS-SSIM scales an image of this size supports: every scale must
/// still hold one full window.
pub fn ms_ssim_scales(width: usize, height: usize) -> usize {
    let mut side = width.min(height);
    let mut scales = 0;
    while scales < MS_SSIM_WEIGHTS.len() && side >= WINDOW {
        scales += 1;
        side /= 2;
    }
    scales
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" Gaussian filter.
fn filter(img: &[f64], width: usize, height: usize, g: &[f64; WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = width + 1 - WINDOW;
    let oh = height + 1 - WINDOW;
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|i| g[i] * img[y * width + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM and mean contrast-structure term of one channel at one scale.
fn ssim_terms(a: &[f64], b: &[f64], width: usize, height: usize, c1: f64, c2: f64) -> (f64, f64) {
    let g = gaussian_window();
    let prod = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| x * y).collect() };
    let (mu_a, ow, oh) = filter(a, width, height, &g);
    let (mu_b, ..) = filter(b, width, height, &g);
    let (e_aa, ..) = filter(&prod(a, a), width, height, &g);
    let (e_bb, ..) = filter(&prod(b, b), width, height, &g);
    let (e_ab, ..) = filter(&prod(a, b), width, height, &g);
    let n = (ow * oh) as f64;
    let mut ssim = 0.0;
    let mut cs = 0.0;
    for i in 0..ow * oh {
        let s_aa = e_aa[i] - mu_a[i] * mu_a[i];
        let s_bb = e_bb[i] - mu_b[i] * mu_b[i];
        let s_ab = e_ab[i] - mu_a[i] * mu_b[i];
        let contrast = (2.0 * s_ab + c2) / (s_aa + s_bb + c2);
        let luminance = (2.0 * mu_a[i] * mu_b[i] + c1) / (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1);
        ssim += luminance * contrast;
        cs += contrast;
    }
    (ssim / n, cs / n)
}

fn downsample(img: &[f64], width: usize, height: usize) -> (Vec<f64>, usize, usize) {
    let (w, h) = (width / 2, height / 2);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let at = |dx: usize, dy: usize| img[(2 * y + dy) * width + 2 * x + dx];
            out[y * w + x] = 0.25 * (at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1));
        }
    }
    (out, w, h)
}

/// Multi-scale SSIM of two interleaved images with `channels` channels,
/// averaged over channels. Images too small for five scales use as many as
/// fit, with the exponents renormalized.
pub fn ms_ssim(a: &[f32], b: &[f32], width: usize, height: usize, channels: usize, peak: f64) -> Result<f64> {
    check_pair(a, b)?;
    if width * height * channels != a.len() {
        return Err(Error::dimension("image size", width * height * channels, a.len()));
    }
    let scales = ms_ssim_scales(width, height);
    if scales == 0 {
        return Err(Error::Parameter(format!("{width}x{height} image is smaller than the {WINDOW}-pixel window")));
    }
    if scales < MS_SSIM_WEIGHTS.len() {
        warn!("{width}x{height} image supports {scales} of {} MS-SSIM scales", MS_SSIM_WEIGHTS.len());
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let mut score = 0.0;
    for c in 0..channels {
        let mut pa: Vec<f64> = a.iter().skip(c).step_by(channels).map(|&v| v as f64).collect();
        let mut pb: Vec<f64> = b.iter().skip(c).step_by(channels).map(|&v| v as f64).collect();
        let (mut w, mut h) = (width, height);
        let mut value = 1.0;
        for (s, &weight) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_terms(&pa, &pb, w, h, c1, c2);
            let term = if s + 1 == scales { ssim } else { cs };
            value *= term.max(0.0).powf(weight / total);
            if s + 1 < scales {
                let (da, nw, nh) = downsample(&pa, w, h);
                pb = downsample(&pb, w, h).0;
                pa = da;
                (w, h) = (nw, nh);
            }
        }
        score += value;
    }
    Ok(score / channels as f64)
}

/// ICC(3,1), two-way mixed effects, consistency, for two raters. Defined as 0
/// when the between-subject and residual mean squares both vanish.
pub fn icc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dimension("ICC series", a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Parameter("ICC needs at least two subjects".into()));
    }
    let nf = n as f64;
    let grand = (a.iter().sum::<f64>() + b.iter().sum::<f64>()) / (2.0 * nf);
    let mean_a = a.iter().sum::<f64>() / nf;
    let mean_b = b.iter().sum::<f64>() / nf;
    let mut ss_rows = 0.0;
    let mut ss_total = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        ss_rows += 2.0 * (0.5 * (x + y) - grand).powi(2);
        ss_total += (x - grand).powi(2) + (y - grand).powi(2);
    }
    let ss_cols = nf * ((mean_a - grand).powi(2) + (mean_b - grand).powi(2));
    let ss_error = (ss_total - ss_rows - ss_cols).max(0.0);
    let bms = ss_rows / (nf - 1.0);
    let ems = ss_error / (nf - 1.0);
    if bms + ems == 0.0 {
        return Ok(0.0);
    }
    Ok((bms - ems) / (bms + ems))
}
