use nalgebra::DMatrix;

use super::tracking::{TrackingFrame, AU_MAX_INTENSITY};
use crate::error::{Error, Result};

fn check(window: usize, order: usize, len: usize) -> Result<()> {
    if window % 2 == 0 {
        return Err(Error::Parameter(format!("smoothing window must be odd, got {window}")));
    }
    if window <= order {
        return Err(Error::Parameter(format!("window {window} must exceed polynomial order {order}")));
    }
    if window > len {
        return Err(Error::Parameter(format!("window {window} is longer than the {len}-frame track")));
    }
    Ok(())
}

/// Weights that evaluate the least-squares polynomial fit of a centered
/// window at its middle sample.
pub fn savgol_coefficients(window: usize, order: usize) -> Result<Vec<f64>> {
    check(window, order, window)?;
    let half = (window / 2) as f64;
    let vander = DMatrix::from_fn(window, order + 1, |i, j| (i as f64 - half).powi(j as i32));
    let normal = vander.transpose() * &vander;
    let inverse = normal
        .try_inverse()
        .ok_or_else(|| Error::Parameter(format!("singular fit for window {window}, order {order}")))?;
    let projector = inverse * vander.transpose();
    Ok(projector.row(0).iter().copied().collect())
}

/// Smooths one signal with mirror padding at both ends (the edge sample is
/// not repeated).
pub fn savgol_filter(signal: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    check(window, order, signal.len())?;
    let coeffs = savgol_coefficients(window, order)?;
    let n = signal.len() as isize;
    let half = (window / 2) as isize;
    let mirror = |j: isize| -> usize {
        let j = if j < 0 { -j } else { j };
        (if j >= n { 2 * (n - 1) - j } else { j }) as usize
    };
    Ok((0..n)
        .map(|t| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * signal[mirror(t + k as isize - half)])
                .sum()
        })
        .collect())
}

/// Smooths every AU channel over time and clamps back into the intensity range.
pub fn smooth_au_tracks(frames: &[TrackingFrame], window: usize, order: usize) -> Result<Vec<TrackingFrame>> {
    check(window, order, frames.len())?;
    let mut out = frames.to_vec();
    for a in 0..17 {
        let channel: Vec<f64> = frames.iter().map(|f| f.au[a]).collect();
        for (f, v) in out.iter_mut().zip(savgol_filter(&channel, window, order)?) {
            f.au[a] = v.clamp(0.0, AU_MAX_INTENSITY);
        }
    }
    Ok(out)
}
