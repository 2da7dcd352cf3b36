use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.8;

/// Maps a raw intensity to `[-1, 1]`: `au_min` goes to -1 and everything at
/// or above `alpha * au_max` saturates at 1.
pub fn normalize_au(au: f64, au_min: f64, au_max: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let scaled_max = alpha * au_max;
    if !(au_max > au_min) || scaled_max <= au_min {
        return Err(Error::DegenerateRange { scaled_max, au_min });
    }
    Ok(((au - au_min) / (scaled_max - au_min) * 2.0 - 1.0).clamp(-1.0, 1.0))
}

/// Per-attribute constants needed to reproduce the mapping at control time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub alpha: f64,
    pub au_min: Vec<f64>,
    pub au_max: Vec<f64>,
}

impl Normalization {
    /// Per-channel extrema over `tracks` (one row per frame).
    pub fn fit(tracks: &[Vec<f64>], alpha: f64) -> Result<Self> {
        let first = tracks.first().ok_or_else(|| Error::EmptyDataset("no frames to normalize".into()))?;
        let k = first.len();
        let mut au_min = vec![f64::INFINITY; k];
        let mut au_max = vec![f64::NEG_INFINITY; k];
        for row in tracks {
            for (a, &v) in row.iter().enumerate() {
                au_min[a] = au_min[a].min(v);
                au_max[a] = au_max[a].max(v);
            }
        }
        Ok(Self { alpha, au_min, au_max })
    }

    /// Whether channel `a` spans a usable range.
    pub fn is_usable(&self, a: usize) -> bool {
        normalize_au(self.au_min[a], self.au_min[a], self.au_max[a], self.alpha).is_ok()
    }

    /// Normalized value of channel `a`, or `None` when its range is degenerate.
    pub fn apply(&self, a: usize, au: f64) -> Option<f64> {
        normalize_au(au, self.au_min[a], self.au_max[a], self.alpha).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_values() {
        assert_eq!(normalize_au(1.0, 1.0, 4.0, 0.8).unwrap(), -1.0);
        assert_eq!(normalize_au(4.0, 0.0, 5.0, 0.8).unwrap(), 1.0);
        assert_eq!(normalize_au(5.0, 0.0, 5.0, 0.8).unwrap(), 1.0);
        assert!((normalize_au(2.0, 0.0, 5.0, 0.8).unwrap() - 0.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_range_is_an_error() {
        assert!(matches!(normalize_au(1.0, 2.0, 2.4, 0.8), Err(Error::DegenerateRange { .. })));
        assert!(normalize_au(1.0, 0.0, 0.0, 0.8).is_err());
        assert!(normalize_au(1.0, 0.0, 5.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn output_in_range_with_saturation_at_scaled_max(
            au_min in 0.0f64..2.0,
            span in 0.5f64..3.0,
            alpha in 0.7f64..=1.0,
            t in 0.0f64..1.0,
        ) {
            let au_max = au_min + span;
            prop_assume!(alpha * au_max > au_min + 1e-3);
            let au = au_min + t * (au_max - au_min);
            let v = normalize_au(au, au_min, au_max, alpha).unwrap();
            prop_assert!((-1.0..=1.0).contains(&v));
            prop_assert_eq!(v == -1.0, au == au_min);
            if au >= alpha * au_max {
                prop_assert_eq!(v, 1.0);
            } else if au < alpha * au_max - 1e-9 {
                prop_assert!(v < 1.0);
            }
        }
    }
}
