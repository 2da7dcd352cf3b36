/// Field values at one depth along a ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySample {
    pub depth: f64,
    pub interval: f64,
    pub density: f64,
    pub color: [f64; 3],
    pub masks: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub color: [f64; 3],
    pub opacity: f64,
    pub depth: f64,
    pub weights: Vec<f64>,
}

/// `w_k = T_k (1 - exp(-sigma_k delta_k))` with `T_k = exp(-sum_{j<k} sigma_j delta_j)`.
pub fn quadrature_weights(densities: &[f64], intervals: &[f64]) -> Vec<f64> {
    debug_assert_eq!(densities.len(), intervals.len());
    let mut optical = 0.0f64;
    densities
        .iter()
        .zip(intervals)
        .map(|(&s, &d)| {
            let tau = s.max(0.0) * d;
            let w = (-optical).exp() * (-(-tau).exp_m1());
            optical += tau;
            w
        })
        .collect()
}

pub fn composite_color(samples: &[RaySample]) -> Composite {
    let densities: Vec<f64> = samples.iter().map(|s| s.density).collect();
    let intervals: Vec<f64> = samples.iter().map(|s| s.interval).collect();
    let weights = quadrature_weights(&densities, &intervals);
    let mut color = [0.0; 3];
    let (mut opacity, mut depth) = (0.0, 0.0);
    for (s, &w) in samples.iter().zip(&weights) {
        for (c, v) in color.iter_mut().zip(s.color) {
            *c += w * v;
        }
        opacity += w;
        depth += w * s.depth;
    }
    if opacity > 0.0 {
        depth /= opacity;
    }
    // Rounding can carry the weight sum a few ulps past 1.
    let opacity = opacity.clamp(0.0, 1.0);
    Composite {
        color,
        opacity,
        depth,
        weights,
    }
}

/// Accumulated mask channels; they sum to the ray's opacity.
pub fn composite_mask(samples: &[RaySample]) -> Vec<f64> {
    let Some(first) = samples.first() else {
        return Vec::new();
    };
    let densities: Vec<f64> = samples.iter().map(|s| s.density).collect();
    let intervals: Vec<f64> = samples.iter().map(|s| s.interval).collect();
    let weights = quadrature_weights(&densities, &intervals);
    let mut out = vec![0.0; first.masks.len()];
    for (s, &w) in samples.iter().zip(&weights) {
        for (o, m) in out.iter_mut().zip(&s.masks) {
            *o += w * m;
        }
    }
    out
}
