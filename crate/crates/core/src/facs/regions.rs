use serde::{Deserialize, Serialize};

use super::tracking::LANDMARK_COUNT;
use crate::error::{Error, Result};

/// Many-to-one assignment of attributes to regions `1..=region_count`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionTopology {
    pub region_count: usize,
    pub attribute_region: Vec<usize>,
}

impl RegionTopology {
    pub fn new(region_count: usize, attribute_region: Vec<usize>) -> Result<Self> {
        let t = Self {
            region_count,
            attribute_region,
        };
        t.validate()?;
        Ok(t)
    }

    /// Upper face (brows), middle face (eyes, cheeks, nose), lower face
    /// (mouth, chin) for the 17 tracked action units.
    pub fn face() -> Self {
        Self {
            region_count: 3,
            attribute_region: vec![1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3, 3, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.region_count == 0 || self.attribute_region.is_empty() {
            return Err(Error::Configuration("topology needs at least one region and one attribute".into()));
        }
        if let Some((a, &r)) =
            self.attribute_region.iter().enumerate().find(|(_, &r)| r == 0 || r > self.region_count)
        {
            return Err(Error::Configuration(format!(
                "attribute {a} maps to region {r}, outside 1..={}",
                self.region_count
            )));
        }
        for n in 1..=self.region_count {
            if self.attributes_of(n).is_empty() {
                return Err(Error::Configuration(format!("region {n} has no attribute")));
            }
        }
        Ok(())
    }

    pub fn attribute_count(&self) -> usize {
        self.attribute_region.len()
    }

    pub fn region_of(&self, attribute: usize) -> usize {
        self.attribute_region[attribute]
    }

    pub fn attributes_of(&self, region: usize) -> Vec<usize> {
        (0..self.attribute_region.len())
            .filter(|&a| self.attribute_region[a] == region)
            .collect()
    }
}

/// Per-pixel labels in `0..=region_count`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMaskImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl RegionMaskImage {
    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

pub type Landmarks = [[f64; 2]; LANDMARK_COUNT];

const EYEBROW_EXTENSION: f64 = 0.25;
const BROW_BAND_SCALE: f64 = 3.0;
/// Brow point paired with the eye point below it.
const BROW_EYE_PAIRS: [(usize, usize); 10] = [
    (17, 36),
    (18, 37),
    (19, 37),
    (20, 38),
    (21, 39),
    (22, 42),
    (23, 43),
    (24, 44),
    (25, 44),
    (26, 45),
];
const LOWER_FACE: [usize; 12] = [3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 28];

/// Brow/eye midline, extended outward along each eyebrow.
pub fn brow_boundary(lm: &Landmarks) -> Vec<[f64; 2]> {
    let mid = |(b, e): (usize, usize)| [(lm[b][0] + lm[e][0]) / 2.0, (lm[b][1] + lm[e][1]) / 2.0];
    let mut line: Vec<[f64; 2]> = BROW_EYE_PAIRS.iter().map(|&p| mid(p)).collect();
    let extend = |from: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        [
            from[0] + EYEBROW_EXTENSION * (b[0] - a[0]),
            from[1] + EYEBROW_EXTENSION * (b[1] - a[1]),
        ]
    };
    let left = extend(line[0], lm[21], lm[17]);
    let right = extend(line[line.len() - 1], lm[22], lm[26]);
    line.insert(0, left);
    line.push(right);
    line
}

/// Polygons for regions 1, 2 and 3. Region 2 is drawn over the whole face
/// below the midline; labelling gives regions 3 and 1 precedence over it.
pub fn region_polygons(lm: &Landmarks) -> [Vec<[f64; 2]>; 3] {
    let boundary = brow_boundary(lm);
    let band = BROW_BAND_SCALE
        * BROW_EYE_PAIRS
            .iter()
            .map(|&(b, e)| {
                let dx = (lm[b][0] - lm[e][0]) / 2.0;
                let dy = (lm[b][1] - lm[e][1]) / 2.0;
                dx.hypot(dy)
            })
            .sum::<f64>()
        / BROW_EYE_PAIRS.len() as f64;
    let mut upper = boundary.clone();
    upper.extend(boundary.iter().rev().map(|p| [p[0], p[1] - band]));
    let mut middle = boundary;
    middle.extend((0..17).rev().map(|k| lm[k]));
    let lower = LOWER_FACE.iter().map(|&k| lm[k]).collect();
    [upper, middle, lower]
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        .abs()
}

/// Even-odd scanline fill sampled at pixel centers.
pub fn fill_polygon(poly: &[[f64; 2]], width: usize, height: usize) -> Vec<bool> {
    let mut inside = vec![false; width * height];
    let n = poly.len();
    let mut crossings = Vec::new();
    for y in 0..height {
        let yc = y as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if (a[1] <= yc) != (b[1] <= yc) {
                crossings.push(a[0] + (yc - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            let first = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let last = ((pair[1] - 0.5).ceil().min(width as f64)).max(0.0) as usize;
            for x in first..last.max(first) {
                inside[y * width + x] = true;
            }
        }
    }
    inside
}

/// Three-region face labelling from 68 landmarks; label 0 is everything else.
pub fn build_region_masks(
    landmarks: &Landmarks,
    width: usize,
    height: usize,
    topology: &RegionTopology,
) -> Result<RegionMaskImage> {
    if topology.region_count != 3 {
        return Err(Error::Configuration(format!(
            "face masks define 3 regions, topology has {}",
            topology.region_count
        )));
    }
    let (sx, sy) = (0.1 * width as f64, 0.1 * height as f64);
    for (k, p) in landmarks.iter().enumerate() {
        let ok = p.iter().all(|v| v.is_finite())
            && p[0] >= -sx
            && p[0] <= width as f64 + sx
            && p[1] >= -sy
            && p[1] <= height as f64 + sy;
        if !ok {
            return Err(Error::Geometry(format!("landmark {k} at {p:?} lies outside the image")));
        }
    }
    let polys = region_polygons(landmarks);
    for (r, poly) in polys.iter().enumerate() {
        if polygon_area(poly) < 1e-6 {
            return Err(Error::Geometry(format!("region {} polygon has zero area", r + 1)));
        }
    }
    let fills: Vec<Vec<bool>> = polys.iter().map(|p| fill_polygon(p, width, height)).collect();
    let labels = (0..width * height)
        .map(|i| {
            if fills[2][i] {
                3
            } else if fills[0][i] {
                1
            } else if fills[1][i] {
                2
            } else {
                0
            }
        })
        .collect();
    Ok(RegionMaskImage { width, height, labels })
}

/// A symmetric frontal 68-point layout inside a `width x height` image.
pub fn canonical_landmarks(width: f64, height: f64) -> Landmarks {
    use std::f64::consts::PI;
    let mut lm = [[0.0; 2]; LANDMARK_COUNT];
    for (k, p) in lm.iter_mut().enumerate().take(17) {
        let phi = PI - k as f64 * PI / 16.0;
        *p = [0.5 + 0.42 * phi.cos(), 0.40 + 0.55 * phi.sin()];
    }
    for k in 0..5 {
        let t = k as f64 / 4.0;
        let arch = 0.04 * (PI * t).sin();
        lm[17 + k] = [0.18 + 0.26 * t, 0.30 - arch];
        lm[22 + k] = [0.56 + 0.26 * t, 0.30 - arch];
    }
    for k in 0..4 {
        lm[27 + k] = [0.5, 0.40 + 0.07 * k as f64];
    }
    for k in 0..5 {
        let t = k as f64 / 4.0;
        lm[31 + k] = [0.42 + 0.16 * t, 0.66 + 0.02 * (PI * t).sin()];
    }
    let eye = |cx: f64| {
        let ring = [(-1.0, 0.0), (-0.4, -1.0), (0.4, -1.0), (1.0, 0.0), (0.4, 1.0), (-0.4, 1.0)];
        ring.map(|(u, v)| [cx + 0.08 * u, 0.42 + 0.03 * v])
    };
    lm[36..42].copy_from_slice(&eye(0.31));
    lm[42..48].copy_from_slice(&eye(0.69));
    for k in 0..12 {
        let phi = PI - k as f64 * PI / 6.0;
        lm[48 + k] = [0.5 + 0.15 * phi.cos(), 0.80 - 0.06 * phi.sin()];
    }
    for k in 0..8 {
        let phi = PI - k as f64 * PI / 4.0;
        lm[60 + k] = [0.5 + 0.10 * phi.cos(), 0.80 - 0.025 * phi.sin()];
    }
    lm.map(|[x, y]| [x * width, y * height])
}
