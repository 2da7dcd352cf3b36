use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Real, Tape, Var};

/// `sum_r |C_r - C_r^gt|^2` for `pred [R, 3]` against row-major `gt`.
pub fn recon_loss<S: Real>(tape: &mut Tape<S>, pred: Var, gt: &[f64]) -> Result<Var> {
    let shape = tape.value(pred).shape().to_vec();
    let target = tape.constant(DenseArray::from_f64(&shape, gt)?);
    let diff = tape.sub(pred, target);
    let sq = tape.square(diff);
    Ok(tape.sum(sq))
}

/// `sum_c |mu_c|^2` over every code row.
pub fn latent_reg_loss(codes: &[&[f64]]) -> f64 {
    codes.iter().flat_map(|c| c.iter()).map(|v| v * v).sum()
}

/// Gradient of [`latent_reg_loss`] for one table: `2 mu`.
pub fn latent_reg_grad(code: &[f64]) -> Vec<f64> {
    code.iter().map(|v| 2.0 * v).collect()
}

/// Focal term `-(1 - p)^gamma ln p` for one labeled ray.
pub fn focal_term(p_true: f64, gamma: f64) -> f64 {
    -(1.0 - p_true).max(0.0).powf(gamma) * (p_true + LOG_GUARD).ln()
}

/// Keeps `ln p` finite when a ray puts no mass on its label.
pub const LOG_GUARD: f64 = 1e-12;

/// Focal loss summed over rays. `probs [R, N + 1]` are the rendered,
/// opacity-normalized mask channels; `labels[r]` is the ground-truth
/// region of ray `r`.
pub fn mask_loss<S: Real>(tape: &mut Tape<S>, probs: Var, labels: &[usize], gamma: f64) -> Result<Var> {
    let (rows, cols) = {
        let v = tape.value(probs);
        (v.rows(), v.cols())
    };
    if labels.len() != rows {
        return Err(Error::dimension("mask labels", rows, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
        return Err(Error::Label { label: bad, max: cols - 1 });
    }
    if !(gamma >= 0.0) {
        return Err(Error::Parameter(format!("focal gamma {gamma} must be non-negative")));
    }
    let mut one_hot = vec![0.0; rows * cols];
    for (r, &l) in labels.iter().enumerate() {
        one_hot[r * cols + l] = 1.0;
    }
    let one_hot = tape.constant(DenseArray::from_f64(&[rows, cols], &one_hot)?);
    let picked = tape.mul(probs, one_hot);
    let p = tape.row_sum(picked);
    let guarded = tape.affine(p, 1.0, LOG_GUARD);
    let log_p = tape.ln(guarded);
    let per_ray = if gamma == 0.0 {
        log_p
    } else {
        let miss = tape.affine(p, -1.0, 1.0);
        let miss = tape.relu(miss);
        let focus = tape.powf(miss, gamma);
        tape.mul(focus, log_p)
    };
    let total = tape.sum(per_ray);
    Ok(tape.scale(total, -1.0))
}

/// Uncertainty-weighted attribute loss
/// `sum delta * weight * (|alpha - alpha_gt|^2 / (2 beta^2) + (ln beta)^2 / 2)`.
/// `pred` and `beta` are `[R, K]`; `gt`, `delta` are row-major `R * K`;
/// `weights` holds one factor per row.
pub fn attribute_loss<S: Real>(
    tape: &mut Tape<S>,
    pred: Var,
    gt: &[f64],
    beta: Var,
    delta: &[bool],
    weights: &[f64],
) -> Result<Var> {
    let shape = tape.value(pred).shape().to_vec();
    let (rows, k) = (shape[0], shape[1]);
    if tape.value(beta).shape() != shape.as_slice() || gt.len() != rows * k || delta.len() != rows * k {
        return Err(Error::dimension("attribute loss inputs", rows * k, gt.len()));
    }
    if weights.len() != rows {
        return Err(Error::dimension("attribute loss weights", rows, weights.len()));
    }
    if tape.value(beta).data().iter().any(|b| !(b.as_f64() > 0.0)) {
        return Err(Error::Contract("uncertainty must be positive".into()));
    }
    let gate: Vec<f64> = (0..rows * k)
        .map(|i| if delta[i] { weights[i / k] } else { 0.0 })
        .collect();
    // Zero the residual where delta = 0 so unlabeled targets cannot reach
    // the value or the gradient.
    let masked_gt: Vec<f64> = gt.iter().zip(delta).map(|(&g, &d)| if d { g } else { 0.0 }).collect();
    let target = tape.constant(DenseArray::from_f64(&shape, &masked_gt)?);
    let gate = tape.constant(DenseArray::from_f64(&shape, &gate)?);
    let diff = tape.sub(pred, target);
    let sq = tape.square(diff);
    let b2 = tape.square(beta);
    let ratio = tape.div(sq, b2);
    let fit = tape.scale(ratio, 0.5);
    let lb = tape.ln(beta);
    let lb2 = tape.square(lb);
    let prior = tape.scale(lb2, 0.5);
    let term = tape.add(fit, prior);
    let gated = tape.mul(term, gate);
    Ok(tape.sum(gated))
}

/// Per-term values of one evaluation of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub recon: f64,
    pub reg: f64,
    pub mask: f64,
    pub attr: f64,
}

/// Term weights at a given step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub reg: f64,
    pub mask: f64,
    pub attr: f64,
}

pub fn total_loss(parts: LossParts, weights: LossWeights) -> f64 {
    parts.recon + weights.reg * parts.reg + weights.mask * parts.mask + weights.attr * parts.attr
}

/// Uncertainty minimizing the attribute loss of one residual `r`: the root
/// of `beta^2 ln beta = r^2` (1 when `r = 0`).
pub fn optimal_beta(residual: f64) -> f64 {
    let target = residual * residual;
    if target == 0.0 {
        return 1.0;
    }
    // beta^2 ln beta is increasing for beta >= 1 and covers [0, inf).
    let (mut lo, mut hi) = (1.0f64, 2.0f64);
    while hi * hi * hi.ln() < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid * mid * mid.ln() < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
