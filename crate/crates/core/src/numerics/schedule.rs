use serde::{Deserialize, Serialize};

/// Exponential interpolation from `initial` (step 0) to `final_value`
/// (step `total_steps`), held constant afterwards.
///
/// With a positive target the curve is geometric. A zero target cannot be
/// reached geometrically, so the curve becomes `e^{-k s}` shifted and rescaled
/// to pass through both endpoints, with `k` chosen to span four decades.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub initial: f64,
    pub final_value: f64,
    pub total_steps: u64,
}

const ZERO_TARGET_RATE: f64 = 9.210_340_371_976_184; // ln(1e4)

impl DecaySchedule {
    pub fn new(initial: f64, final_value: f64, total_steps: u64) -> Self {
        Self {
            initial,
            final_value,
            total_steps,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(value, value, 0)
    }

    pub fn is_well_formed(&self) -> bool {
        self.initial.is_finite()
            && self.final_value.is_finite()
            && self.initial >= 0.0
            && self.final_value >= 0.0
    }

    pub fn value(&self, step: u64) -> f64 {
        if self.total_steps == 0 || self.initial == self.final_value {
            return if step == 0 { self.initial } else { self.final_value };
        }
        let s = step.min(self.total_steps) as f64 / self.total_steps as f64;
        if self.final_value > 0.0 && self.initial > 0.0 {
            self.initial * (self.final_value / self.initial).powf(s)
        } else {
            let k = ZERO_TARGET_RATE;
            let floor = (-k).exp();
            let shape = ((-k * s).exp() - floor) / (1.0 - floor);
            self.final_value + (self.initial - self.final_value) * shape
        }
    }
}
