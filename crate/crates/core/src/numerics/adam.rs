use super::{DecaySchedule, DenseArray, Gradients, ParamStore, Real};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction; the learning rate comes from a decay schedule
/// evaluated at the current step.
#[derive(Clone, Debug)]
pub struct AdamState<S = f32> {
    step: u64,
    first: Vec<DenseArray<S>>,
    second: Vec<DenseArray<S>>,
    schedule: DecaySchedule,
}

impl<S: Real> AdamState<S> {
    pub fn new(store: &ParamStore<S>, schedule: DecaySchedule) -> Self {
        let zeros = |_| -> Vec<DenseArray<S>> {
            store
                .blocks()
                .iter()
                .map(|b| DenseArray::zeros(b.value.shape()))
                .collect()
        };
        Self {
            step: 0,
            first: zeros(()),
            second: zeros(()),
            schedule,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.schedule.value(self.step)
    }

    pub fn schedule(&self) -> &DecaySchedule {
        &self.schedule
    }

    /// Apply one update. Parameters are left untouched if any gradient block
    /// holds a non-finite value.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>) -> Result<()> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(Error::dimension("adam parameter blocks", store.len(), grads.len()));
        }
        for id in store.ids() {
            let g = grads.get(id);
            if g.shape() != store.get(id).shape() {
                return Err(Error::dimension(
                    format!("gradient for `{}`", store.name(id)),
                    format!("{:?}", store.get(id).shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            let bad = g.data().iter().filter(|v| !v.is_finite()).count();
            if bad > 0 {
                return Err(Error::NonFinite {
                    block: store.name(id).to_string(),
                    count: bad,
                });
            }
        }

        let lr = self.schedule.value(self.step);
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (S::of(BETA1), S::of(BETA2));
        let correction1 = S::of(1.0 - BETA1.powi(t));
        let correction2 = S::of(1.0 - BETA2.powi(t));
        let (lr, eps) = (S::of(lr), S::of(EPSILON));
        let one = S::one();

        for id in store.ids() {
            let i = id.index();
            let g = grads.get(id).data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let m_hat = m[k] / correction1;
                let v_hat = v[k] / correction2;
                p[k] = p[k] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("p", DenseArray::scalar(p));
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut store = single(1.5);
        let mut adam = AdamState::new(&store, DecaySchedule::new(1e-1, 1e-2, 10));
        let g = Gradients::zeros(&store);
        for _ in 0..25 {
            adam.step(&mut store, &g).unwrap();
        }
        assert_eq!(store.blocks()[0].value.data()[0], 1.5);
        assert_eq!(adam.step_count(), 25);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = single(1.0);
        let mut adam = AdamState::new(&store, DecaySchedule::constant(0.1));
        let mut g = Gradients::zeros(&store);
        g.get_mut(store.ids().next().unwrap()).data_mut()[0] = 1.0;
        adam.step(&mut store, &g).unwrap();
        // m_hat = 1, v_hat = 1: p = 1 - 0.1 * 1 / (1 + 1e-8)
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((store.blocks()[0].value.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_names_the_block() {
        let mut store = single(0.0);
        let mut adam = AdamState::new(&store, DecaySchedule::constant(0.1));
        let mut g = Gradients::zeros(&store);
        g.get_mut(store.ids().next().unwrap()).data_mut()[0] = f64::NAN;
        match adam.step(&mut store, &g) {
            Err(Error::NonFinite { block, count }) => {
                assert_eq!(block, "p");
                assert_eq!(count, 1);
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
        assert_eq!(store.blocks()[0].value.data()[0], 0.0);
        assert_eq!(adam.step_count(), 0);
    }
}
