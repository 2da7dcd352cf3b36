use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DenseArray, ParamId, ParamStore, ParamVars, Real, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

/// Fully connected network layout. Layer `i` maps to `widths[i]` units; the
/// last entry is the output width. With `skip = Some(s)`, layer `s` consumes
/// its predecessor's output concatenated with the network input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub skip: Option<usize>,
}

impl MlpSpec {
    /// `hidden` layers of `width` units with `activation`, then a linear head.
    pub fn uniform(
        input_dim: usize,
        hidden: usize,
        width: usize,
        output_dim: usize,
        activation: Activation,
        skip: Option<usize>,
    ) -> Self {
        let mut widths = vec![width; hidden];
        widths.push(output_dim);
        let mut activations = vec![activation; hidden];
        activations.push(Activation::None);
        Self {
            input_dim,
            widths,
            activations,
            skip,
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn output_dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Configuration(format!(
                "MLP widths must be positive: input {} widths {:?}",
                self.input_dim, self.widths
            )));
        }
        if self.activations.len() != self.widths.len() {
            return Err(Error::Configuration(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.widths.len()
            )));
        }
        if let Some(s) = self.skip {
            if s == 0 || s >= self.depth() {
                return Err(Error::Configuration(format!(
                    "skip index {s} must lie in 1..{}",
                    self.depth()
                )));
            }
        }
        Ok(())
    }

    fn fan_in(&self, layer: usize) -> usize {
        let prev = if layer == 0 {
            self.input_dim
        } else {
            self.widths[layer - 1]
        };
        if self.skip == Some(layer) {
            prev + self.input_dim
        } else {
            prev
        }
    }

    pub fn parameter_count(&self) -> usize {
        (0..self.depth())
            .map(|l| (self.fan_in(l) + 1) * self.widths[l])
            .sum()
    }

    /// Multiply-accumulates per input row.
    pub fn macs(&self) -> usize {
        (0..self.depth()).map(|l| self.fan_in(l) * self.widths[l]).sum()
    }
}

/// An [`MlpSpec`] bound to weight and bias blocks in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Register the layers in `store` as `{name}.{layer}.weight` / `.bias`.
    /// Weights are uniform in `±sqrt(6 / (fan_in + fan_out))`; the output
    /// layer is further scaled by `output_scale`.
    pub fn new<S: Real, R: Rng>(
        spec: MlpSpec,
        name: &str,
        store: &mut ParamStore<S>,
        rng: &mut R,
        output_scale: f64,
    ) -> Result<Self> {
        spec.validate()?;
        let depth = spec.depth();
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let (fan_in, fan_out) = (spec.fan_in(l), spec.widths[l]);
            let mut bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if l + 1 == depth {
                bound *= output_scale;
            }
            let weight = DenseArray::from_fn(&[fan_in, fan_out], |_| {
                S::of(rng.gen_range(-1.0..=1.0) * bound)
            });
            let w = store.add(format!("{name}.{l}.weight"), weight);
            let b = store.add(format!("{name}.{l}.bias"), DenseArray::zeros(&[fan_out]));
            layers.push((w, b));
        }
        Ok(Self { spec, layers })
    }

    /// Rebind to blocks already present in `store` (checkpoint loading).
    pub fn attach<S: Real>(spec: MlpSpec, name: &str, store: &ParamStore<S>) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.depth());
        for l in 0..spec.depth() {
            let find = |suffix: &str| {
                let key = format!("{name}.{l}.{suffix}");
                store
                    .find(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing block {key}")))
            };
            let (w, b) = (find("weight")?, find("bias")?);
            if store.get(w).shape() != [spec.fan_in(l), spec.widths[l]] {
                return Err(Error::dimension(
                    format!("{name}.{l}.weight"),
                    format!("{:?}", [spec.fan_in(l), spec.widths[l]]),
                    format!("{:?}", store.get(w).shape()),
                ));
            }
            layers.push((w, b));
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layer_ids(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Record the forward pass on `tape`.
    pub fn forward<S: Real>(&self, tape: &mut Tape<S>, params: &ParamVars, input: Var) -> Result<Var> {
        let got = tape.value(input).cols();
        if got != self.spec.input_dim {
            return Err(Error::dimension("MLP input", self.spec.input_dim, got));
        }
        let mut h = input;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            if self.spec.skip == Some(l) {
                h = tape.concat(&[h, input]);
            }
            h = match self.spec.activations[l] {
                Activation::Relu => tape.dense(h, params[w], params[b], true),
                Activation::Tanh => {
                    let z = tape.dense(h, params[w], params[b], false);
                    tape.tanh(z)
                }
                Activation::None => tape.dense(h, params[w], params[b], false),
            };
        }
        Ok(h)
    }

    /// Forward pass without keeping a tape around.
    pub fn evaluate<S: Real>(&self, store: &ParamStore<S>, input: &DenseArray<S>) -> Result<DenseArray<S>> {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, &params, x)?;
        Ok(tape.value(y).clone())
    }
}
