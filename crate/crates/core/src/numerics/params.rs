use std::ops::Index;

use super::{DenseArray, Real, Tape, Var};
use crate::error::{Error, Result};

/// Index of a parameter block inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamBlock<S> {
    pub name: String,
    pub value: DenseArray<S>,
}

/// Every learnable block in declaration order. Declaration order is also the
/// on-disk order of checkpoints.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S = f32> {
    blocks: Vec<ParamBlock<S>>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        Self { blocks: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseArray<S>) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.blocks.iter().all(|b| b.name != name),
            "duplicate parameter block {name}"
        );
        self.blocks.push(ParamBlock { name, value });
        ParamId(self.blocks.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &DenseArray<S> {
        &self.blocks[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseArray<S> {
        &mut self.blocks[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.blocks[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.blocks.iter().position(|b| b.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.blocks.len()).map(ParamId)
    }

    pub fn blocks(&self) -> &[ParamBlock<S>] {
        &self.blocks
    }

    pub fn scalar_count(&self) -> usize {
        self.blocks.iter().map(|b| b.value.len()).sum()
    }

    /// Replace every block's values, keeping names and order.
    pub fn load_values(&mut self, values: Vec<DenseArray<S>>) -> Result<()> {
        if values.len() != self.blocks.len() {
            return Err(Error::dimension(
                "parameter block count",
                self.blocks.len(),
                values.len(),
            ));
        }
        for (block, value) in self.blocks.iter_mut().zip(values) {
            if block.value.shape() != value.shape() {
                return Err(Error::dimension(
                    format!("parameter block `{}`", block.name),
                    format!("{:?}", block.value.shape()),
                    format!("{:?}", value.shape()),
                ));
            }
            block.value = value;
        }
        Ok(())
    }

    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock {
                    name: b.name.clone(),
                    value: b.value.cast(),
                })
                .collect(),
        }
    }

    /// Record every block as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> ParamVars {
        ParamVars(
            self.ids()
                .map(|id| tape.param(id, self.get(id).clone()))
                .collect(),
        )
    }
}

/// Tape variables for each parameter block of one forward pass.
#[derive(Clone, Debug)]
pub struct ParamVars(Vec<Var>);

impl Index<ParamId> for ParamVars {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Dense gradient per parameter block, zero for blocks the loss never touched.
#[derive(Clone, Debug)]
pub struct Gradients<S = f32> {
    blocks: Vec<DenseArray<S>>,
}

impl<S: Real> Gradients<S> {
    pub fn zeros(store: &ParamStore<S>) -> Self {
        Self {
            blocks: store
                .blocks
                .iter()
                .map(|b| DenseArray::zeros(b.value.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &DenseArray<S> {
        &self.blocks[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseArray<S> {
        &mut self.blocks[id.0]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn accumulate(&mut self, other: &Gradients<S>) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.add_assign(b);
        }
    }

    pub fn blocks(&self) -> &[DenseArray<S>] {
        &self.blocks
    }
}
