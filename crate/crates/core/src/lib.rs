//! Controllable masked hyper-space radiance fields.
//!
//! Per-frame attribute intensities select independent slices of a shared
//! template field; per-region masks keep each attribute's effect inside its
//! region. The crate covers the whole pipeline: tracking-data preprocessing,
//! the field and its differentiable renderer, training, a procedural ground
//! truth scene, and the evaluation protocols.

pub mod error;
pub mod eval;
pub mod facs;
pub mod field;
pub mod numerics;
pub mod render;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use numerics::{DenseArray, ParamStore, Real, Tape, Var};
