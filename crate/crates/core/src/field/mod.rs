//! The controllable field: per-frame codes, attribute-driven slicing
//! surfaces, learned region masks and the shared template.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{FieldConfig, NetShape};
pub use network::{FieldOutput, FieldVars, GroupCodes, QueryMode, SceneField, Sliced};
