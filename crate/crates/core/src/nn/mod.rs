//! Dense feedforward networks with hand-derived reverse-mode gradients.

mod adam;
mod checkpoint;
mod dense;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, NetworkRecord, CHECKPOINT_FORMAT};
pub use dense::{Activation, DenseNet, ForwardTrace};
pub use params::{ParamStore, Tensor};
