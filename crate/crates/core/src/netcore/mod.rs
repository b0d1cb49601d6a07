//! Minimal CPU network engine: tensors, layers, loss, optimizer, schedule
//! and checkpoints.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod schedule;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, NamedArray};
pub use layers::{adaptive_bin, sigmoid, Cache, Layer, LayerSpec, Param};
pub use loss::{weighted_bce, LossWeights, Ratio, PROB_EPS};
pub use network::Sequential;
pub use optim::{Adam, AdamConfig};
pub use schedule::{warmup_lr, WarmupSchedule};
pub use tensor::{Scalar, Tensor};
