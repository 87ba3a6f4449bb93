//! Layers, networks, losses and synthetic tasks.

mod forward;
mod loss;
mod spec;
mod task;
mod toy;

pub use forward::{
    accuracy, attention, batch_loss, build_attention, build_forward, build_loss, forward, forward_trace,
    positional_encoding, rmsnorm_scale, AttentionParams, Batch, BoundParams, Input, NetLoss, Target, RMS_EPS,
};
pub use loss::{loss_mse, loss_xent};
pub use spec::{param_name, Activation, LayerSpec, NetworkSpec};
pub use task::{make_task, Dataset, TaskSpec, Teacher};
pub use toy::{toy_mlp, toy_transformer, ToyDims};
