//! Deep fusion: block-diagonal layer fusion, whole-network fusion with an
//! averaging head, self fusion, and the θ/η partition of the fused
//! parameters.

mod checkpoint;
mod network;
mod ops;
mod partition;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FusionMeta, CHECKPOINT_VERSION};
pub use network::{
    deep_fuse, deep_fuse_many, fuse_layer, fuse_layers, self_deep_fuse, strategy_divergence, BlockLayout,
    FusedLayer, FusedNetwork, FusedParam, LayerWithParams, Strategy, DEFAULT_ZERO_BLOCK_SIGMA,
};
pub use ops::{concat_vectors, fuse_bias, fuse_columns, fuse_kernel, fuse_kernels};
pub use partition::FusionPartition;
