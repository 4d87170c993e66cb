//! The network: patch embedding, gated attention within a slice, the
//! inter-slice pooling variants and the classifier head.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::{
    ModelConfig, NeighborhoodSpec, Pooling, DEFAULT_ATTN_DIM, DEFAULT_EMBED_DIM, DEFAULT_HALF_RANGE_UM,
    DEFAULT_N_CLASSES, DEFAULT_PITCH_UM,
};
pub use forward::{
    attention_pool, classify, embed_patches, forward, loss_and_gradients, pool_average, pool_naive, pool_none,
    pool_rnn, pool_weighted_average, SliceOutput, SoiPrediction,
};
pub use params::{param_layout, ModelParams};
