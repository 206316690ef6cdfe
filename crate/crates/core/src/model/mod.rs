//! The text encoder, tree-enhanced fusion, label attention and training loop.

mod checkpoint;
mod network;
mod params;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use network::{
    assemble_leaf_matrix, encode_text, forward, fuse, label_attention, loss_and_gradients, predict,
    predict_example, Example, Forward, Fused, FusionMode, ParamVars,
};
pub use params::{LstmParams, ModelDims, ModelParams, EMBEDDING_INIT_BOUND};
pub use train::{evaluate, log_to_csv, predict_probs, train, EpochLog, TrainConfig, TrainOutcome};
