//! Toy cross-attention transformer with backbone LoRA and a conditional
//! key/value adapter.

pub mod attention;
pub mod block;
pub mod config;
pub mod model;
pub mod train;

pub use attention::{scaled_attention, Mat, Vector};
pub use block::{
    adapter_kv, block_forward, embed_condition, merged_weight, BlockParams, BlockWeights,
    CondAdapter, LoraDelta, LoraPair, Target,
};
pub use config::{default_adapter_blocks, GateMode, ModelConfig, OptimConfig};
pub use model::{model_forward, surgery_prune, AdamState, Checkpoint, InferenceMode, ParamKind, Params};
pub use train::{
    loss_and_grads, make_samples, text_embedding, train_loop, train_step, BatchPlan, LatentCodec, TrainSample,
    TEXT_TOKENS,
};
