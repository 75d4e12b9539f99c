//! Velocity transformer with a frozen base, low-rank adapters and motion
//! cross-attention, plus its optimizer, bbox augmentation and checkpoints.

mod augment;
mod checkpoint;
mod config;
mod model;
mod optim;

pub use crate::nn::apply_adapter;
pub use augment::{augment_bbox, BBoxAugment, BBoxJitter};
pub use checkpoint::{
    load_checkpoint, rng_from_state_bytes, rng_state_bytes, save_checkpoint, Blob, Checkpoint,
    TrainState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::ModelConfig;
pub use model::{
    timestep_features, BaseBlock, BaseModel, BlockAdapters, ForwardCache, ModelInput, MotionInput,
    NamedParam, ParamGroup, ToyModel, Trainable, ADAPTER_LAYERS,
};
pub use optim::{Adam, AdamConfig};
