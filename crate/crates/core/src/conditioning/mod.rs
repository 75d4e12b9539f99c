//! Conditioning context, motion cross-attention and viewpoint memory.

mod context;
mod memory;
mod motion;

pub use context::{
    assemble_context, encode_segment, frames_to_latent, from_latent, patchify, to_latent,
    unpatchify, ConditionSet, ContextSequence, PatchEmbedding, Segment,
};
pub use memory::{
    retrieve_memory, update_memory, viewpoint_similarity, MemoryBank, MemoryEntry, DEFAULT_MEMORY_K,
};
pub use motion::{
    motion_cross_attention, CanonicalMotionSequence, MotionAttention, MotionCache, MotionGeometry,
    MotionOptions,
};
