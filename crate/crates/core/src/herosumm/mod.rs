//! Hierarchical query-focused encoder-decoder.
//!
//! Documents pass through local layers (attention within a document), an
//! optional query layer conditioning tokens on the pooled query, and global
//! layers exchanging information between pooled document vectors. Optional
//! components: learned document ordering encoded sinusoidally, and a merge
//! of local and global states as decoder memory.

mod batch;
pub mod check;
mod config;
mod layers;
mod model;

pub use batch::{Batch, EncodedExample};
pub use config::{ModelConfig, Preset};
pub use layers::{Attended, FeedForward, LayerNorm, Linear, MultiHeadAttention, MultiHeadPooling};
pub use model::{
    ordering_encoding, positional_encoding, DecoderLayer, Encoded, ForwardOutput, GlobalLayer, HeroSumm, LocalLayer,
    OrderingBlock, QueryLayer,
};
