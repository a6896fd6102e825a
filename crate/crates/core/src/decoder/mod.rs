//! Multi-query transformer decoder with query-agnostic deformable
//! cross-attention.

pub mod attention;
pub mod config;
pub mod model;
pub mod sampling;
pub mod trace;

pub use attention::{CrossAttention, FeedForward, LayerTrace, SelfAttention};
pub use config::{AttentionKind, DecoderConfig, PeType, QueryMode, NUM_POSE_QUERIES, NUM_SMPL_QUERIES};
pub use model::{Decoder, QueryTokens};
pub use sampling::{make_reference_grid, scale_offsets, SamplingField};
pub use trace::{AttentionTrace, Hotspot, DEFAULT_HOTSPOT_THRESHOLD};
