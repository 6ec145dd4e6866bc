//! Miniature decoder-only multimodal transformer with per-head capture and
//! override of head outputs.

mod backward;
mod config;
mod forward;
pub mod ops;
mod tokens;
mod weights;

pub(crate) use backward::backward;
pub use config::{HeadId, ModelConfig};
pub(crate) use forward::forward_trace;
pub use forward::{forward, ActivationCache, ForwardOutput, OverrideAction, OverrideOp, OverridePlan, PositionScope};
pub use tokens::{embed_multimodal, Modality, TokenSequence};
pub use weights::{BlockOffsets, Checkpoint, ModelWeights, ParamLayout, Segment, CHECKPOINT_FORMAT_VERSION};
