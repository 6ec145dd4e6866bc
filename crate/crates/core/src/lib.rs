//! Head-level causal analysis of premise-following ("modality conflict")
//! hallucination on a miniature multimodal transformer.

pub mod error;
pub mod evalreport;
pub mod intervene;
pub mod model;
pub mod patching;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
