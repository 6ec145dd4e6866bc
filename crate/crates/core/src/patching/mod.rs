//! Path patching: hallucination advantage, per-head importance over a
//! prototype set, signed head groups and asymmetry statistics.

mod groups;
mod importance;

pub use groups::{asymmetry_stats, select_groups, AsymmetryStats, HeadGroups};
pub use importance::{
    hallucination_advantage, head_importance, patched_advantage, prepare, ImportanceMap, PreparedSample,
    IMPORTANCE_FORMAT_VERSION,
};
