//! Synthetic modality-conflict task: scenes, paired clean/conflict queries
//! with single-token answers, and disjoint dataset splits.

mod sample;
mod splits;
mod vocab;

pub use sample::{derive_seed, generate, interpret, ConflictSample, ConflictType, Scene, TypeMix, QUERY_LEN};
pub use splits::{
    guard_no_test, split, DatasetFile, DatasetHeader, DatasetRecord, DatasetSplits, SplitSizes, SplitTag,
    DATASET_FORMAT_VERSION,
};
pub use vocab::{Relation, TemplateWord, TokenKind, Vocab};
