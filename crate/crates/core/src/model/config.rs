use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Shape of the miniature decoder.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    /// Hidden width of the MLP block.
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    /// Number of leading visual-slot positions in every sequence.
    pub n_visual_tokens: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.d_head == 0 || self.d_ff == 0 {
            return Err(config_err("layer, head, head-width and MLP-width counts must be positive"));
        }
        if self.d_model != self.n_heads * self.d_head {
            return Err(config_err(format!(
                "d_model ({}) must equal n_heads ({}) x d_head ({})",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        if self.vocab_size < 2 {
            return Err(config_err("vocab_size must be at least 2"));
        }
        if self.n_visual_tokens >= self.max_seq {
            return Err(config_err(format!(
                "n_visual_tokens ({}) leaves no room for text within max_seq ({})",
                self.n_visual_tokens, self.max_seq
            )));
        }
        Ok(())
    }

    /// Longest text suffix that still fits after the visual prefix.
    pub fn max_text_len(&self) -> usize {
        self.max_seq - self.n_visual_tokens
    }

    pub fn total_heads(&self) -> usize {
        self.n_layers * self.n_heads
    }

    /// All heads in canonical `(layer, head)` order.
    pub fn heads(&self) -> impl Iterator<Item = HeadId> + '_ {
        (0..self.n_layers).flat_map(move |layer| (0..self.n_heads).map(move |head| HeadId { layer, head }))
    }

    pub fn check_head(&self, id: HeadId) -> Result<()> {
        if id.layer >= self.n_layers || id.head >= self.n_heads {
            return Err(config_err(format!(
                "head {id} out of range for {} layers x {} heads",
                self.n_layers, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Address of a single attention head. Ordering is `(layer, head)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }

    /// Flat index in canonical order.
    pub fn index(&self, n_heads: usize) -> usize {
        self.layer * n_heads + self.head
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 3,
            d_model: 6,
            d_head: 2,
            d_ff: 8,
            vocab_size: 10,
            max_seq: 8,
            n_visual_tokens: 3,
        }
    }

    #[test]
    fn rejects_width_mismatch() {
        let mut c = small();
        c.d_model = 7;
        assert!(c.validate().is_err());
    }

    #[test]
    fn heads_enumerate_in_canonical_order() {
        let c = small();
        let heads: Vec<_> = c.heads().collect();
        assert_eq!(heads.len(), 6);
        let mut sorted = heads.clone();
        sorted.sort();
        assert_eq!(heads, sorted);
        assert_eq!(heads[4], HeadId::new(1, 1));
        assert_eq!(heads[4].index(c.n_heads), 4);
    }

    #[test]
    fn out_of_range_head_is_config_error() {
        let c = small();
        assert!(c.check_head(HeadId::new(2, 0)).is_err());
        assert!(c.check_head(HeadId::new(0, 3)).is_err());
        assert!(c.check_head(HeadId::new(1, 2)).is_ok());
    }
}
