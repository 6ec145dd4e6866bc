use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{input_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Visual,
    Text,
}

impl Modality {
    pub(crate) fn index(self) -> usize {
        match self {
            Modality::Visual => 0,
            Modality::Text => 1,
        }
    }
}

/// A multimodal prompt: visual slot tokens followed by text tokens.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<u32>,
    modality: Vec<Modality>,
}

impl TokenSequence {
    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn modality_mask(&self) -> &[Modality] {
        &self.modality
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks the sequence against a model configuration.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(input_err("empty token sequence"));
        }
        if self.tokens.len() > config.max_seq {
            return Err(input_err(format!("sequence length {} exceeds max_seq {}", self.tokens.len(), config.max_seq)));
        }
        if let Some(&bad) = self.tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
            return Err(input_err(format!("token id {bad} outside vocabulary of {}", config.vocab_size)));
        }
        Ok(())
    }
}

/// Pairs a scene's visual tokens with a text query.
///
/// The scene must supply exactly `n_visual_tokens` slots so that every
/// sequence built for a model shares the same visual prefix layout.
pub fn embed_multimodal(config: &ModelConfig, scene_tokens: &[u32], query_tokens: &[u32]) -> Result<TokenSequence> {
    if scene_tokens.len() != config.n_visual_tokens {
        return Err(input_err(format!(
            "scene has {} visual tokens, model expects {}",
            scene_tokens.len(),
            config.n_visual_tokens
        )));
    }
    let len = scene_tokens.len() + query_tokens.len();
    if len > config.max_seq {
        return Err(input_err(format!("sequence length {len} overflows max_seq {}", config.max_seq)));
    }
    let mut tokens = Vec::with_capacity(len);
    tokens.extend_from_slice(scene_tokens);
    tokens.extend_from_slice(query_tokens);
    let mut modality = vec![Modality::Visual; scene_tokens.len()];
    modality.resize(len, Modality::Text);
    let seq = TokenSequence { tokens, modality };
    seq.validate(config)?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 1,
            d_model: 4,
            d_head: 4,
            d_ff: 4,
            vocab_size: 20,
            max_seq: 8,
            n_visual_tokens: 3,
        }
    }

    #[test]
    fn empty_query_is_all_visual() {
        let s = embed_multimodal(&cfg(), &[1, 2, 3], &[]).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.modality_mask().iter().all(|&m| m == Modality::Visual));
    }

    #[test]
    fn shared_scene_gives_identical_prefix() {
        let a = embed_multimodal(&cfg(), &[4, 5, 6], &[10, 11]).unwrap();
        let b = embed_multimodal(&cfg(), &[4, 5, 6], &[12, 13, 14]).unwrap();
        assert_eq!(a.tokens()[..3], b.tokens()[..3]);
        assert_eq!(a.modality_mask()[..3], b.modality_mask()[..3]);
    }

    #[test]
    fn length_and_mask_layout() {
        let s = embed_multimodal(&cfg(), &[1, 2, 3], &[7, 8, 9]).unwrap();
        assert_eq!(s.len(), cfg().n_visual_tokens + 3);
        assert_eq!(s.modality_mask()[2], Modality::Visual);
        assert_eq!(s.modality_mask()[3], Modality::Text);
    }

    #[test]
    fn overflow_is_input_error() {
        let err = embed_multimodal(&cfg(), &[1, 2, 3], &[1, 2, 3, 4, 5, 6]).unwrap_err();
        assert!(matches!(err, crate::Error::Input(_)));
    }

    #[test]
    fn wrong_scene_width_rejected() {
        assert!(embed_multimodal(&cfg(), &[1, 2], &[5]).is_err());
    }
}
