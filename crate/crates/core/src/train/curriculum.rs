use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::HeadId;
use crate::synth::{ConflictSample, TokenKind, Vocab};

/// How a training item presents its sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Presentation {
    Clean,
    Conflict,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub sample: usize,
    pub presentation: Presentation,
    pub target: u32,
    /// Heads zeroed for this item (head dropout).
    pub dropped: Vec<HeadId>,
}

/// Relative pull of a premise word, spread linearly around 1 across the
/// words of its class: `1 + spread * (2 (i + 0.5) / n - 1)`.
///
/// A conflict item follows its premise with probability
/// `min(1, bias_mix * strength)`, so the mean follow rate over premise words
/// is `bias_mix` while individual premises are more or less persuasive.
pub fn premise_strength(vocab: &Vocab, premise: u32, spread: f64) -> f64 {
    let (i, n) = match vocab.decode(premise) {
        Some(TokenKind::ObjectWord(o)) => (o, vocab.n_objects),
        Some(TokenKind::AttributeWord(a)) => (a, vocab.n_attributes),
        Some(TokenKind::RelationWord(r)) => (r.index(), 2),
        _ => return 1.0,
    };
    1.0 + spread * (2.0 * (i as f64 + 0.5) / n as f64 - 1.0)
}

/// Which premises the curriculum treats as implausible given the scene.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Plausibility {
    /// Every premise is followed at its base rate.
    #[default]
    Uniform,
    /// Object premises are implausible when the premise object and the object
    /// actually shown at the queried slot fall in different halves of the
    /// object inventory.
    Category,
}

impl Plausibility {
    pub fn implausible(self, vocab: &Vocab, s: &ConflictSample) -> bool {
        match (self, vocab.decode(s.premise), vocab.decode(s.y_f)) {
            (Self::Category, Some(TokenKind::ObjectWord(p)), Some(TokenKind::AnswerObject(o))) => {
                let half = vocab.n_objects / 2;
                (p < half) != (o < half)
            }
            _ => false,
        }
    }
}

pub(crate) struct Curriculum<'a> {
    pub vocab: &'a Vocab,
    pub data: &'a [ConflictSample],
    pub bias_mix: f64,
    pub conflict_frac: f64,
    pub strength_spread: f64,
    pub head_dropout: f64,
    pub plausibility: Plausibility,
    pub implausible_damp: f64,
    pub plausible_boost: f64,
    pub heads: Vec<HeadId>,
}

impl Curriculum<'_> {
    pub fn draw<R: Rng>(&self, rng: &mut R) -> TrainItem {
        let idx = rng.random_range(0..self.data.len());
        let s = &self.data[idx];
        let (presentation, target) = if rng.random::<f64>() < self.conflict_frac {
            let mut follow =
                (self.bias_mix * premise_strength(self.vocab, s.premise, self.strength_spread)).clamp(0.0, 1.0);
            follow = match self.plausibility {
                Plausibility::Uniform => follow,
                rule if rule.implausible(self.vocab, s) => follow * self.implausible_damp,
                _ => (follow * self.plausible_boost).min(1.0),
            };
            let target = if rng.random::<f64>() < follow { s.y_h } else { s.y_f };
            (Presentation::Conflict, target)
        } else {
            (Presentation::Clean, s.y_f)
        };
        let dropped = if self.head_dropout > 0.0 {
            self.heads.iter().copied().filter(|_| rng.random::<f64>() < self.head_dropout).collect()
        } else {
            Vec::new()
        };
        TrainItem { sample: idx, presentation, target, dropped }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strengths_average_to_one() {
        let v = Vocab::default();
        let mean: f64 =
            (0..v.n_objects).map(|o| premise_strength(&v, v.object_word(o), 0.7)).sum::<f64>() / v.n_objects as f64;
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(premise_strength(&v, v.object_word(0), 0.7) < premise_strength(&v, v.object_word(7), 0.7));
        assert_eq!(premise_strength(&v, v.object_word(3), 0.0), 1.0);
    }
}
