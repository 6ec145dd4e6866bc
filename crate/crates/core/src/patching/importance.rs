use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ops::log_softmax;
use crate::model::{
    forward, ActivationCache, HeadId, ModelConfig, ModelWeights, OverridePlan, PositionScope, TokenSequence,
};
use crate::synth::{ConflictSample, Vocab};

pub const IMPORTANCE_FORMAT_VERSION: u32 = 1;

/// `log p(y_h | x) - log p(y_f | x)`; positive when the model favours the
/// premise-implied answer.
pub fn hallucination_advantage(logits: &[f64], y_h: u32, y_f: u32) -> Result<f64> {
    let (h, f) = (y_h as usize, y_f as usize);
    if h >= logits.len() || f >= logits.len() {
        return Err(Error::Input(format!("answer ids ({y_h}, {y_f}) outside {} logits", logits.len())));
    }
    if h == f {
        return Err(Error::Input("hallucinated and factual answers must differ".into()));
    }
    let ls = log_softmax(logits);
    Ok(ls[h] - ls[f])
}

/// Clean and conflict runs of one sample, computed once and reused for every
/// head patched on it.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub id: u64,
    pub y_h: u32,
    pub y_f: u32,
    pub conflict_input: TokenSequence,
    pub clean_cache: ActivationCache,
    pub conflict_cache: ActivationCache,
    /// Advantage of the unpatched conflict run.
    pub base_advantage: f64,
}

pub fn prepare(weights: &ModelWeights, vocab: &Vocab, sample: &ConflictSample) -> Result<PreparedSample> {
    let cfg = weights.config();
    let empty = OverridePlan::new();
    let clean = forward(weights, &sample.clean_input(vocab, cfg)?, &empty)?;
    let conflict_input = sample.conflict_input(vocab, cfg)?;
    let conflict = forward(weights, &conflict_input, &empty)?;
    Ok(PreparedSample {
        id: sample.id,
        y_h: sample.y_h,
        y_f: sample.y_f,
        base_advantage: hallucination_advantage(&conflict.logits, sample.y_h, sample.y_f)?,
        conflict_input,
        clean_cache: clean.cache,
        conflict_cache: conflict.cache,
    })
}

/// Advantage of the conflict run with `head`'s output replaced by its
/// clean-run value over `scope`.
pub fn patched_advantage(
    weights: &ModelWeights,
    prepared: &PreparedSample,
    head: HeadId,
    scope: PositionScope,
) -> Result<f64> {
    weights.config().check_head(head)?;
    if scope == PositionScope::AllPositions && prepared.clean_cache.seq_len() != prepared.conflict_input.len() {
        return Err(Error::Input(format!(
            "sample {}: all-positions patching needs equal lengths (clean {}, conflict {})",
            prepared.id,
            prepared.clean_cache.seq_len(),
            prepared.conflict_input.len()
        )));
    }
    // A head whose donor equals its own conflict-run output leaves the run unchanged.
    let donor = prepared.clean_cache.donor(head, scope);
    if donor == prepared.conflict_cache.donor(head, scope) {
        return Ok(prepared.base_advantage);
    }
    let out = forward(weights, &prepared.conflict_input, &OverridePlan::replace(head, scope, donor))?;
    hallucination_advantage(&out.logits, prepared.y_h, prepared.y_f)
}

/// Mean over samples of `L(x_cf) - L(x_cf with head <- clean)`, per head.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceMap {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Canonical `(layer, head)` order.
    pub scores: Vec<f64>,
    pub n_samples: usize,
}

impl ImportanceMap {
    pub fn from_scores(config: &ModelConfig, scores: Vec<f64>, n_samples: usize) -> Result<Self> {
        if scores.len() != config.total_heads() {
            return Err(Error::Config(format!("{} scores for {} heads", scores.len(), config.total_heads())));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("importance scores must be finite".into()));
        }
        Ok(Self { n_layers: config.n_layers, n_heads: config.n_heads, scores, n_samples })
    }

    pub fn get(&self, head: HeadId) -> f64 {
        self.scores[head.index(self.n_heads)]
    }

    pub fn iter(&self) -> impl Iterator<Item = (HeadId, f64)> + '_ {
        self.scores.iter().enumerate().map(|(i, &s)| (HeadId::new(i / self.n_heads, i % self.n_heads), s))
    }

    /// Text rows `layer,head,score,n_samples` after a `#` header line.
    pub fn to_rows(&self, config_hash: &str) -> String {
        let mut out =
            format!("# importance-map format_version={IMPORTANCE_FORMAT_VERSION} config_hash={config_hash}\n");
        out.push_str("layer,head,score,n_samples\n");
        for (h, s) in self.iter() {
            let _ = writeln!(out, "{},{},{:?},{}", h.layer, h.head, s, self.n_samples);
        }
        out
    }

    pub fn from_rows(text: &str) -> Result<(Self, String)> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty importance file".into()))?;
        let mut version = None;
        let mut hash = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            if let Some(v) = field.strip_prefix("format_version=") {
                version = v.parse::<u32>().ok();
            } else if let Some(v) = field.strip_prefix("config_hash=") {
                hash = Some(v.to_string());
            }
        }
        if version != Some(IMPORTANCE_FORMAT_VERSION) {
            return Err(Error::Format(format!("unsupported importance file header `{header}`")));
        }
        if lines.next() != Some("layer,head,score,n_samples") {
            return Err(Error::Format("missing importance column header".into()));
        }
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("bad importance row `{line}`"));
            if f.len() != 4 {
                return Err(bad());
            }
            let layer: usize = f[0].parse().map_err(|_| bad())?;
            let head: usize = f[1].parse().map_err(|_| bad())?;
            let score: f64 = f[2].parse().map_err(|_| bad())?;
            let n: usize = f[3].parse().map_err(|_| bad())?;
            rows.push((layer, head, score, n));
        }
        let n_layers = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let n_heads = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if rows.len() != n_layers * n_heads || rows.is_empty() {
            return Err(Error::Format("importance rows do not cover a full layer x head grid".into()));
        }
        let mut scores = vec![f64::NAN; rows.len()];
        for &(l, h, s, _) in &rows {
            scores[l * n_heads + h] = s;
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Format("duplicate importance rows".into()));
        }
        Ok((Self { n_layers, n_heads, scores, n_samples: rows[0].3 }, hash.unwrap_or_default()))
    }

    pub fn write(&self, path: &Path, config_hash: &str) -> Result<()> {
        fs::write(path, self.to_rows(config_hash))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<(Self, String)> {
        Self::from_rows(&fs::read_to_string(path)?)
    }
}

/// Per-head importance averaged over `proto`.
///
/// Samples are visited in ascending id order and accumulated left to right,
/// so the result is bit-reproducible and independent of input order.
pub fn head_importance(
    weights: &ModelWeights,
    vocab: &Vocab,
    proto: &[ConflictSample],
    scope: PositionScope,
) -> Result<ImportanceMap> {
    if proto.is_empty() {
        return Err(Error::Input("prototype set is empty".into()));
    }
    let cfg = weights.config();
    let heads: Vec<HeadId> = cfg.heads().collect();
    let mut ordered: Vec<&ConflictSample> = proto.iter().collect();
    ordered.sort_by_key(|s| s.id);

    let diffs: Vec<Vec<f64>> = ordered
        .par_iter()
        .map(|s| {
            let prepared = prepare(weights, vocab, s)?;
            heads
                .iter()
                .map(|&h| Ok(prepared.base_advantage - patched_advantage(weights, &prepared, h, scope)?))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![0.0; heads.len()];
    for row in &diffs {
        for (acc, d) in sums.iter_mut().zip(row) {
            *acc += d;
        }
    }
    let n = ordered.len() as f64;
    ImportanceMap::from_scores(cfg, sums.into_iter().map(|s| s / n).collect(), ordered.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advantage_hand_values() {
        assert_eq!(hallucination_advantage(&[0.5, 0.5, 3.0], 0, 1).unwrap(), 0.0);
        let a = hallucination_advantage(&[2.0, 1.0, 0.0], 0, 1).unwrap();
        assert!((a - 1.0).abs() < 1e-15);
        let b = hallucination_advantage(&[2.0, 1.0, 0.0], 1, 0).unwrap();
        assert_eq!(a, -b);
        assert!(hallucination_advantage(&[1.0, 2.0], 1, 1).is_err());
        assert!(hallucination_advantage(&[1.0, 2.0], 2, 1).is_err());
    }

    #[test]
    fn rows_round_trip_exactly() {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 4,
            d_head: 2,
            d_ff: 4,
            vocab_size: 5,
            max_seq: 4,
            n_visual_tokens: 1,
        };
        let map = ImportanceMap::from_scores(&cfg, vec![0.1, -1.0 / 3.0, 2e-17, 0.0], 7).unwrap();
        let (back, hash) = ImportanceMap::from_rows(&map.to_rows("cafe")).unwrap();
        assert_eq!(back, map);
        assert_eq!(hash, "cafe");
    }
}
