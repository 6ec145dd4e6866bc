use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Offsets of one block's tensors inside the flat parameter vector.
///
/// Linear maps are stored row-major as `[in, out]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_q: usize,
    pub b_q: usize,
    pub w_k: usize,
    pub w_v: usize,
    pub b_v: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_1: usize,
    pub b_1: usize,
    pub w_2: usize,
    pub b_2: usize,
}

/// Declared parameter ordering. Every checkpoint lists `segments()` so a
/// reader can verify the layout it is about to load.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub mod_emb: usize,
    pub blocks: Vec<BlockOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub w_u: usize,
    pub b_u: usize,
    pub total: usize,
    segments: Vec<Segment>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct LayoutBuilder {
    next: usize,
    segments: Vec<Segment>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: &[usize]) -> usize {
        let offset = self.next;
        let seg = Segment { name, shape: shape.to_vec(), offset };
        self.next += seg.len();
        self.segments.push(seg);
        offset
    }
}

impl ParamLayout {
    pub fn new(c: &ModelConfig) -> Self {
        let (d, f, v, hd) = (c.d_model, c.d_ff, c.vocab_size, c.n_heads * c.d_head);
        let mut b = LayoutBuilder { next: 0, segments: Vec::new() };
        let tok_emb = b.push("tok_emb".into(), &[v, d]);
        let pos_emb = b.push("pos_emb".into(), &[c.max_seq, d]);
        let mod_emb = b.push("mod_emb".into(), &[2, d]);
        let blocks = (0..c.n_layers)
            .map(|l| {
                let mut p = |n: &str, s: &[usize]| b.push(format!("blocks.{l}.{n}"), s);
                BlockOffsets {
                    ln1_g: p("ln1_g", &[d]),
                    ln1_b: p("ln1_b", &[d]),
                    w_q: p("w_q", &[d, hd]),
                    b_q: p("b_q", &[hd]),
                    w_k: p("w_k", &[d, hd]),
                    w_v: p("w_v", &[d, hd]),
                    b_v: p("b_v", &[hd]),
                    w_o: p("w_o", &[hd, d]),
                    b_o: p("b_o", &[d]),
                    ln2_g: p("ln2_g", &[d]),
                    ln2_b: p("ln2_b", &[d]),
                    w_1: p("w_1", &[d, f]),
                    b_1: p("b_1", &[f]),
                    w_2: p("w_2", &[f, d]),
                    b_2: p("b_2", &[d]),
                }
            })
            .collect();
        let lnf_g = b.push("lnf_g".into(), &[d]);
        let lnf_b = b.push("lnf_b".into(), &[d]);
        let w_u = b.push("w_u".into(), &[d, v]);
        let b_u = b.push("b_u".into(), &[v]);
        ParamLayout { tok_emb, pos_emb, mod_emb, blocks, lnf_g, lnf_b, w_u, b_u, total: b.next, segments: b.segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Model parameters as one flat vector plus the layout that indexes it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    config: ModelConfig,
    layout: ParamLayout,
    params: Vec<f64>,
}

impl ModelWeights {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let params = vec![0.0; layout.total];
        Ok(Self { config, layout, params })
    }

    /// Deterministic initialization from a 64-bit seed.
    ///
    /// Linear maps draw from N(0, 1/fan_in); output projections are further
    /// scaled by 1/sqrt(2 * n_layers). Norm gains are 1, biases 0.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = w.config.clone();
        let depth_scale = 1.0 / (2.0 * c.n_layers as f64).sqrt();
        let segments = w.layout.segments.clone();
        for seg in &segments {
            let name = seg.name.rsplit('.').next().unwrap_or(&seg.name);
            let std = match name {
                "tok_emb" | "pos_emb" | "mod_emb" => 1.0,
                "w_q" | "w_k" | "w_v" | "w_1" | "w_u" => 1.0 / (seg.shape[0] as f64).sqrt(),
                "w_o" | "w_2" => depth_scale / (seg.shape[0] as f64).sqrt(),
                "ln1_g" | "ln2_g" | "lnf_g" => {
                    w.params[seg.offset..seg.offset + seg.len()].fill(1.0);
                    continue;
                }
                _ => continue,
            };
            let normal = Normal::new(0.0, std).expect("finite std");
            for p in &mut w.params[seg.offset..seg.offset + seg.len()] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(w)
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, layout expects {}",
                params.len(),
                layout.total
            )));
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn slice(&self, offset: usize, len: usize) -> &[f64] {
        &self.params[offset..offset + len]
    }

    /// Mutable view of a named segment (e.g. `"blocks.0.w_o"`).
    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let seg = self.layout.segment(name)?.clone();
        Some(&mut self.params[seg.offset..seg.offset + seg.len()])
    }

    pub fn segment_values(&self, name: &str) -> Option<&[f64]> {
        let seg = self.layout.segment(name)?;
        Some(&self.params[seg.offset..seg.offset + seg.len()])
    }

    /// SHA-256 over config and raw parameter bits, hex encoded.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for p in &self.params {
            h.update(p.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config_hash: config_hash.to_string(),
            model: self.config.clone(),
            segments: self.layout.segments.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {} unsupported (expected {CHECKPOINT_FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        let layout = ParamLayout::new(&ckpt.model);
        if ckpt.segments != layout.segments {
            return Err(Error::Format("checkpoint parameter ordering does not match this build".into()));
        }
        Self::from_params(ckpt.model, ckpt.params)
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let ckpt = self.to_checkpoint(config_hash);
        fs::write(path, serde_json::to_vec(&ckpt)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let ckpt: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        let hash = ckpt.config_hash.clone();
        Ok((Self::from_checkpoint(ckpt)?, hash))
    }
}

/// On-disk weights: JSON with the config, the declared parameter ordering and
/// the flat parameter array. `f64` values round-trip exactly through serde_json.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub model: ModelConfig,
    pub segments: Vec<Segment>,
    pub params: Vec<f64>,
}
