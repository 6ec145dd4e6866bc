use serde::{Deserialize, Serialize};

use super::config::{HeadId, ModelConfig};
use super::ops::{affine, gelu, layer_norm};
use super::tokens::TokenSequence;
use super::weights::ModelWeights;
use crate::error::{config_err, Result};

/// Which positions of a head an override touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionScope {
    /// Only the final (answer-prediction) position.
    LastToken,
    /// Every position; replacement vectors must cover the whole sequence.
    AllPositions,
}

impl std::str::FromStr for PositionScope {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" | "last-token" => Ok(Self::LastToken),
            "all" | "all-positions" => Ok(Self::AllPositions),
            other => Err(crate::Error::Input(format!("unknown position scope `{other}` (expected last|all)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OverrideAction {
    /// `d_head` values for `LastToken`; `seq_len * d_head` (position-major) for `AllPositions`.
    Replace(Vec<f64>),
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverrideOp {
    pub head: HeadId,
    pub scope: PositionScope,
    pub action: OverrideAction,
}

/// Head-output overrides applied during a forward pass.
///
/// A head's output is its attention-weighted value vector before the output
/// projection mixes heads, so each override is exact and independent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OverridePlan {
    ops: Vec<OverrideOp>,
}

impl OverridePlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, head: HeadId, scope: PositionScope, action: OverrideAction) -> &mut Self {
        self.ops.push(OverrideOp { head, scope, action });
        self
    }

    pub fn replace(head: HeadId, scope: PositionScope, values: Vec<f64>) -> Self {
        let mut plan = Self::new();
        plan.push(head, scope, OverrideAction::Replace(values));
        plan
    }

    /// Zero-ablation of every listed head at all positions.
    pub fn zero_heads<'a>(heads: impl IntoIterator<Item = &'a HeadId>) -> Self {
        let mut plan = Self::new();
        for &h in heads {
            plan.push(h, PositionScope::AllPositions, OverrideAction::Zero);
        }
        plan
    }

    pub fn ops(&self) -> &[OverrideOp] {
        &self.ops
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Per-head lookup (canonical head index) after validating the plan.
    pub(crate) fn resolve(&self, config: &ModelConfig, seq_len: usize) -> Result<Vec<Option<&OverrideOp>>> {
        let mut table: Vec<Option<&OverrideOp>> = vec![None; config.total_heads()];
        for op in &self.ops {
            config.check_head(op.head)?;
            if let OverrideAction::Replace(values) = &op.action {
                let want = match op.scope {
                    PositionScope::LastToken => config.d_head,
                    PositionScope::AllPositions => seq_len * config.d_head,
                };
                if values.len() != want {
                    return Err(config_err(format!(
                        "replacement for {} has {} values, expected {want} ({:?}, seq_len {seq_len}, d_head {})",
                        op.head,
                        values.len(),
                        op.scope,
                        config.d_head
                    )));
                }
            }
            let slot = &mut table[op.head.index(config.n_heads)];
            if slot.is_some() {
                return Err(config_err(format!("more than one override targets {}", op.head)));
            }
            *slot = Some(op);
        }
        Ok(table)
    }
}

/// Per-head, per-position head outputs from one forward pass, recorded after
/// any overrides were applied.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationCache {
    n_layers: usize,
    n_heads: usize,
    d_head: usize,
    seq_len: usize,
    /// One `[seq_len, n_heads * d_head]` block per layer.
    z: Vec<Vec<f64>>,
}

impl ActivationCache {
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    /// Number of cached heads; always `n_layers * n_heads`.
    pub fn len(&self) -> usize {
        self.n_layers * self.n_heads
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn heads(&self) -> impl Iterator<Item = HeadId> + '_ {
        (0..self.n_layers).flat_map(move |l| (0..self.n_heads).map(move |h| HeadId::new(l, h)))
    }

    pub fn contains(&self, head: HeadId) -> bool {
        head.layer < self.n_layers && head.head < self.n_heads
    }

    pub fn get(&self, head: HeadId, pos: usize) -> &[f64] {
        let hd = self.n_heads * self.d_head;
        let start = pos * hd + head.head * self.d_head;
        &self.z[head.layer][start..start + self.d_head]
    }

    pub fn last(&self, head: HeadId) -> &[f64] {
        self.get(head, self.seq_len - 1)
    }

    /// All positions of one head, position-major (`seq_len * d_head`).
    pub fn positions(&self, head: HeadId) -> Vec<f64> {
        (0..self.seq_len).flat_map(|p| self.get(head, p).iter().copied()).collect()
    }

    /// Donor values for `scope`, in the layout `OverrideAction::Replace` expects.
    pub fn donor(&self, head: HeadId, scope: PositionScope) -> Vec<f64> {
        match scope {
            PositionScope::LastToken => self.last(head).to_vec(),
            PositionScope::AllPositions => self.positions(head),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Unnormalized next-token scores at the final position.
    pub logits: Vec<f64>,
    pub cache: ActivationCache,
}

/// Intermediates of one block, kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct BlockTrace {
    pub xhat1: Vec<f64>,
    pub rstd1: Vec<f64>,
    pub n1: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// `[n_heads, seq, seq]`, causal (upper triangle zero).
    pub probs: Vec<f64>,
    pub z: Vec<f64>,
    /// `[seq, n_heads]`: true where the head output came from an override.
    pub fixed: Vec<bool>,
    pub xhat2: Vec<f64>,
    pub rstd2: Vec<f64>,
    pub n2: Vec<f64>,
    pub u: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct Trace {
    pub seq_len: usize,
    pub blocks: Vec<BlockTrace>,
    pub xhat_f: Vec<f64>,
    pub rstd_f: f64,
    pub nf: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Trace {
    pub(crate) fn into_output(self, config: &ModelConfig) -> ForwardOutput {
        let cache = ActivationCache {
            n_layers: config.n_layers,
            n_heads: config.n_heads,
            d_head: config.d_head,
            seq_len: self.seq_len,
            z: self.blocks.into_iter().map(|b| b.z).collect(),
        };
        ForwardOutput { logits: self.logits, cache }
    }
}

/// Runs the model over `input`, applying `plan`, and returns final-position
/// logits with the head-output cache. Pure in `(weights, input, plan)`.
pub fn forward(weights: &ModelWeights, input: &TokenSequence, plan: &OverridePlan) -> Result<ForwardOutput> {
    let trace = forward_trace(weights, input, plan)?;
    Ok(trace.into_output(weights.config()))
}

pub(crate) fn forward_trace(weights: &ModelWeights, input: &TokenSequence, plan: &OverridePlan) -> Result<Trace> {
    let c = weights.config();
    input.validate(c)?;
    let table = plan.resolve(c, input.len())?;
    let lay = weights.layout();
    let (t_len, d, dh, nh, f) = (input.len(), c.d_model, c.d_head, c.n_heads, c.d_ff);
    let hd = nh * dh;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut x = vec![0.0; t_len * d];
    for (t, (&tok, m)) in input.tokens().iter().zip(input.modality_mask()).enumerate() {
        let te = weights.slice(lay.tok_emb + tok as usize * d, d);
        let pe = weights.slice(lay.pos_emb + t * d, d);
        let me = weights.slice(lay.mod_emb + m.index() * d, d);
        for i in 0..d {
            x[t * d + i] = te[i] + pe[i] + me[i];
        }
    }

    // Keys carry no bias: a shared key offset cannot change the softmax.
    let no_bias = vec![0.0; hd];
    let mut blocks = Vec::with_capacity(c.n_layers);
    for (l, bo) in lay.blocks.iter().enumerate() {
        let mut xhat1 = vec![0.0; t_len * d];
        let mut rstd1 = vec![0.0; t_len];
        let mut n1 = vec![0.0; t_len * d];
        let (g1, b1) = (weights.slice(bo.ln1_g, d), weights.slice(bo.ln1_b, d));
        for t in 0..t_len {
            let r = t * d..(t + 1) * d;
            rstd1[t] = layer_norm(&x[r.clone()], g1, b1, &mut xhat1[r.clone()], &mut n1[r]);
        }

        let mut q = vec![0.0; t_len * hd];
        let mut k = vec![0.0; t_len * hd];
        let mut v = vec![0.0; t_len * hd];
        for t in 0..t_len {
            let row = &n1[t * d..(t + 1) * d];
            let r = t * hd..(t + 1) * hd;
            affine(row, weights.slice(bo.w_q, d * hd), weights.slice(bo.b_q, hd), &mut q[r.clone()]);
            affine(row, weights.slice(bo.w_k, d * hd), &no_bias, &mut k[r.clone()]);
            affine(row, weights.slice(bo.w_v, d * hd), weights.slice(bo.b_v, hd), &mut v[r]);
        }

        let mut probs = vec![0.0; nh * t_len * t_len];
        let mut z = vec![0.0; t_len * hd];
        let mut fixed = vec![false; t_len * nh];
        for head in 0..nh {
            let op = table[l * nh + head];
            let off = head * dh;
            for t in 0..t_len {
                let p = &mut probs[(head * t_len + t) * t_len..(head * t_len + t + 1) * t_len];
                let qt = &q[t * hd + off..t * hd + off + dh];
                let mut max = f64::NEG_INFINITY;
                for s in 0..=t {
                    let ks = &k[s * hd + off..s * hd + off + dh];
                    let score = qt.iter().zip(ks).map(|(a, b)| a * b).sum::<f64>() * scale;
                    p[s] = score;
                    max = max.max(score);
                }
                let mut total = 0.0;
                for ps in p.iter_mut().take(t + 1) {
                    *ps = (*ps - max).exp();
                    total += *ps;
                }
                for ps in p.iter_mut().take(t + 1) {
                    *ps /= total;
                }

                let zt = &mut z[t * hd + off..t * hd + off + dh];
                let overridden = match op {
                    Some(o) => o.scope == PositionScope::AllPositions || t == t_len - 1,
                    None => false,
                };
                if overridden {
                    let o = op.expect("override present");
                    match &o.action {
                        OverrideAction::Zero => zt.fill(0.0),
                        OverrideAction::Replace(vals) => {
                            let src = match o.scope {
                                PositionScope::LastToken => &vals[..],
                                PositionScope::AllPositions => &vals[t * dh..(t + 1) * dh],
                            };
                            zt.copy_from_slice(src);
                        }
                    }
                    fixed[t * nh + head] = true;
                } else {
                    zt.fill(0.0);
                    for s in 0..=t {
                        let vs = &v[s * hd + off..s * hd + off + dh];
                        for (zi, &vi) in zt.iter_mut().zip(vs) {
                            *zi += p[s] * vi;
                        }
                    }
                }
            }
        }

        let mut h = x.clone();
        let mut attn = vec![0.0; d];
        for t in 0..t_len {
            affine(&z[t * hd..(t + 1) * hd], weights.slice(bo.w_o, hd * d), weights.slice(bo.b_o, d), &mut attn);
            for i in 0..d {
                h[t * d + i] += attn[i];
            }
        }

        let mut xhat2 = vec![0.0; t_len * d];
        let mut rstd2 = vec![0.0; t_len];
        let mut n2 = vec![0.0; t_len * d];
        let (g2, b2) = (weights.slice(bo.ln2_g, d), weights.slice(bo.ln2_b, d));
        for t in 0..t_len {
            let r = t * d..(t + 1) * d;
            rstd2[t] = layer_norm(&h[r.clone()], g2, b2, &mut xhat2[r.clone()], &mut n2[r]);
        }
        let mut u = vec![0.0; t_len * f];
        let mut g = vec![0.0; t_len * f];
        let mut x_out = h.clone();
        let mut mlp = vec![0.0; d];
        for t in 0..t_len {
            let ur = t * f..(t + 1) * f;
            affine(&n2[t * d..(t + 1) * d], weights.slice(bo.w_1, d * f), weights.slice(bo.b_1, f), &mut u[ur.clone()]);
            for (gi, &ui) in g[ur.clone()].iter_mut().zip(&u[ur.clone()]) {
                *gi = gelu(ui);
            }
            affine(&g[ur], weights.slice(bo.w_2, f * d), weights.slice(bo.b_2, d), &mut mlp);
            for i in 0..d {
                x_out[t * d + i] += mlp[i];
            }
        }

        x = x_out;
        blocks.push(BlockTrace { xhat1, rstd1, n1, q, k, v, probs, z, fixed, xhat2, rstd2, n2, u, g });
    }

    let last = &x[(t_len - 1) * d..t_len * d];
    let mut xhat_f = vec![0.0; d];
    let mut nf = vec![0.0; d];
    let rstd_f = layer_norm(last, weights.slice(lay.lnf_g, d), weights.slice(lay.lnf_b, d), &mut xhat_f, &mut nf);
    let v_size = c.vocab_size;
    let mut logits = vec![0.0; v_size];
    affine(&nf, weights.slice(lay.w_u, d * v_size), weights.slice(lay.b_u, v_size), &mut logits);

    Ok(Trace { seq_len: t_len, blocks, xhat_f, rstd_f, nf, logits })
}
