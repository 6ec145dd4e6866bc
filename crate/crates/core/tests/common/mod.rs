//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use conflict_heads::model::{HeadId, Modality, ModelWeights, PositionScope, TokenSequence};

/// A head output forced to fixed values during a naive forward pass.
#[derive(Clone, Debug)]
pub struct Splice {
    pub head: HeadId,
    pub scope: PositionScope,
    pub values: Vec<f64>,
}

pub struct NaiveRun {
    pub logits: Vec<f64>,
    /// `z[layer][head][position]`, after splicing.
    pub z: Vec<Vec<Vec<Vec<f64>>>>,
}

impl NaiveRun {
    pub fn donor(&self, head: HeadId, scope: PositionScope) -> Vec<f64> {
        let per_pos = &self.z[head.layer][head.head];
        match scope {
            PositionScope::LastToken => per_pos.last().unwrap().clone(),
            PositionScope::AllPositions => per_pos.concat(),
        }
    }
}

fn seg<'a>(w: &'a ModelWeights, name: &str) -> &'a [f64] {
    w.segment_values(name).unwrap_or_else(|| panic!("missing segment {name}"))
}

/// `[rows, cols]` row-major matrix times a row vector, plus bias.
fn matvec(x: &[f64], m: &[f64], cols: usize, bias: Option<&[f64]>) -> Vec<f64> {
    (0..cols)
        .map(|j| {
            let dot: f64 = x.iter().enumerate().map(|(i, xi)| xi * m[i * cols + j]).sum();
            dot + bias.map_or(0.0, |b| b[j])
        })
        .collect()
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let s = (var + 1e-5).sqrt();
    x.iter().zip(g.iter().zip(b)).map(|(v, (g, b))| g * (v - mean) / s + b).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Straight-line forward pass over named parameter segments, with no
/// caching and no shared code with the library's forward.
pub fn naive_forward(w: &ModelWeights, input: &TokenSequence, splices: &[Splice]) -> NaiveRun {
    let c = w.config();
    let (d, dh, nh, f, v) = (c.d_model, c.d_head, c.n_heads, c.d_ff, c.vocab_size);
    let hd = nh * dh;
    let t_len = input.len();
    let (tok, pos, modal) = (seg(w, "tok_emb"), seg(w, "pos_emb"), seg(w, "mod_emb"));
    let mut x: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            let id = input.tokens()[t] as usize;
            let m = match input.modality_mask()[t] {
                Modality::Visual => 0,
                Modality::Text => 1,
            };
            (0..d).map(|i| tok[id * d + i] + pos[t * d + i] + modal[m * d + i]).collect()
        })
        .collect();
    let mut z_all = Vec::new();
    for l in 0..c.n_layers {
        let p = |n: &str| seg(w, &format!("blocks.{l}.{n}"));
        let normed: Vec<Vec<f64>> = x.iter().map(|r| layer_norm(r, p("ln1_g"), p("ln1_b"))).collect();
        let q: Vec<Vec<f64>> = normed.iter().map(|r| matvec(r, p("w_q"), hd, Some(p("b_q")))).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|r| matvec(r, p("w_k"), hd, None)).collect();
        let val: Vec<Vec<f64>> = normed.iter().map(|r| matvec(r, p("w_v"), hd, Some(p("b_v")))).collect();
        let mut z_layer = vec![vec![vec![0.0; dh]; t_len]; nh];
        for h in 0..nh {
            let o = h * dh;
            for t in 0..t_len {
                let scores: Vec<f64> = (0..=t)
                    .map(|s| (0..dh).map(|i| q[t][o + i] * k[s][o + i]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = e.iter().sum();
                for i in 0..dh {
                    z_layer[h][t][i] = (0..=t).map(|s| e[s] / total * val[s][o + i]).sum();
                }
            }
            for sp in splices.iter().filter(|s| s.head == HeadId::new(l, h)) {
                match sp.scope {
                    PositionScope::LastToken => z_layer[h][t_len - 1] = sp.values.clone(),
                    PositionScope::AllPositions => {
                        for t in 0..t_len {
                            z_layer[h][t] = sp.values[t * dh..(t + 1) * dh].to_vec();
                        }
                    }
                }
            }
        }
        for t in 0..t_len {
            let concat: Vec<f64> = (0..nh).flat_map(|h| z_layer[h][t].clone()).collect();
            let attn = matvec(&concat, p("w_o"), d, Some(p("b_o")));
            let resid: Vec<f64> = x[t].iter().zip(&attn).map(|(a, b)| a + b).collect();
            let n2 = layer_norm(&resid, p("ln2_g"), p("ln2_b"));
            let hidden: Vec<f64> = matvec(&n2, p("w_1"), f, Some(p("b_1"))).into_iter().map(gelu).collect();
            let mlp = matvec(&hidden, p("w_2"), d, Some(p("b_2")));
            x[t] = resid.iter().zip(&mlp).map(|(a, b)| a + b).collect();
        }
        z_all.push(z_layer);
    }
    let last = layer_norm(&x[t_len - 1], seg(w, "lnf_g"), seg(w, "lnf_b"));
    let logits = matvec(&last, seg(w, "w_u"), v, Some(seg(w, "b_u")));
    NaiveRun { logits, z: z_all }
}

/// `log p(y_h) - log p(y_f)` via an explicit log-sum-exp.
pub fn naive_advantage(logits: &[f64], y_h: u32, y_f: u32) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    (logits[y_h as usize] - lse) - (logits[y_f as usize] - lse)
}

/// Mean of `-log sigmoid(+-z)` plus the L1 penalty, written out directly.
pub fn naive_lasso_objective(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, lambda: f64) -> f64 {
    let mut total = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let z: f64 = b + xi.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        let signed = if yi { z } else { -z };
        total += if signed > 0.0 { (-signed).exp().ln_1p() } else { -signed + signed.exp().ln_1p() };
    }
    total / x.len() as f64 + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

pub fn lasso_fixture(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let a: f64 = rng.random_range(-2.0..2.0);
        let b: f64 = rng.random_range(-2.0..2.0);
        let noisy = rng.random::<f64>() < 0.2;
        x.push(vec![a, b]);
        // Class balance forced so both labels always appear.
        let label = if i < 2 { i == 0 } else { (0.8 * a - 0.5 * b > 0.1) ^ noisy };
        y.push(label);
    }
    (x, y)
}

/// Dense grid then compass search over (w1, w2, b), with no derivatives.
pub fn lasso_oracle_min(x: &[Vec<f64>], y: &[bool], lambda: f64) -> f64 {
    let f = |p: &[f64; 3]| naive_lasso_objective(x, y, &p[..2], p[2], lambda);
    let mut best = [0.0; 3];
    let mut fbest = f(&best);
    let grid: Vec<f64> = (-24..=24).map(|i| i as f64 * 0.25).collect();
    for &a in &grid {
        for &b in &grid {
            for &c in &grid {
                let p = [a, b, c];
                let v = f(&p);
                if v < fbest {
                    fbest = v;
                    best = p;
                }
            }
        }
    }
    let mut step = 0.25;
    while step > 1e-12 {
        let mut improved = false;
        for k in 0..3 {
            for dir in [1.0, -1.0] {
                let mut p = best;
                p[k] += dir * step;
                // Land exactly on the kink when crossing zero.
                if k < 2 && best[k] != 0.0 && p[k].signum() != best[k].signum() {
                    p[k] = 0.0;
                }
                let v = f(&p);
                if v < fbest {
                    fbest = v;
                    best = p;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    fbest
}
