//! Reverse-mode gradients of the final-position logits.

use super::forward::Trace;
use super::ops::{affine_back_input, affine_back_params, gelu_grad, layer_norm_back};
use super::tokens::TokenSequence;
use super::weights::ModelWeights;

/// Accumulates `d(loss)/d(params)` into `grad` given `dlogits = d(loss)/d(logits)`.
///
/// Overridden head outputs are constants, so no gradient reaches the
/// attention parameters through them.
pub(crate) fn backward(
    weights: &ModelWeights,
    input: &TokenSequence,
    trace: &Trace,
    dlogits: &[f64],
    grad: &mut [f64],
) {
    let c = weights.config();
    let lay = weights.layout();
    let (t_len, d, dh, nh, f, vs) = (trace.seq_len, c.d_model, c.d_head, c.n_heads, c.d_ff, c.vocab_size);
    let hd = nh * dh;
    let scale = 1.0 / (dh as f64).sqrt();

    // Unembedding and final norm.
    let mut dnf = vec![0.0; d];
    {
        let (dw, db) = split_pair(grad, lay.w_u, d * vs, lay.b_u, vs);
        affine_back_params(&trace.nf, dlogits, dw, db);
    }
    affine_back_input(dlogits, weights.slice(lay.w_u, d * vs), &mut dnf);
    let mut dx = vec![0.0; t_len * d];
    {
        let (dg, db) = split_pair(grad, lay.lnf_g, d, lay.lnf_b, d);
        layer_norm_back(
            &dnf,
            &trace.xhat_f,
            trace.rstd_f,
            weights.slice(lay.lnf_g, d),
            &mut dx[(t_len - 1) * d..],
            dg,
            db,
        );
    }

    for (bo, bt) in lay.blocks.iter().zip(&trace.blocks).rev() {
        // MLP: x_out = h + W2 gelu(W1 ln2(h) + b1) + b2
        let mut dh_res = dx.clone();
        let mut dn2 = vec![0.0; t_len * d];
        let mut du = vec![0.0; f];
        for t in 0..t_len {
            let dm = &dx[t * d..(t + 1) * d];
            if dm.iter().all(|&v| v == 0.0) {
                continue;
            }
            let gr = &bt.g[t * f..(t + 1) * f];
            {
                let (dw, db) = split_pair(grad, bo.w_2, f * d, bo.b_2, d);
                affine_back_params(gr, dm, dw, db);
            }
            du.fill(0.0);
            affine_back_input(dm, weights.slice(bo.w_2, f * d), &mut du);
            for (dui, &ui) in du.iter_mut().zip(&bt.u[t * f..(t + 1) * f]) {
                *dui *= gelu_grad(ui);
            }
            {
                let (dw, db) = split_pair(grad, bo.w_1, d * f, bo.b_1, f);
                affine_back_params(&bt.n2[t * d..(t + 1) * d], &du, dw, db);
            }
            affine_back_input(&du, weights.slice(bo.w_1, d * f), &mut dn2[t * d..(t + 1) * d]);
        }
        {
            let (dg, db) = split_pair(grad, bo.ln2_g, d, bo.ln2_b, d);
            let gain = weights.slice(bo.ln2_g, d);
            for t in 0..t_len {
                let r = t * d..(t + 1) * d;
                layer_norm_back(&dn2[r.clone()], &bt.xhat2[r.clone()], bt.rstd2[t], gain, &mut dh_res[r], dg, db);
            }
        }

        // Attention: h = x_in + W_o z + b_o
        let mut dx_in = dh_res.clone();
        let mut dz = vec![0.0; t_len * hd];
        for t in 0..t_len {
            let da = &dh_res[t * d..(t + 1) * d];
            if da.iter().all(|&v| v == 0.0) {
                continue;
            }
            {
                let (dw, db) = split_pair(grad, bo.w_o, hd * d, bo.b_o, d);
                affine_back_params(&bt.z[t * hd..(t + 1) * hd], da, dw, db);
            }
            affine_back_input(da, weights.slice(bo.w_o, hd * d), &mut dz[t * hd..(t + 1) * hd]);
        }

        let mut dq = vec![0.0; t_len * hd];
        let mut dk = vec![0.0; t_len * hd];
        let mut dv = vec![0.0; t_len * hd];
        let mut dp = vec![0.0; t_len];
        for head in 0..nh {
            let off = head * dh;
            for t in 0..t_len {
                if bt.fixed[t * nh + head] {
                    continue;
                }
                let dzt = &dz[t * hd + off..t * hd + off + dh];
                if dzt.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let p = &bt.probs[(head * t_len + t) * t_len..(head * t_len + t + 1) * t_len];
                let mut dot = 0.0;
                for s in 0..=t {
                    let vs_row = &bt.v[s * hd + off..s * hd + off + dh];
                    dp[s] = dzt.iter().zip(vs_row).map(|(a, b)| a * b).sum::<f64>();
                    dot += p[s] * dp[s];
                    let dvs = &mut dv[s * hd + off..s * hd + off + dh];
                    for (g, &dzi) in dvs.iter_mut().zip(dzt) {
                        *g += p[s] * dzi;
                    }
                }
                for s in 0..=t {
                    let dscore = p[s] * (dp[s] - dot) * scale;
                    if dscore == 0.0 {
                        continue;
                    }
                    for i in 0..dh {
                        dq[t * hd + off + i] += dscore * bt.k[s * hd + off + i];
                        dk[s * hd + off + i] += dscore * bt.q[t * hd + off + i];
                    }
                }
            }
        }

        let mut dn1 = vec![0.0; t_len * d];
        for t in 0..t_len {
            let n1 = &bt.n1[t * d..(t + 1) * d];
            let r = t * hd..(t + 1) * hd;
            let dn1_t = &mut dn1[t * d..(t + 1) * d];
            for (w, b, dy) in [
                (bo.w_q, Some(bo.b_q), &dq[r.clone()]),
                (bo.w_k, None, &dk[r.clone()]),
                (bo.w_v, Some(bo.b_v), &dv[r.clone()]),
            ] {
                if dy.iter().all(|&v| v == 0.0) {
                    continue;
                }
                match b {
                    Some(b) => {
                        let (dw, db) = split_pair(grad, w, d * hd, b, hd);
                        affine_back_params(n1, dy, dw, db);
                    }
                    None => {
                        let mut sink = vec![0.0; hd];
                        affine_back_params(n1, dy, &mut grad[w..w + d * hd], &mut sink);
                    }
                }
                affine_back_input(dy, weights.slice(w, d * hd), dn1_t);
            }
        }
        {
            let (dg, db) = split_pair(grad, bo.ln1_g, d, bo.ln1_b, d);
            let gain = weights.slice(bo.ln1_g, d);
            for t in 0..t_len {
                let r = t * d..(t + 1) * d;
                layer_norm_back(&dn1[r.clone()], &bt.xhat1[r.clone()], bt.rstd1[t], gain, &mut dx_in[r], dg, db);
            }
        }
        dx = dx_in;
    }

    for (t, (&tok, m)) in input.tokens().iter().zip(input.modality_mask()).enumerate() {
        let row = &dx[t * d..(t + 1) * d];
        for (off, idx) in [(lay.tok_emb, tok as usize), (lay.pos_emb, t), (lay.mod_emb, m.index())] {
            let g = &mut grad[off + idx * d..off + (idx + 1) * d];
            for (gi, &ri) in g.iter_mut().zip(row) {
                *gi += ri;
            }
        }
    }
}

/// Two disjoint mutable windows of the gradient vector; `a` must precede `b`.
fn split_pair(grad: &mut [f64], a: usize, a_len: usize, b: usize, b_len: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + a_len <= b);
    let (head, tail) = grad.split_at_mut(b);
    (&mut head[a..a + a_len], &mut tail[..b_len])
}
