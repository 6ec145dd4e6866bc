use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActivationCache, HeadId};
use crate::patching::HeadGroups;

pub const PROBE_FORMAT_VERSION: u32 = 1;
pub const MAX_PASSES: usize = 10_000;
pub const OBJECTIVE_TOL: f64 = 1e-8;

/// Default lambda grid searched by validation AUROC.
pub const LAMBDA_GRID: [f64; 7] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1];

/// Mean of the last-token outputs of `resisting`.
pub fn resisting_feature(cache: &ActivationCache, resisting: &[HeadId]) -> Result<Vec<f64>> {
    if resisting.is_empty() {
        return Err(Error::Config("resisting head list is empty".into()));
    }
    let mut seen = HashSet::new();
    for &h in resisting {
        if !seen.insert(h) {
            return Err(Error::Config(format!("head {h} listed twice")));
        }
        if !cache.contains(h) {
            return Err(Error::Config(format!("head {h} not in the cache")));
        }
    }
    let mut out = vec![0.0; cache.d_head()];
    for &h in resisting {
        for (o, v) in out.iter_mut().zip(cache.last(h)) {
            *o += v;
        }
    }
    let n = resisting.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean logistic loss plus `lambda * |w|_1` for labels in {0, 1}.
pub fn lasso_objective(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = x.len() as f64;
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let z = b + xi.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            softplus(z) - if yi { z } else { 0.0 }
        })
        .sum::<f64>()
        / n;
    loss + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn check_labels(y: &[bool]) -> Result<()> {
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::Input("both classes must be present".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    pub passes: usize,
}

/// Cyclic coordinate descent on the L1-penalised mean logistic loss. Each
/// coordinate minimises the quadratic upper bound with curvature
/// `sum x_ij^2 / (4n)`, so the objective never increases.
pub fn fit_lasso_logistic(x: &[Vec<f64>], y: &[bool], lambda: f64) -> Result<LassoFit> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Input(format!("{} feature rows for {} labels", x.len(), y.len())));
    }
    check_labels(y)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Input("feature rows must be finite and of equal width".into()));
    }
    let n = x.len() as f64;
    let curv: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j] * r[j]).sum::<f64>() / (4.0 * n)).collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut z = vec![0.0; x.len()];
    let mut obj = lasso_objective(x, y, &w, b, lambda);
    let mut passes = 0;
    while passes < MAX_PASSES {
        passes += 1;
        let g: f64 = z.iter().zip(y).map(|(&zi, &yi)| sigmoid(zi) - f64::from(u8::from(yi))).sum::<f64>() / n;
        let step = -4.0 * g;
        b += step;
        z.iter_mut().for_each(|zi| *zi += step);
        for j in 0..d {
            if curv[j] == 0.0 {
                continue;
            }
            let g: f64 = z
                .iter()
                .zip(y)
                .zip(x)
                .map(|((&zi, &yi), r)| (sigmoid(zi) - f64::from(u8::from(yi))) * r[j])
                .sum::<f64>()
                / n;
            let new = soft_threshold(w[j] - g / curv[j], lambda / curv[j]);
            let delta = new - w[j];
            if delta != 0.0 {
                w[j] = new;
                z.iter_mut().zip(x).for_each(|(zi, r)| *zi += delta * r[j]);
            }
        }
        let next = lasso_objective(x, y, &w, b, lambda);
        if !next.is_finite() {
            return Err(Error::Numeric("lasso objective became non-finite".into()));
        }
        let decrease = obj - next;
        obj = next;
        if decrease < OBJECTIVE_TOL {
            break;
        }
    }
    Ok(LassoFit { weights: w, bias: b, objective: obj, passes })
}

/// Probability that a random positive outscores a random negative; ties
/// count one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    check_labels(labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive ranks with tied groups sharing their mean rank.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mean_rank;
        i = j + 1;
    }
    let np = labels.iter().filter(|&&l| l).count() as f64;
    let nn = labels.len() as f64 - np;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// F1 of `score >= tau` predicting the positive class; 0 with no true positives.
pub fn f1_at(scores: &[f64], labels: &[bool], tau: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= tau, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

/// Threshold maximising F1 over 0, 1 and the midpoints between adjacent
/// distinct scores. Ties go to the higher threshold.
pub fn select_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    check_labels(labels)?;
    let mut uniq: Vec<f64> = scores.to_vec();
    if uniq.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    let mut candidates = vec![0.0, 1.0];
    candidates.extend(uniq.windows(2).map(|p| (p[0] + p[1]) / 2.0));
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for tau in candidates {
        let f1 = f1_at(scores, labels, tau);
        if f1 > best.1 || (f1 == best.1 && tau > best.0) {
            best = (tau, f1);
        }
    }
    Ok(best)
}

/// Standardised Lasso logistic probe over resisting-head features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub tau: Option<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ProbeModel {
    /// Standardises with statistics of `x`, then fits at `lambda`.
    pub fn train(x: &[Vec<f64>], y: &[bool], lambda: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Input("no probe training rows".into()));
        }
        let d = x[0].len();
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let xs: Vec<Vec<f64>> =
            x.iter().map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect()).collect();
        let fit = fit_lasso_logistic(&xs, y, lambda)?;
        Ok(Self { weights: fit.weights, bias: fit.bias, lambda, tau: None, mean, scale })
    }

    pub fn score(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.weights.len() {
            return Err(Error::Input(format!("feature width {} for a probe of width {}", h.len(), self.weights.len())));
        }
        let z = self.bias
            + h.iter()
                .zip(&self.weights)
                .zip(self.mean.iter().zip(&self.scale))
                .map(|((v, w), (m, s))| w * (v - m) / s)
                .sum::<f64>();
        Ok(sigmoid(z))
    }

    pub fn scores(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        x.iter().map(|h| self.score(h)).collect()
    }

    pub fn tau(&self) -> Result<f64> {
        self.tau.ok_or_else(|| Error::Config("probe threshold has not been selected".into()))
    }
}

#[derive(Serialize, Deserialize)]
struct ProbeFile {
    format_version: u32,
    config_hash: String,
    probe: ProbeModel,
    groups: HeadGroups,
}

pub fn write_probe(path: &Path, probe: &ProbeModel, groups: &HeadGroups, config_hash: &str) -> Result<()> {
    let file = ProbeFile {
        format_version: PROBE_FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        probe: probe.clone(),
        groups: groups.clone(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)? + "\n")?;
    Ok(())
}

pub fn read_probe(path: &Path) -> Result<(ProbeModel, HeadGroups, String)> {
    let file: ProbeFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.format_version != PROBE_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported probe format version {}", file.format_version)));
    }
    Ok((file.probe, file.groups, file.config_hash))
}
