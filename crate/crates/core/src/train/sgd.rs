use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curriculum::{Curriculum, Plausibility, Presentation, TrainItem};
use super::loss::example_grad;
use crate::error::{Error, Result};
use crate::model::ops::argmax;
use crate::model::{forward, ModelConfig, ModelWeights, OverridePlan};
use crate::synth::{ConflictSample, Vocab, QUERY_LEN};

/// Items per gradient partial. Fixed so that the reduction order does not
/// depend on the thread count.
const CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Mean probability that a conflict item's target follows its premise.
    pub bias_mix: f64,
    pub seed: u64,
    /// Fraction of items presented with the conflict query.
    pub conflict_frac: f64,
    /// Spread of per-premise persuasiveness around `bias_mix`.
    pub strength_spread: f64,
    /// Per-item probability of zeroing each head during training.
    pub head_dropout: f64,
    /// Evaluate clean accuracy / hallucination rate every this many steps (0 = never).
    pub eval_every: usize,
    /// Steps of a warm-up phase run before the main `steps`, with its own
    /// premise bias and head dropout and no plausibility rule.
    pub warmup_steps: usize,
    pub warmup_bias_mix: f64,
    pub warmup_head_dropout: f64,
    pub plausibility: Plausibility,
    /// Follow-probability multiplier for implausible premises (main phase).
    pub implausible_damp: f64,
    /// Follow-probability multiplier for the remaining premises, capped at 1.
    pub plausible_boost: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 32,
            learning_rate: 0.1,
            bias_mix: 0.5,
            seed: 1,
            conflict_frac: 0.5,
            strength_spread: 0.7,
            head_dropout: 0.0,
            eval_every: 250,
            warmup_steps: 0,
            warmup_bias_mix: 1.0,
            warmup_head_dropout: 0.0,
            plausibility: Plausibility::Uniform,
            implausible_damp: 1.0,
            plausible_boost: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        if ![self.bias_mix, self.conflict_frac, self.head_dropout, self.warmup_bias_mix, self.warmup_head_dropout]
            .into_iter()
            .all(frac)
        {
            return Err(Error::Input("premise bias, conflict_frac and head dropout values must lie in [0, 1]".into()));
        }
        if !frac(self.implausible_damp) {
            return Err(Error::Input("implausible_damp must lie in [0, 1]".into()));
        }
        if !(self.plausible_boost >= 1.0 && self.plausible_boost.is_finite()) {
            return Err(Error::Input("plausible_boost must be a finite value of at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Input(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Input("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.strength_spread) {
            return Err(Error::Input("strength_spread must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// 4 layers x 4 heads, `d_model` 64, sized for the given vocabulary.
pub fn reference_model_config(vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        n_layers: 4,
        n_heads: 4,
        d_model: 64,
        d_head: 16,
        d_ff: 128,
        vocab_size: vocab.size(),
        max_seq: vocab.n_slots as usize + QUERY_LEN,
        n_visual_tokens: vocab.n_slots as usize,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub clean_acc: Option<f64>,
    pub hall_rate: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub curve: Vec<CurvePoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    /// Greedy answer equals `y_f` on the clean query.
    pub clean_acc: f64,
    /// Greedy answer equals `y_h` on the conflict query.
    pub hall_rate: f64,
}

/// Greedy-decoding accuracy on clean queries and premise-following rate on
/// conflict queries.
pub fn evaluate(weights: &ModelWeights, vocab: &Vocab, samples: &[ConflictSample]) -> Result<EvalSummary> {
    if samples.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty sample set".into()));
    }
    let cfg = weights.config();
    let empty = OverridePlan::new();
    let hits: Vec<(bool, bool)> = samples
        .par_iter()
        .map(|s| {
            let clean = argmax(&forward(weights, &s.clean_input(vocab, cfg)?, &empty)?.logits) as u32;
            let conflict = argmax(&forward(weights, &s.conflict_input(vocab, cfg)?, &empty)?.logits) as u32;
            Ok((clean == s.y_f, conflict == s.y_h))
        })
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    Ok(EvalSummary {
        n: samples.len(),
        clean_acc: hits.iter().filter(|h| h.0).count() as f64 / n,
        hall_rate: hits.iter().filter(|h| h.1).count() as f64 / n,
    })
}

/// Plain SGD with a fixed step size on the answer-token cross-entropy: an
/// optional warm-up phase, then the main phase. Each phase draws its
/// curriculum from a stream seeded with `cfg.seed`; curve steps are numbered
/// across both phases.
///
/// Deterministic in `(initial weights, data, config)`.
pub fn train(
    mut weights: ModelWeights,
    vocab: &Vocab,
    data: &[ConflictSample],
    cfg: &TrainConfig,
    eval: Option<&[ConflictSample]>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training data is empty".into()));
    }
    let heads: Vec<_> = weights.config().heads().collect();
    let warmup = Curriculum {
        vocab,
        data,
        bias_mix: cfg.warmup_bias_mix,
        conflict_frac: cfg.conflict_frac,
        strength_spread: cfg.strength_spread,
        head_dropout: cfg.warmup_head_dropout,
        plausibility: Plausibility::Uniform,
        implausible_damp: 1.0,
        plausible_boost: 1.0,
        heads: heads.clone(),
    };
    let main = Curriculum {
        bias_mix: cfg.bias_mix,
        head_dropout: cfg.head_dropout,
        plausibility: cfg.plausibility,
        implausible_damp: cfg.implausible_damp,
        plausible_boost: cfg.plausible_boost,
        heads,
        ..warmup
    };
    let total = cfg.warmup_steps + cfg.steps;
    let mut curve = Vec::with_capacity(total);
    let mut offset = 0;
    for (curriculum, steps) in [(&warmup, cfg.warmup_steps), (&main, cfg.steps)] {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for step in offset..offset + steps {
            let items: Vec<TrainItem> = (0..cfg.batch_size).map(|_| curriculum.draw(&mut rng)).collect();
            let loss = sgd_step(&mut weights, vocab, data, &items, cfg.learning_rate).map_err(|e| match e {
                Error::Diverged { loss, .. } => Error::Diverged { step, loss },
                e => e,
            })?;
            let mut point = CurvePoint { step, loss, clean_acc: None, hall_rate: None };
            if let Some(eval) = eval {
                if cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || step + 1 == total) {
                    let e = evaluate(&weights, vocab, eval)?;
                    point.clean_acc = Some(e.clean_acc);
                    point.hall_rate = Some(e.hall_rate);
                }
            }
            curve.push(point);
        }
        offset += steps;
    }
    Ok(TrainOutcome { weights, curve })
}

/// One update on the mean loss of `items`; returns that loss.
fn sgd_step(
    weights: &mut ModelWeights,
    vocab: &Vocab,
    data: &[ConflictSample],
    items: &[TrainItem],
    lr: f64,
) -> Result<f64> {
    let model_cfg = weights.config().clone();
    let n_params = weights.params().len();
    let scale = 1.0 / items.len() as f64;
    let w: &ModelWeights = weights;
    let partials: Vec<(f64, Vec<f64>)> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            for item in chunk {
                let s = &data[item.sample];
                let input = match item.presentation {
                    Presentation::Clean => s.clean_input(vocab, &model_cfg)?,
                    Presentation::Conflict => s.conflict_input(vocab, &model_cfg)?,
                };
                let plan = OverridePlan::zero_heads(&item.dropped);
                loss += example_grad(w, &input, &plan, item.target, scale, &mut grad)?;
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;

    let mut loss = 0.0;
    let mut grad = vec![0.0; n_params];
    for (l, g) in &partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    loss *= scale;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged { step: 0, loss });
    }
    for (p, g) in weights.params_mut().iter_mut().zip(&grad) {
        *p -= lr * g;
    }
    Ok(loss)
}
