use rayon::prelude::*;

use super::metrics::{JudgedOutcome, VerdictCounts};
use super::report::{ConditionResult, PlotRow};
use crate::error::{Error, Result};
use crate::intervene::{ablate_batch, auroc, feature_batch, AblationCondition, ProbeModel};
use crate::model::{HeadId, ModelWeights, TokenSequence};
use crate::patching::{select_groups, ImportanceMap};
use crate::synth::{ConflictSample, Vocab};

fn inputs(
    weights: &ModelWeights,
    vocab: &Vocab,
    samples: &[ConflictSample],
    conflict: bool,
) -> Result<Vec<TokenSequence>> {
    let cfg = weights.config();
    samples
        .par_iter()
        .map(|s| if conflict { s.conflict_input(vocab, cfg) } else { s.clean_input(vocab, cfg) })
        .collect()
}

/// Judged answers on the conflict and clean input of every sample.
pub fn judge_condition(
    weights: &ModelWeights,
    vocab: &Vocab,
    samples: &[ConflictSample],
    condition: &AblationCondition,
) -> Result<(Vec<JudgedOutcome>, Vec<JudgedOutcome>)> {
    let label = condition.label();
    let judge = |conflict: bool| -> Result<Vec<JudgedOutcome>> {
        let answers = ablate_batch(weights, &inputs(weights, vocab, samples, conflict)?, &condition.head_set)?;
        Ok(samples.iter().zip(answers).map(|(s, a)| JudgedOutcome::new(s, &label, a)).collect())
    };
    Ok((judge(true)?, judge(false)?))
}

pub fn evaluate_condition(
    weights: &ModelWeights,
    vocab: &Vocab,
    samples: &[ConflictSample],
    condition: &AblationCondition,
) -> Result<ConditionResult> {
    if samples.is_empty() {
        return Err(Error::Input("no samples to evaluate".into()));
    }
    let (cf, cl) = judge_condition(weights, vocab, samples, condition)?;
    let (conflict, clean) = (VerdictCounts::tally(&cf), VerdictCounts::tally(&cl));
    Ok(ConditionResult {
        label: condition.label(),
        kind: condition.kind,
        heads: condition.head_set.clone(),
        seed: condition.seed,
        hall_rate: conflict.hallucinated as f64 / conflict.total() as f64,
        clean_acc: clean.factual as f64 / clean.total() as f64,
        conflict,
        clean,
    })
}

/// Features of `heads` on conflict inputs (label 1) followed by clean
/// inputs (label 0).
pub fn probe_dataset(
    weights: &ModelWeights,
    vocab: &Vocab,
    samples: &[ConflictSample],
    heads: &[HeadId],
) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let mut x = feature_batch(weights, &inputs(weights, vocab, samples, true)?, heads)?;
    x.extend(feature_batch(weights, &inputs(weights, vocab, samples, false)?, heads)?);
    let y = (0..x.len()).map(|i| i < samples.len()).collect();
    Ok((x, y))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepInputs<'a> {
    pub k_plus: &'a [usize],
    pub k_minus: &'a [usize],
    pub lambda: f64,
    pub train_probe: &'a [ConflictSample],
    pub validation: &'a [ConflictSample],
}

/// Drive-ablation rates per `k_plus` and probe validation AUROC per
/// `k_minus`, as plot rows.
pub fn sensitivity_sweep(
    weights: &ModelWeights,
    vocab: &Vocab,
    imp: &ImportanceMap,
    inp: &SweepInputs<'_>,
) -> Result<Vec<PlotRow>> {
    if inp.k_plus.is_empty() || inp.k_minus.is_empty() {
        return Err(Error::Config("sensitivity grids must be nonempty".into()));
    }
    let row = |series: &str, x: usize, y: f64| PlotRow { series: series.to_string(), x: x as f64, y, seed: None };
    let mut rows = Vec::new();
    for &k in inp.k_plus {
        let groups = select_groups(imp, k, 0);
        let r = evaluate_condition(weights, vocab, inp.validation, &AblationCondition::drive(&groups))?;
        rows.push(row("sweep_k_plus_hall_rate", k, r.hall_rate));
        rows.push(row("sweep_k_plus_clean_acc", k, r.clean_acc));
    }
    for &k in inp.k_minus {
        let groups = select_groups(imp, 0, k);
        if groups.resisting.is_empty() {
            continue;
        }
        let (x, y) = probe_dataset(weights, vocab, inp.train_probe, &groups.resisting)?;
        let probe = ProbeModel::train(&x, &y, inp.lambda)?;
        let (vx, vy) = probe_dataset(weights, vocab, inp.validation, &groups.resisting)?;
        rows.push(row("sweep_k_minus_val_auroc", k, auroc(&probe.scores(&vx)?, &vy)?));
    }
    Ok(rows)
}
