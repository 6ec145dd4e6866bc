use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HeadId, ModelWeights, PositionScope};
use crate::patching::{head_importance, select_groups, ImportanceMap};
use crate::synth::{ConflictSample, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Hallucinated,
    Factual,
    Other,
}

/// Exact-token judge: the premise answer is a hallucination, the grounded
/// answer is factual, anything else is neither.
pub fn judge(sample: &ConflictSample, answer: u32) -> Verdict {
    if answer == sample.y_h {
        Verdict::Hallucinated
    } else if answer == sample.y_f {
        Verdict::Factual
    } else {
        Verdict::Other
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedOutcome {
    pub sample_id: u64,
    pub condition: String,
    pub answer: u32,
    pub verdict: Verdict,
}

impl JudgedOutcome {
    pub fn new(sample: &ConflictSample, condition: &str, answer: u32) -> Self {
        Self { sample_id: sample.id, condition: condition.to_string(), answer, verdict: judge(sample, answer) }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub hallucinated: usize,
    pub factual: usize,
    pub other: usize,
}

impl VerdictCounts {
    pub fn tally(outcomes: &[JudgedOutcome]) -> Self {
        let mut c = Self::default();
        for o in outcomes {
            match o.verdict {
                Verdict::Hallucinated => c.hallucinated += 1,
                Verdict::Factual => c.factual += 1,
                Verdict::Other => c.other += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.hallucinated + self.factual + self.other
    }
}

fn fraction(outcomes: &[JudgedOutcome], verdict: Verdict) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Input("no outcomes to score".into()));
    }
    Ok(outcomes.iter().filter(|o| o.verdict == verdict).count() as f64 / outcomes.len() as f64)
}

/// Share of conflict-input outcomes that follow the premise.
pub fn hallucination_rate(outcomes: &[JudgedOutcome]) -> Result<f64> {
    fraction(outcomes, Verdict::Hallucinated)
}

/// Share of clean-input outcomes that give the grounded answer.
pub fn clean_accuracy(outcomes: &[JudgedOutcome]) -> Result<f64> {
    fraction(outcomes, Verdict::Factual)
}

/// Chance-corrected agreement between two labelings of the same items.
pub fn cohen_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!("label lists differ in length ({} vs {})", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Input("no labels to compare".into()));
    }
    // Integer counts keep the result to a single rounding:
    // kappa = (n * agree - sum ca * cb) / (n^2 - sum ca * cb).
    let n = a.len() as u128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as u128;
    let mut ma: HashMap<&T, u128> = HashMap::new();
    let mut mb: HashMap<&T, u128> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    let chance: u128 = ma.iter().map(|(k, &ca)| ca * mb.get(k).copied().unwrap_or(0)).sum();
    if chance == n * n {
        return Ok(1.0);
    }
    let num = (n * agree) as i128 - chance as i128;
    Ok(num as f64 / (n * n - chance) as f64)
}

/// Shared fraction of two top-k lists, relative to the longer list. Two
/// empty lists agree fully.
pub fn top_k_overlap(a: &[HeadId], b: &[HeadId]) -> f64 {
    let denom = a.len().max(b.len());
    if denom == 0 {
        return 1.0;
    }
    a.iter().filter(|h| b.contains(h)).count() as f64 / denom as f64
}

/// Driving and resisting top-k overlap between two importance maps.
pub fn map_overlap(a: &ImportanceMap, b: &ImportanceMap, k: usize) -> (f64, f64) {
    let (ga, gb) = (select_groups(a, k, k), select_groups(b, k, k));
    (top_k_overlap(&ga.driving, &gb.driving), top_k_overlap(&ga.resisting, &gb.resisting))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapResult {
    pub seed: u64,
    pub k: usize,
    pub driving: f64,
    pub resisting: f64,
}

/// Splits `proto` into two random halves and compares their top-k heads.
pub fn split_half_overlap(
    weights: &ModelWeights,
    vocab: &Vocab,
    proto: &[ConflictSample],
    k: usize,
    seed: u64,
    scope: PositionScope,
) -> Result<OverlapResult> {
    if proto.len() < 2 {
        return Err(Error::Input("split-half overlap needs at least two prototype samples".into()));
    }
    let mut shuffled: Vec<ConflictSample> = proto.to_vec();
    shuffled.sort_by_key(|s| s.id);
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = shuffled.split_at(shuffled.len() / 2);
    let (driving, resisting) =
        map_overlap(&head_importance(weights, vocab, a, scope)?, &head_importance(weights, vocab, b, scope)?, k);
    Ok(OverlapResult { seed, k, driving, resisting })
}

/// Outcome counts per condition label, in label order.
pub fn counts_by_condition(outcomes: &[JudgedOutcome]) -> BTreeMap<String, VerdictCounts> {
    let mut groups: BTreeMap<String, Vec<JudgedOutcome>> = BTreeMap::new();
    for o in outcomes {
        groups.entry(o.condition.clone()).or_default().push(o.clone());
    }
    groups.into_iter().map(|(k, v)| (k, VerdictCounts::tally(&v))).collect()
}
