use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::probe::{resisting_feature, ProbeModel};
use crate::error::{Error, Result};
use crate::model::ops::argmax;
use crate::model::{forward, HeadId, ModelConfig, ModelWeights, OverridePlan, TokenSequence};
use crate::patching::HeadGroups;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    Base,
    Drive,
    Resist,
    Joint,
    Random,
}

impl ConditionKind {
    pub const ALL: [ConditionKind; 5] = [Self::Base, Self::Drive, Self::Resist, Self::Joint, Self::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Base => "base",
            Self::Drive => "drive",
            Self::Resist => "resist",
            Self::Joint => "joint",
            Self::Random => "random",
        }
    }
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A set of heads to zero during generation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCondition {
    pub kind: ConditionKind,
    pub head_set: Vec<HeadId>,
    pub seed: Option<u64>,
}

impl AblationCondition {
    pub fn base() -> Self {
        Self { kind: ConditionKind::Base, head_set: Vec::new(), seed: None }
    }

    pub fn drive(groups: &HeadGroups) -> Self {
        Self { kind: ConditionKind::Drive, head_set: groups.driving.clone(), seed: None }
    }

    pub fn resist(groups: &HeadGroups) -> Self {
        Self { kind: ConditionKind::Resist, head_set: groups.resisting.clone(), seed: None }
    }

    /// Top-k of each polarity with `k = min(|driving|, |resisting|)`.
    pub fn joint(groups: &HeadGroups) -> Self {
        let k = groups.driving.len().min(groups.resisting.len());
        let mut head_set: Vec<HeadId> = groups.driving[..k].to_vec();
        head_set.extend_from_slice(&groups.resisting[..k]);
        Self { kind: ConditionKind::Joint, head_set, seed: None }
    }

    /// `size` heads drawn uniformly without replacement from the heads not
    /// in `exclude` (normally the driving and resisting groups).
    pub fn random(config: &ModelConfig, size: usize, seed: u64, exclude: &[HeadId]) -> Result<Self> {
        let pool: Vec<HeadId> = config.heads().filter(|h| !exclude.contains(h)).collect();
        if size > pool.len() {
            return Err(Error::Config(format!("random ablation of {size} heads exceeds the {} eligible", pool.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head_set: Vec<HeadId> = sample(&mut rng, pool.len(), size).into_iter().map(|i| pool[i]).collect();
        head_set.sort();
        Ok(Self { kind: ConditionKind::Random, head_set, seed: Some(seed) })
    }

    /// Random control sized to the driving group, avoiding both groups.
    pub fn random_for(config: &ModelConfig, groups: &HeadGroups, seed: u64) -> Result<Self> {
        let mut exclude = groups.driving.clone();
        exclude.extend_from_slice(&groups.resisting);
        Self::random(config, groups.driving.len(), seed, &exclude)
    }

    pub fn label(&self) -> String {
        match self.seed {
            Some(s) => format!("{}:{s}", self.kind),
            None => self.kind.to_string(),
        }
    }
}

/// Greedy answer with `head_set` zeroed at every position.
pub fn ablate_generate(weights: &ModelWeights, input: &TokenSequence, head_set: &[HeadId]) -> Result<u32> {
    let out = forward(weights, input, &OverridePlan::zero_heads(head_set))?;
    Ok(argmax(&out.logits) as u32)
}

/// [`ablate_generate`] over many inputs; output order matches input order.
pub fn ablate_batch(weights: &ModelWeights, inputs: &[TokenSequence], head_set: &[HeadId]) -> Result<Vec<u32>> {
    inputs.par_iter().map(|x| ablate_generate(weights, x, head_set)).collect()
}

/// Conditional intervention: score the resisting-head feature of one
/// prefill pass and, if it reaches `tau`, regenerate with the driving heads
/// zeroed. Returns the answer and whether the probe fired.
pub fn maci_generate(
    weights: &ModelWeights,
    input: &TokenSequence,
    probe: &ProbeModel,
    groups: &HeadGroups,
) -> Result<(u32, bool)> {
    let tau = probe.tau()?;
    let base = forward(weights, input, &OverridePlan::new())?;
    let h = resisting_feature(&base.cache, &groups.resisting)?;
    if probe.score(&h)? >= tau {
        Ok((ablate_generate(weights, input, &groups.driving)?, true))
    } else {
        Ok((argmax(&base.logits) as u32, false))
    }
}

pub fn maci_batch(
    weights: &ModelWeights,
    inputs: &[TokenSequence],
    probe: &ProbeModel,
    groups: &HeadGroups,
) -> Result<Vec<(u32, bool)>> {
    inputs.par_iter().map(|x| maci_generate(weights, x, probe, groups)).collect()
}

/// Resisting-head features of many inputs, in input order.
pub fn feature_batch(weights: &ModelWeights, inputs: &[TokenSequence], resisting: &[HeadId]) -> Result<Vec<Vec<f64>>> {
    inputs
        .par_iter()
        .map(|x| {
            let out = forward(weights, x, &OverridePlan::new())?;
            resisting_feature(&out.cache, resisting)
        })
        .collect()
}
