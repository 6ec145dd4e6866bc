use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::ops::{log_softmax, softmax};
use crate::model::{backward, forward, forward_trace, ModelWeights, OverridePlan, TokenSequence};

/// `-log softmax(logits)[target]`
pub fn cross_entropy(logits: &[f64], target: u32) -> Result<f64> {
    let t = target as usize;
    if t >= logits.len() {
        return Err(Error::Input(format!("target {target} outside {} classes", logits.len())));
    }
    Ok(-log_softmax(logits)[t])
}

/// Gradient of [`cross_entropy`] with respect to the logits.
pub fn cross_entropy_grad(logits: &[f64], target: u32) -> Vec<f64> {
    let mut g = softmax(logits);
    g[target as usize] -= 1.0;
    g
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter index where the maximum occurred.
    pub worst_param: usize,
    pub checked: usize,
}

/// Compares the analytic gradient of the cross-entropy loss against central
/// differences on `n_params` randomly chosen parameters.
///
/// Relative error per parameter is `|a - n| / (|a| + |n| + 1e-12)`.
pub fn grad_check(
    weights: &ModelWeights,
    input: &TokenSequence,
    target: u32,
    epsilon: f64,
    n_params: usize,
    seed: u64,
) -> Result<GradCheck> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Input(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let plan = OverridePlan::new();
    let trace = forward_trace(weights, input, &plan)?;
    let dlogits = cross_entropy_grad(&trace.logits, target);
    let mut grad = vec![0.0; weights.params().len()];
    backward(weights, input, &trace, &dlogits, &mut grad);
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite analytic gradient at parameter {i}")));
    }

    let total = weights.params().len();
    let picks = sample(&mut ChaCha8Rng::seed_from_u64(seed), total, n_params.min(total));
    let mut probe = weights.clone();
    let mut result = GradCheck { max_rel_error: 0.0, worst_param: 0, checked: 0 };
    for i in picks.iter() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + epsilon;
        let up = cross_entropy(&forward(&probe, input, &plan)?.logits, target)?;
        probe.params_mut()[i] = orig - epsilon;
        let down = cross_entropy(&forward(&probe, input, &plan)?.logits, target)?;
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        if !numeric.is_finite() {
            return Err(Error::Numeric(format!("non-finite central difference at parameter {i}")));
        }
        let rel = (grad[i] - numeric).abs() / (grad[i].abs() + numeric.abs() + 1e-12);
        if rel > result.max_rel_error {
            result.max_rel_error = rel;
            result.worst_param = i;
        }
        result.checked += 1;
    }
    Ok(result)
}

/// Analytic gradient of the cross-entropy loss for one example.
pub(crate) fn example_grad(
    weights: &ModelWeights,
    input: &TokenSequence,
    plan: &OverridePlan,
    target: u32,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let trace = forward_trace(weights, input, plan)?;
    let loss = cross_entropy(&trace.logits, target)?;
    let mut dlogits = cross_entropy_grad(&trace.logits, target);
    dlogits.iter_mut().for_each(|g| *g *= scale);
    backward(weights, input, &trace, &dlogits, grad);
    Ok(loss)
}
