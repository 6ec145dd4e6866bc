//! Zero-ablation conditions and conditional intervention gated by a probe
//! on resisting-head activations.

mod ablation;
mod probe;

pub use ablation::{
    ablate_batch, ablate_generate, feature_batch, maci_batch, maci_generate, AblationCondition, ConditionKind,
};
pub use probe::{
    auroc, f1_at, fit_lasso_logistic, lasso_objective, read_probe, resisting_feature, select_threshold, sigmoid,
    write_probe, LassoFit, ProbeModel, LAMBDA_GRID, MAX_PASSES, OBJECTIVE_TOL, PROBE_FORMAT_VERSION,
};
