//! Training the miniature model on the synthetic task with a premise-bias
//! curriculum, plus the loss and gradient-check utilities.

mod curriculum;
mod loss;
mod sgd;

pub use curriculum::{premise_strength, Plausibility, Presentation, TrainItem};
pub use loss::{cross_entropy, cross_entropy_grad, grad_check, GradCheck};
pub use sgd::{evaluate, reference_model_config, train, CurvePoint, EvalSummary, TrainConfig, TrainOutcome};
