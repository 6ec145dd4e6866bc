//! End-to-end run configuration and the stage sequence
//! gen → split → train → patch → select → ablate → probe-train → threshold
//! → maci → report.

mod config;
mod stages;

pub use config::{
    reference_train_config, AnalysisConfig, DataConfig, ModelSection, PathsConfig, RunConfig, SplitConfig,
    ThresholdPolicy, CONFIG_ENV,
};
pub use stages::{
    ablation_suite, choose_threshold, curve_csv, fit_probe, gen_dataset, io, load_checkpoint, load_dataset,
    merge_results, patch_heads, preflight, run_maci, run_pipeline, select_heads, split_dataset, train_model,
    with_proto, Artifacts, PipelineError, Stage,
};
