//! Synthetic data, dataset loading, and the experiment drivers that measure
//! how the bounds behave on data with a planted good combination.

pub mod dataset;
pub mod experiments;
pub mod planted;

pub use dataset::load_dataset;
pub use experiments::{
    run_bound_check, run_experiment, run_oracle_experiment, run_rademacher_experiment,
    run_reverse_bound_check, run_sparsity_comparison, ExperimentConfig, ExperimentKind,
    ExperimentReport, LambdaRule,
};
pub use planted::{gen_planted, Planted, PlantedModel, PlantedSpec};
