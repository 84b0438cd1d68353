//! Simulation study: data generator, evaluation metrics, the CAP-mix
//! baseline and experiment grids.

mod cap_mix;
mod experiment;
mod generator;
mod lmm;
mod metrics;

pub use cap_mix::{cap_mix_baseline, cap_mix_scores, CapMixComponent, CapMixResult};
pub use experiment::{
    replicate_seed, run_experiment, run_replicate, Cell, ExperimentConfig, ExperimentReport,
};
pub use generator::{
    generate_dataset, generate_panel, generate_truth, population_panel, random_orthogonal,
    BasisSpec, Beta0Profile, DimEffect, SimConfig, SimTruth, N_COVARIATES,
};
pub use lmm::{fit_random_intercept, LmmFit};
pub use metrics::{
    evaluate_fit, match_component, score_estimate, similarity, Estimate, Method, Metric,
    MetricsReport, ReplicateOutcome,
};
