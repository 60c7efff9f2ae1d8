//! Relative goodness-of-fit tests: given candidate models `P`, `Q` and a
//! sample from `R`, decide whether `Q` fits `R` better than `P`.
//!
//! Estimators live in [`ume`] (sample-based), [`fssd`] (score-based) and
//! [`mmd`] (quadratic-time baseline). [`tuning`] optimizes test locations
//! and bandwidths, and [`harness`] runs the benchmark problems.

pub mod error;
pub mod fssd;
pub mod harness;
pub mod kernels;
pub mod locations;
pub mod mmd;
pub mod models;
pub mod test_result;
pub mod tuning;
pub mod ume;

pub use error::{Error, Result};
pub use fssd::{
    fssd_power_criterion, fssd_sq, rel_fssd_stat_and_var, rel_fssd_test, stein_feature,
    stein_feature_matrix, SteinFeature,
};
pub use kernels::{init_bandwidth, median_heuristic, GaussianKernel, MedianDistance};
pub use locations::TestLocations;
pub use mmd::{mmd_u_sq, rel_mmd_stat_and_var, rel_mmd_test};
pub use models::{DensityModel, Sampler};
pub use test_result::{RelativeStatistic, TestResult, VarianceTerms, DEFAULT_GAMMA, VARIANCE_FLOOR};
pub use ume::{
    feature_map, feature_matrix, rel_ume_stat_and_var, rel_ume_test, ume_power_criterion, ume_sq,
};
pub use tuning::{
    fssd_criterion_grad, greedy_select, initial_fssd_bandwidth, initial_ume_bandwidth, optimize_fssd_params, optimize_ume_params,
    score_candidate_pool, split_indices, split_train_test, ume_criterion_grad, CriterionContext,
    CriterionGradient, Direction, GreedySelection, OptimConfig, OptimResult, PoolScores,
    SampleTriple,
};
