//! Monte Carlo simulation: scenario generators, recovery metrics, the
//! K-means baseline, replicate studies and bootstrap standard errors.

pub mod baseline;
pub mod bootstrap;
pub mod metrics;
pub mod scenario;
pub mod study;

pub use baseline::{kmeans_baseline, mean_triples};
pub use bootstrap::{bootstrap_se, bootstrap_se_with_resamples, BootstrapMode, BootstrapResult};
pub use metrics::{evaluate_clustering, hungarian, MetricsReport};
pub use scenario::{
    builtin_scenario, generate_dataset, ClusterDef, GeneratedData, Generator, ScaleRanges, ScenarioName, ScenarioSpec,
};
pub use study::{mean_sd, near_zero_cluster, run_mc_study, MethodSummary, ReplicateOutcome, StudyConfig, StudyReport};
