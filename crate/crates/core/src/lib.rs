//! Clustering of genomic sites by how methylation is transmitted from
//! parents to offspring.
//!
//! Each site is summarized by the logit-means of mother, father and child
//! methylation. Sites in one cluster share transmission coefficients
//! `(g0, g1, g2)` linking the child's logit-mean to the parents'. Clusters
//! are fitted with an empirical EM over a Beta-regression mixture and the
//! number of clusters is chosen from the BIC curve.

pub mod beta;
pub mod data;
pub mod em;
pub mod error;
pub mod kmeans;
pub mod optim;
pub mod rng;
pub mod select;
pub mod sim;
pub mod subsets;

pub use beta::{
    beta_log_density, compute_site_scales, estimate_scales_from_moments, inverse_logit, logit, BetaScale, SiteScales,
};
pub use data::TriadDataset;
pub use em::{
    child_cluster_mean, e_step, hard_assignments, m_step_gamma, m_step_pi, run_em, run_em_from, site_cluster_loglik,
    ClusterCoefficients, EmConfig, MixtureState,
};
pub use error::{Error, Result, Role};
pub use kmeans::{kmeans, KMeansOptions, KMeansResult};
pub use select::{bic_value, sweep_k, BicRecord, KSweepResult, PlateauRule, SelectionRule};
pub use subsets::{
    cluster_by_subsets, miss_percentage, plan_subsets, plan_subsets_with_count, required_subsets, Stage1Cluster,
    SubsetPlan, TwoStageResult,
};
