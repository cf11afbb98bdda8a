//! Monte Carlo replicate studies comparing EM with the K-means baseline.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use log::warn;
use rayon::prelude::*;

use crate::beta::compute_site_scales;
use crate::em::{EmConfig, MixtureState, PreparedSites};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::select::{sweep_k_prepared, PlateauRule, SelectionRule};
use crate::sim::baseline::kmeans_baseline;
use crate::sim::metrics::{evaluate_clustering, MetricsReport};
use crate::sim::scenario::{generate_dataset, ScenarioSpec};

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub n_replicates: usize,
    pub k_range: RangeInclusive<usize>,
    pub em: EmConfig,
    pub rule: PlateauRule,
}

impl StudyConfig {
    pub fn new(n_replicates: usize, k_range: RangeInclusive<usize>) -> Self {
        Self {
            n_replicates,
            k_range,
            em: EmConfig::default(),
            rule: PlateauRule::default(),
        }
    }
}

/// Everything recorded for one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    /// Seed the replicate's data were generated from.
    pub data_seed: u64,
    pub selected_k: usize,
    pub selection_rule: SelectionRule,
    pub bic_curve: Vec<(usize, f64)>,
    /// EM at the selected number of clusters.
    pub em_selected: MetricsReport,
    /// EM at the true number of clusters, when that `K` was swept.
    pub em_true_k: Option<MetricsReport>,
    pub kmeans: MetricsReport,
    /// Fraction of truly nontransmitted sites assigned to the inferred
    /// cluster with the smallest parental coefficients, at the selected `K`.
    pub nontransmitted_recovery: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FailedReplicate {
    pub replicate: usize,
    pub error: String,
}

/// Mean and standard deviation per true cluster across replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub sensitivity_mean: Vec<f64>,
    pub sensitivity_sd: Vec<f64>,
    pub specificity_mean: Vec<f64>,
    pub specificity_sd: Vec<f64>,
    pub n_replicates: usize,
}

impl MethodSummary {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>, n_clusters: usize) -> Self {
        let reports: Vec<&MetricsReport> = reports.into_iter().collect();
        let column = |pick: &dyn Fn(&MetricsReport) -> &Vec<f64>, k: usize| -> (f64, f64) {
            let v: Vec<f64> = reports
                .iter()
                .filter_map(|r| pick(r).get(k).copied())
                .filter(|x| x.is_finite())
                .collect();
            mean_sd(&v)
        };
        let mut out = Self {
            sensitivity_mean: Vec::with_capacity(n_clusters),
            sensitivity_sd: Vec::with_capacity(n_clusters),
            specificity_mean: Vec::with_capacity(n_clusters),
            specificity_sd: Vec::with_capacity(n_clusters),
            n_replicates: reports.len(),
        };
        for k in 0..n_clusters {
            let (m, s) = column(&|r| &r.sensitivity, k);
            out.sensitivity_mean.push(m);
            out.sensitivity_sd.push(s);
            let (m, s) = column(&|r| &r.specificity, k);
            out.specificity_mean.push(m);
            out.specificity_sd.push(s);
        }
        out
    }
}

/// Sample mean and standard deviation (`n - 1` divisor, 0 for one value).
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub scenario: String,
    pub n_true_clusters: usize,
    pub replicates: Vec<ReplicateOutcome>,
    pub failures: Vec<FailedReplicate>,
    /// How often each `K` was selected.
    pub k_frequency: BTreeMap<usize, usize>,
    pub em_selected: MethodSummary,
    pub em_true_k: MethodSummary,
    pub kmeans: MethodSummary,
}

impl StudyReport {
    pub fn fraction_selecting(&self, k: usize) -> f64 {
        let total: usize = self.k_frequency.values().sum();
        if total == 0 {
            return 0.0;
        }
        self.k_frequency.get(&k).copied().unwrap_or(0) as f64 / total as f64
    }
}

/// Index of the cluster whose parental coefficients are closest to zero.
pub fn near_zero_cluster(state: &MixtureState) -> usize {
    state
        .coefficients
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let size = |c: &crate::em::ClusterCoefficients| c.gamma1.abs() + c.gamma2.abs();
            size(a.1).total_cmp(&size(b.1))
        })
        .map(|(k, _)| k)
        .unwrap_or(0)
}

fn run_replicate(spec: &ScenarioSpec, config: &StudyConfig, replicate: usize) -> Result<ReplicateOutcome> {
    let data_seed = derive_seed(spec.seed, replicate as u64);
    let generated = generate_dataset(&spec.with_seed(data_seed))?;
    let data = &generated.data;
    let truth = &generated.truth;
    let kt = spec.n_clusters();

    let scales = compute_site_scales(data)?;
    let prep = PreparedSites::new(data, &scales)?;
    let em = EmConfig {
        seed: derive_seed(config.em.seed ^ data_seed, 1),
        ..config.em.clone()
    };
    let sweep = sweep_k_prepared(&prep, data.n_triads(), config.k_range.clone(), &em, &config.rule)?;
    let selected = sweep.selected_fit();
    let em_selected = evaluate_clustering(&selected.hard_assignments(), truth, kt)?;
    let em_true_k = sweep
        .fit_for(kt)
        .map(|fit| evaluate_clustering(&fit.hard_assignments(), truth, kt))
        .transpose()?;
    let km = kmeans_baseline(data, kt, derive_seed(data_seed, 2))?;
    let kmeans = evaluate_clustering(&km.labels, truth, kt)?;

    let nontransmitted_recovery = spec.nontransmitted.map(|nt| {
        let zero = near_zero_cluster(selected);
        let labels = selected.hard_assignments();
        let members: Vec<usize> = (0..truth.len()).filter(|&j| truth[j] == nt).collect();
        let hits = members.iter().filter(|&&j| labels[j] == zero).count();
        hits as f64 / members.len().max(1) as f64
    });

    Ok(ReplicateOutcome {
        replicate,
        data_seed,
        selected_k: sweep.selected_k,
        selection_rule: sweep.selection_rule,
        bic_curve: sweep.curve(),
        em_selected,
        em_true_k,
        kmeans,
        nontransmitted_recovery,
    })
}

/// Runs `n_replicates` independent replicates of the scenario: generate,
/// sweep `K`, score EM at the selected and the true `K`, and score K-means
/// at the true `K`. A failing replicate is recorded and skipped.
pub fn run_mc_study(spec: &ScenarioSpec, config: &StudyConfig) -> Result<StudyReport> {
    if config.n_replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    spec.validate()?;
    config.em.validate()?;
    let outcomes: Vec<Result<ReplicateOutcome>> = (0..config.n_replicates)
        .into_par_iter()
        .map(|r| run_replicate(spec, config, r))
        .collect();

    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => replicates.push(o),
            Err(e) => {
                warn!("replicate {r} failed: {e}");
                failures.push(FailedReplicate {
                    replicate: r,
                    error: e.to_string(),
                });
            }
        }
    }
    let kt = spec.n_clusters();
    let mut k_frequency = BTreeMap::new();
    for o in &replicates {
        *k_frequency.entry(o.selected_k).or_insert(0) += 1;
    }
    Ok(StudyReport {
        scenario: spec.name.to_string(),
        n_true_clusters: kt,
        em_selected: MethodSummary::from_reports(replicates.iter().map(|o| &o.em_selected), kt),
        em_true_k: MethodSummary::from_reports(replicates.iter().filter_map(|o| o.em_true_k.as_ref()), kt),
        kmeans: MethodSummary::from_reports(replicates.iter().map(|o| &o.kmeans), kt),
        replicates,
        failures,
        k_frequency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::ClusterCoefficients;
    use crate::sim::scenario::ClusterDef;

    #[test]
    fn mean_sd_examples() {
        assert_eq!(mean_sd(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(mean_sd(&[]).0.is_nan());
    }

    #[test]
    fn separable_two_cluster_study() {
        let spec = ScenarioSpec::custom(
            vec![
                ClusterDef::independent(ClusterCoefficients::new(-1.5, 0.0, 0.0), 60),
                ClusterDef::independent(ClusterCoefficients::new(1.5, 0.0, 0.0), 60),
            ],
            40,
            11,
        );
        let mut config = StudyConfig::new(1, 1..=3);
        config.em.n_restarts = 2;
        let report = run_mc_study(&spec, &config).unwrap();
        assert!(report.failures.is_empty());
        let o = &report.replicates[0];
        assert_eq!(o.selected_k, 2);
        assert_eq!(o.em_selected.sensitivity, vec![1.0, 1.0]);
        assert_eq!(o.kmeans.sensitivity, vec![1.0, 1.0]);
        assert_eq!(report.k_frequency.get(&2), Some(&1));
        assert_eq!(report.fraction_selecting(2), 1.0);
        assert_eq!(report.em_true_k.sensitivity_sd, vec![0.0, 0.0]);
        assert!(o.nontransmitted_recovery.is_none());
    }

    #[test]
    fn study_is_deterministic() {
        let spec = ScenarioSpec::custom(
            vec![
                ClusterDef::independent(ClusterCoefficients::new(-1.0, 1.0, 0.0), 40),
                ClusterDef::independent(ClusterCoefficients::new(1.0, 0.0, 1.0), 40),
            ],
            20,
            3,
        );
        let mut config = StudyConfig::new(2, 1..=2);
        config.em.n_restarts = 1;
        let a = run_mc_study(&spec, &config).unwrap();
        let b = run_mc_study(&spec, &config).unwrap();
        assert_eq!(a.em_selected, b.em_selected);
        assert_eq!(a.k_frequency, b.k_frequency);
        assert_ne!(a.replicates[0].data_seed, a.replicates[1].data_seed);
    }

    #[test]
    fn zero_replicates_rejected() {
        let spec = ScenarioSpec::custom(vec![ClusterDef::independent(ClusterCoefficients::default(), 10)], 10, 1);
        assert!(run_mc_study(&spec, &StudyConfig::new(0, 1..=2)).is_err());
    }
}
