//! Clustering large site sets through random subsets.
//!
//! EM runs on `m` random subsets of `S` sites each, chosen so that the chance
//! a given site is never drawn, `(1 - S/J)^m`, stays within a budget. The
//! coefficient vectors found in the subsets are then grouped by a second
//! weighted K-means stage and every site inherits the group of its subset
//! cluster.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use log::{info, warn};
use ndarray::Array2;
use rand::seq::index::sample;
use rayon::prelude::*;

use crate::em::{expectation, ClusterCoefficients, EmConfig, PreparedSites};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansOptions};
use crate::rng::{derive_seed, task_rng};
use crate::select::{bic_value, sweep_k_prepared, PlateauRule};
use crate::{SiteScales, TriadDataset};

/// Percentage of sites expected to be missed by `n_subsets` draws of
/// `subset_size` out of `n_sites`.
pub fn miss_percentage(n_sites: usize, subset_size: usize, n_subsets: usize) -> f64 {
    100.0 * (1.0 - subset_size as f64 / n_sites as f64).powi(n_subsets as i32)
}

/// Smallest `m` with `100 (1 - S/J)^m <= eta`.
pub fn required_subsets(n_sites: usize, subset_size: usize, miss_budget_pct: f64) -> Result<usize> {
    if subset_size == 0 || subset_size > n_sites {
        return Err(Error::InvalidArgument(format!(
            "subset size {subset_size} must be in 1..={n_sites}"
        )));
    }
    if !(miss_budget_pct > 0.0 && miss_budget_pct < 100.0) {
        return Err(Error::InvalidArgument(format!(
            "miss budget {miss_budget_pct}% must be in (0, 100)"
        )));
    }
    if subset_size == n_sites {
        return Ok(1);
    }
    let q = 1.0 - subset_size as f64 / n_sites as f64;
    let mut m = ((miss_budget_pct / 100.0).ln() / q.ln()).ceil().max(1.0) as usize;
    // guard the logarithm against rounding on either side
    while m > 1 && miss_percentage(n_sites, subset_size, m - 1) <= miss_budget_pct {
        m -= 1;
    }
    while miss_percentage(n_sites, subset_size, m) > miss_budget_pct {
        m += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetPlan {
    pub n_sites: usize,
    pub subset_size: usize,
    pub n_subsets: usize,
    /// Budget the plan was built for; for a forced count, the miss it
    /// achieves.
    pub miss_budget_pct: f64,
    pub seed: u64,
    /// Site indices of each subset, sorted ascending.
    pub subsets: Vec<Vec<usize>>,
}

impl SubsetPlan {
    pub fn expected_miss_pct(&self) -> f64 {
        miss_percentage(self.n_sites, self.subset_size, self.n_subsets)
    }

    /// Sites drawn in no subset.
    pub fn uncovered(&self) -> Vec<usize> {
        let mut covered = vec![false; self.n_sites];
        for s in &self.subsets {
            for &j in s {
                covered[j] = true;
            }
        }
        (0..self.n_sites).filter(|&j| !covered[j]).collect()
    }

    /// A plan from explicit subsets, e.g. a fixed partition of the sites.
    pub fn from_subsets(n_sites: usize, subsets: Vec<Vec<usize>>, seed: u64) -> Result<Self> {
        if subsets.is_empty() {
            return Err(Error::InvalidArgument("plan needs at least one subset".into()));
        }
        let subset_size = subsets[0].len();
        let mut sorted = Vec::with_capacity(subsets.len());
        for s in subsets {
            let set: BTreeSet<usize> = s.iter().copied().collect();
            if set.len() != s.len() || s.len() != subset_size || subset_size == 0 {
                return Err(Error::InvalidArgument(
                    "subsets must be nonempty, of equal size and without repeats".into(),
                ));
            }
            if set.iter().any(|&j| j >= n_sites) {
                return Err(Error::InvalidArgument(format!("site index out of range 0..{n_sites}")));
            }
            sorted.push(set.into_iter().collect());
        }
        let n_subsets = sorted.len();
        Ok(Self {
            n_sites,
            subset_size,
            n_subsets,
            miss_budget_pct: miss_percentage(n_sites, subset_size, n_subsets),
            seed,
            subsets: sorted,
        })
    }
}

fn draw_subset(n_sites: usize, subset_size: usize, seed: u64, index: u64) -> Vec<usize> {
    let mut rng = task_rng(seed, index);
    let mut s = sample(&mut rng, n_sites, subset_size).into_vec();
    s.sort_unstable();
    s
}

/// Plans the smallest number of subsets that meets the miss budget.
pub fn plan_subsets(n_sites: usize, subset_size: usize, miss_budget_pct: f64, seed: u64) -> Result<SubsetPlan> {
    let m = required_subsets(n_sites, subset_size, miss_budget_pct)?;
    let mut plan = plan_subsets_with_count(n_sites, subset_size, m, seed)?;
    plan.miss_budget_pct = miss_budget_pct;
    Ok(plan)
}

/// Plans exactly `n_subsets` subsets, whatever coverage that gives.
pub fn plan_subsets_with_count(n_sites: usize, subset_size: usize, n_subsets: usize, seed: u64) -> Result<SubsetPlan> {
    if subset_size == 0 || subset_size > n_sites {
        return Err(Error::InvalidArgument(format!(
            "subset size {subset_size} must be in 1..={n_sites}"
        )));
    }
    if n_subsets == 0 {
        return Err(Error::InvalidArgument("need at least one subset".into()));
    }
    let subsets = (0..n_subsets as u64)
        .map(|i| draw_subset(n_sites, subset_size, seed, i))
        .collect();
    Ok(SubsetPlan {
        n_sites,
        subset_size,
        n_subsets,
        miss_budget_pct: miss_percentage(n_sites, subset_size, n_subsets),
        seed,
        subsets,
    })
}

/// One cluster found in one subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Cluster {
    pub subset: usize,
    pub cluster: usize,
    pub coefficients: ClusterCoefficients,
    pub size: usize,
    /// Second-stage group this cluster was put in.
    pub group: usize,
}

#[derive(Debug, Clone)]
pub struct TwoStageResult {
    pub stage1: Vec<Stage1Cluster>,
    /// Selected `K` per subset.
    pub subset_k: Vec<usize>,
    /// Sites of each subset actually fitted; differs from the plan when a
    /// failed subset was re-drawn.
    pub subsets: Vec<Vec<usize>>,
    /// Stage-1 cluster of each site of each subset, aligned with `subsets`.
    pub subset_labels: Vec<Vec<usize>>,
    pub final_coefficients: Vec<ClusterCoefficients>,
    pub final_assignments: Vec<usize>,
    /// Sites whose subset clusters fell into different groups.
    pub conflicts_resolved: usize,
    /// Sites in no subset, assigned afterwards by likelihood alone.
    pub post_hoc: Vec<usize>,
}

struct SubsetFit {
    sites: Vec<usize>,
    labels: Vec<usize>,
    coefficients: Vec<ClusterCoefficients>,
}

fn fit_subset(
    prep: &PreparedSites,
    n_triads: usize,
    sites: &[usize],
    config: &EmConfig,
    k_range: &RangeInclusive<usize>,
) -> Result<SubsetFit> {
    let sub = prep.subset(sites);
    let k_hi = (*k_range.end()).min(sites.len());
    let k_lo = (*k_range.start()).min(k_hi);
    let sweep = sweep_k_prepared(&sub, n_triads, k_lo..=k_hi, config, &PlateauRule::default())?;
    let fit = sweep.selected_fit();
    Ok(SubsetFit {
        sites: sites.to_vec(),
        labels: fit.hard_assignments(),
        coefficients: fit.coefficients.clone(),
    })
}

/// Groups stage-1 coefficient vectors by weighted K-means, trying every
/// group count in `range`. Each candidate grouping is scored as a mixture on
/// all sites, centroids as coefficients and group weights as mixing
/// proportions, and the lowest BIC wins. Returns group labels (numbered in
/// order of first appearance) and centroids.
fn second_stage(
    prep: &PreparedSites,
    n_triads: usize,
    points: &[ClusterCoefficients],
    weights: &[f64],
    range: RangeInclusive<usize>,
    seed: u64,
) -> Result<(Vec<usize>, Vec<ClusterCoefficients>)> {
    let n = points.len();
    let x = Array2::from_shape_fn((n, 3), |(i, c)| points[i].to_array()[c]);
    let distinct = {
        let mut v: Vec<[u64; 3]> = points.iter().map(|p| p.to_array().map(f64::to_bits)).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    let hi = (*range.end()).min(distinct).max(1);
    let lo = (*range.start()).clamp(1, hi);
    let opts = KMeansOptions::default();
    let mut best: Option<(f64, Vec<usize>, Array2<f64>)> = None;
    for g in lo..=hi {
        let mut rng = task_rng(seed, g as u64);
        let fit = kmeans(x.view(), Some(weights), g, &opts, &mut rng)?;
        let mut mass = vec![0.0; g];
        for (&l, &w) in fit.labels.iter().zip(weights) {
            mass[l] += w;
        }
        let total: f64 = mass.iter().sum();
        let centroids: Vec<ClusterCoefficients> = fit
            .centers
            .rows()
            .into_iter()
            .map(|r| ClusterCoefficients::new(r[0], r[1], r[2]))
            .collect();
        let mixing: Vec<f64> = mass.iter().map(|m| m / total).collect();
        let (_, loglik) = expectation(prep, &centroids, &mixing);
        let score = bic_value(loglik, prep.n_sites(), g, n_triads);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, fit.labels, fit.centers));
        }
    }
    let (_, labels, centers) = best.expect("at least one group count tried");
    // renumber groups by first appearance
    let mut map = vec![usize::MAX; centers.nrows()];
    let mut next = 0;
    let labels: Vec<usize> = labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect();
    let mut centroids = vec![ClusterCoefficients::default(); next];
    for (old, &new) in map.iter().enumerate() {
        if new != usize::MAX {
            centroids[new] = ClusterCoefficients::new(centers[[old, 0]], centers[[old, 1]], centers[[old, 2]]);
        }
    }
    Ok((labels, centroids))
}

fn best_group(
    prep: &PreparedSites,
    j: usize,
    candidates: impl Iterator<Item = usize>,
    centroids: &[ClusterCoefficients],
) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for g in candidates {
        let ll = prep.site_loglik(j, &centroids[g]);
        if best.0 == usize::MAX || ll > best.1 {
            best = (g, ll);
        }
    }
    best.0
}

/// Two-stage clustering over the plan's subsets.
///
/// Each subset gets its own BIC sweep over `k_range`; a subset whose sweep
/// fails is re-drawn once before the whole run fails. The pooled subset
/// coefficients are grouped with the group count searched between the
/// smallest and largest per-subset `K`. A site seen in several subsets whose
/// clusters landed in different groups goes to the candidate group whose
/// centroid gives it the highest log-likelihood.
pub fn cluster_by_subsets(
    data: &TriadDataset,
    scales: &[SiteScales],
    plan: &SubsetPlan,
    config: &EmConfig,
    k_range: RangeInclusive<usize>,
) -> Result<TwoStageResult> {
    if plan.n_sites != data.n_sites() {
        return Err(Error::Shape(format!(
            "plan covers {} sites, data has {}",
            plan.n_sites,
            data.n_sites()
        )));
    }
    let prep = PreparedSites::new(data, scales)?;
    let n_triads = data.n_triads();
    let fits: Vec<Result<SubsetFit>> = plan
        .subsets
        .par_iter()
        .enumerate()
        .map(
            |(i, sites)| match fit_subset(&prep, n_triads, sites, config, &k_range) {
                Ok(f) => Ok(f),
                Err(e) => {
                    warn!("subset {i} failed ({e}); drawing a replacement");
                    let redraw = draw_subset(plan.n_sites, sites.len(), derive_seed(plan.seed, 0x5eed), i as u64);
                    fit_subset(&prep, n_triads, &redraw, config, &k_range)
                }
            },
        )
        .collect();
    let fits: Vec<SubsetFit> = fits.into_iter().collect::<Result<_>>()?;

    let mut stage1 = Vec::new();
    for (i, fit) in fits.iter().enumerate() {
        let mut sizes = vec![0usize; fit.coefficients.len()];
        for &l in &fit.labels {
            sizes[l] += 1;
        }
        for (c, coeff) in fit.coefficients.iter().enumerate() {
            if sizes[c] > 0 {
                stage1.push(Stage1Cluster {
                    subset: i,
                    cluster: c,
                    coefficients: *coeff,
                    size: sizes[c],
                    group: 0,
                });
            }
        }
    }
    let subset_k: Vec<usize> = fits.iter().map(|f| f.coefficients.len()).collect();
    let g_lo = *subset_k.iter().min().expect("at least one subset");
    let g_hi = *subset_k.iter().max().expect("at least one subset");
    let points: Vec<ClusterCoefficients> = stage1.iter().map(|s| s.coefficients).collect();
    let weights: Vec<f64> = stage1.iter().map(|s| s.size as f64).collect();
    let (groups, centroids) = second_stage(
        &prep,
        n_triads,
        &points,
        &weights,
        g_lo..=g_hi,
        derive_seed(config.seed, 0x2_57a6e),
    )?;
    for (s, &g) in stage1.iter_mut().zip(&groups) {
        s.group = g;
    }
    info!(
        "{} subset clusters grouped into {} clusters (subset K from {g_lo} to {g_hi})",
        stage1.len(),
        centroids.len()
    );

    // group of every (subset, cluster) pair
    let mut lookup: Vec<Vec<usize>> = subset_k.iter().map(|&k| vec![usize::MAX; k]).collect();
    for s in &stage1 {
        lookup[s.subset][s.cluster] = s.group;
    }
    let mut candidates: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); data.n_sites()];
    for (i, fit) in fits.iter().enumerate() {
        for (&j, &l) in fit.sites.iter().zip(&fit.labels) {
            candidates[j].insert(lookup[i][l]);
        }
    }
    let mut final_assignments = vec![0; data.n_sites()];
    let mut conflicts_resolved = 0;
    let mut post_hoc = Vec::new();
    for (j, cands) in candidates.iter().enumerate() {
        final_assignments[j] = match cands.len() {
            0 => {
                post_hoc.push(j);
                best_group(&prep, j, 0..centroids.len(), &centroids)
            }
            1 => *cands.iter().next().unwrap(),
            _ => {
                conflicts_resolved += 1;
                best_group(&prep, j, cands.iter().copied(), &centroids)
            }
        };
    }
    if !post_hoc.is_empty() {
        warn!("{} sites were in no subset and were assigned post hoc", post_hoc.len());
    }
    Ok(TwoStageResult {
        stage1,
        subset_k,
        subset_labels: fits.iter().map(|f| f.labels.clone()).collect(),
        subsets: fits.into_iter().map(|f| f.sites).collect(),
        final_coefficients: centroids,
        final_assignments,
        conflicts_resolved,
        post_hoc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn subset_count_examples() {
        assert_eq!(required_subsets(4063, 2000, 1.0).unwrap(), 7);
        assert_eq!(required_subsets(100, 100, 1.0).unwrap(), 1);
        // (1/2)^m <= 0.01 first at m = 7
        assert_eq!(required_subsets(10, 5, 1.0).unwrap(), 7);
        assert!(required_subsets(10, 11, 1.0).is_err());
        assert!(required_subsets(10, 0, 1.0).is_err());
        assert!(required_subsets(10, 5, 0.0).is_err());
        assert!(required_subsets(10, 5, 100.0).is_err());
    }

    #[test]
    fn forced_fifteen_subsets_cover_nearly_everything() {
        let plan = plan_subsets_with_count(4063, 2000, 15, 1).unwrap();
        let miss = plan.expected_miss_pct();
        assert!(miss <= 1.0);
        assert!((miss - 0.004).abs() < 0.001, "{miss}");
        assert_eq!(plan.subsets.len(), 15);
    }

    #[test]
    fn plan_invariants_and_determinism() {
        let plan = plan_subsets(500, 120, 5.0, 9).unwrap();
        assert!(plan.expected_miss_pct() <= 5.0);
        for s in &plan.subsets {
            assert_eq!(s.len(), 120);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert!(*s.last().unwrap() < 500);
        }
        assert_eq!(plan, plan_subsets(500, 120, 5.0, 9).unwrap());
        assert_ne!(plan.subsets, plan_subsets(500, 120, 5.0, 10).unwrap().subsets);
        let full = plan_subsets(50, 50, 1.0, 0).unwrap();
        assert_eq!(full.n_subsets, 1);
        assert!(full.uncovered().is_empty());
    }

    #[test]
    fn explicit_plans_are_checked() {
        assert!(SubsetPlan::from_subsets(4, vec![vec![0, 1], vec![2, 3]], 0).is_ok());
        assert!(SubsetPlan::from_subsets(4, vec![vec![0, 0]], 0).is_err());
        assert!(SubsetPlan::from_subsets(4, vec![vec![0, 1], vec![2]], 0).is_err());
        assert!(SubsetPlan::from_subsets(4, vec![vec![0, 9]], 0).is_err());
        let p = SubsetPlan::from_subsets(5, vec![vec![3, 0]], 0).unwrap();
        assert_eq!(p.subsets[0], vec![0, 3]);
        assert_eq!(p.uncovered(), vec![1, 2, 4]);
    }

    #[test]
    fn second_stage_merges_close_vectors() {
        use crate::beta::compute_site_scales;
        use crate::sim::{generate_dataset, ClusterDef, ScenarioSpec};
        let a = ClusterCoefficients::new(-2.0, 0.0, 1.3);
        let b = ClusterCoefficients::new(-0.7, 1.9, 0.0);
        let spec = ScenarioSpec::custom(
            vec![ClusterDef::independent(a, 100), ClusterDef::independent(b, 100)],
            40,
            3,
        );
        let g = generate_dataset(&spec).unwrap();
        let scales = compute_site_scales(&g.data).unwrap();
        let prep = PreparedSites::new(&g.data, &scales).unwrap();
        let near = |c: ClusterCoefficients, d: f64| ClusterCoefficients::new(c.gamma0 + d, c.gamma1 - d, c.gamma2);
        let points = vec![a, b, near(a, 0.05), near(b, 0.02), near(a, -0.03), near(b, -0.04)];
        let (labels, centroids) = second_stage(&prep, 40, &points, &[50.0; 6], 2..=4, 1).unwrap();
        assert_eq!(labels, vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(centroids.len(), 2);
        assert!((centroids[0].gamma0 + 1.9933).abs() < 1e-3, "{:?}", centroids[0]);
    }

    proptest! {
        #[test]
        fn subset_count_is_minimal(j in 2usize..20_000, frac in 0.01f64..1.0, eta in 0.01f64..99.0) {
            let s = ((j as f64 * frac).ceil() as usize).clamp(1, j);
            let m = required_subsets(j, s, eta).unwrap();
            prop_assert!(miss_percentage(j, s, m) <= eta);
            if m > 1 {
                prop_assert!(miss_percentage(j, s, m - 1) > eta);
            }
        }
    }
}
