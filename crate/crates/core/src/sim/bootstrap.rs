//! Bootstrap standard errors of the cluster coefficients, resampling triads.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use crate::beta::compute_site_scales;
use crate::data::TriadDataset;
use crate::em::{maximize_coefficients, run_em_prepared, ClusterCoefficients, EmConfig, PreparedSites};
use crate::error::{Error, Result};
use crate::rng::task_rng;
use crate::sim::metrics::hungarian;
use crate::sim::study::mean_sd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BootstrapMode {
    /// Keep every site in its point-estimate cluster and refit only the
    /// coefficients. No label switching can occur.
    #[default]
    FixedAssignments,
    /// Rerun EM on every resample and match its clusters to the point
    /// estimates by coefficient distance.
    FullRefit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Resamples that produced a fit.
    pub n_reps: usize,
    /// Resamples skipped because some site became degenerate.
    pub n_skipped: usize,
    /// `(se_gamma0, se_gamma1, se_gamma2)` per cluster.
    pub coefficient_se: Vec<[f64; 3]>,
    /// Refitted coefficients, one vector per used resample.
    pub replicates: Vec<Vec<ClusterCoefficients>>,
}

fn check_inputs(data: &TriadDataset, assignments: &[usize], point: &[ClusterCoefficients]) -> Result<()> {
    if assignments.len() != data.n_sites() {
        return Err(Error::Shape(format!(
            "{} assignments for {} sites",
            assignments.len(),
            data.n_sites()
        )));
    }
    if point.is_empty() {
        return Err(Error::InvalidArgument("no clusters".into()));
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= point.len()) {
        return Err(Error::InvalidArgument(format!(
            "assignment {bad} but only {} clusters",
            point.len()
        )));
    }
    Ok(())
}

fn refit(
    data: &TriadDataset,
    triads: &[usize],
    assignments: &[usize],
    point: &[ClusterCoefficients],
    mode: BootstrapMode,
    seed: u64,
) -> Result<Option<Vec<ClusterCoefficients>>> {
    let sample = data.select_triads(triads);
    let scales = match compute_site_scales(&sample) {
        Ok(s) => s,
        Err(Error::DegenerateSite { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let prep = PreparedSites::new(&sample, &scales)?;
    let k = point.len();
    match mode {
        BootstrapMode::FixedAssignments => {
            let mut resp = Array2::zeros((data.n_sites(), k));
            for (j, &a) in assignments.iter().enumerate() {
                resp[[j, a]] = 1.0;
            }
            maximize_coefficients(&prep, &resp, point).map(Some)
        }
        BootstrapMode::FullRefit => {
            let config = EmConfig {
                seed,
                ..EmConfig::new(k)
            };
            let fit = run_em_prepared(&prep, &config)?;
            let cost: Vec<Vec<f64>> = point
                .iter()
                .map(|p| {
                    fit.coefficients
                        .iter()
                        .map(|c| {
                            let (a, b) = (p.to_array(), c.to_array());
                            (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
                        })
                        .collect()
                })
                .collect();
            let matched = hungarian(&cost);
            Ok(Some(matched.iter().map(|&c| fit.coefficients[c]).collect()))
        }
    }
}

/// Bootstrap over the given triad resamples (each a list of column indices,
/// repeats allowed). SE is the sample standard deviation of each coefficient
/// across the resamples that could be fitted.
pub fn bootstrap_se_with_resamples(
    data: &TriadDataset,
    assignments: &[usize],
    point_coefficients: &[ClusterCoefficients],
    resamples: &[Vec<usize>],
    mode: BootstrapMode,
    seed: u64,
) -> Result<BootstrapResult> {
    check_inputs(data, assignments, point_coefficients)?;
    let fits: Vec<Result<Option<Vec<ClusterCoefficients>>>> = resamples
        .par_iter()
        .enumerate()
        .map(|(r, triads)| {
            refit(
                data,
                triads,
                assignments,
                point_coefficients,
                mode,
                seed.wrapping_add(r as u64),
            )
        })
        .collect();
    let mut replicates = Vec::new();
    let mut n_skipped = 0;
    for fit in fits {
        match fit? {
            Some(c) => replicates.push(c),
            None => n_skipped += 1,
        }
    }
    if replicates.len() < 2 {
        return Err(Error::Degenerate(format!(
            "only {} of {} bootstrap resamples could be fitted",
            replicates.len(),
            resamples.len()
        )));
    }
    let coefficient_se = (0..point_coefficients.len())
        .map(|k| {
            let mut se = [0.0; 3];
            for (i, s) in se.iter_mut().enumerate() {
                let v: Vec<f64> = replicates.iter().map(|rep| rep[k].to_array()[i]).collect();
                *s = mean_sd(&v).1;
            }
            se
        })
        .collect();
    Ok(BootstrapResult {
        n_reps: replicates.len(),
        n_skipped,
        coefficient_se,
        replicates,
    })
}

/// Bootstrap standard errors from `n_reps` resamples of the triads drawn
/// with replacement.
pub fn bootstrap_se(
    data: &TriadDataset,
    assignments: &[usize],
    point_coefficients: &[ClusterCoefficients],
    n_reps: usize,
    mode: BootstrapMode,
    seed: u64,
) -> Result<BootstrapResult> {
    if n_reps < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 bootstrap repetitions, got {n_reps}"
        )));
    }
    let n = data.n_triads();
    let resamples: Vec<Vec<usize>> = (0..n_reps as u64)
        .map(|r| {
            let mut rng = task_rng(seed, r);
            (0..n).map(|_| rng.random_range(0..n)).collect()
        })
        .collect();
    bootstrap_se_with_resamples(data, assignments, point_coefficients, &resamples, mode, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::{generate_dataset, ClusterDef, ScenarioSpec};

    fn single_cluster(triads: usize, seed: u64) -> (TriadDataset, ClusterCoefficients) {
        let g = ClusterCoefficients::new(0.3, 0.6, 0.4);
        let spec = ScenarioSpec::custom(vec![ClusterDef::independent(g, 300)], triads, seed);
        (generate_dataset(&spec).unwrap().data, g)
    }

    #[test]
    fn identical_resamples_give_zero_se() {
        let (data, g) = single_cluster(30, 1);
        let all: Vec<usize> = (0..30).collect();
        let r = bootstrap_se_with_resamples(
            &data,
            &vec![0; 300],
            &[g],
            &[all.clone(), all],
            BootstrapMode::FixedAssignments,
            0,
        )
        .unwrap();
        assert_eq!(r.n_reps, 2);
        assert_eq!(r.coefficient_se, vec![[0.0; 3]]);
    }

    #[test]
    fn se_shrinks_like_inverse_root_i() {
        let se_at = |i: usize| {
            let (data, g) = single_cluster(i, 7);
            bootstrap_se(&data, &vec![0; 300], &[g], 40, BootstrapMode::FixedAssignments, 3)
                .unwrap()
                .coefficient_se[0]
        };
        let (s30, s120, s480) = (se_at(30), se_at(120), se_at(480));
        for c in 0..3 {
            // quadrupling I should halve the SE; allow generous MC noise
            let r1 = s30[c] / s120[c];
            let r2 = s120[c] / s480[c];
            assert!((1.4..2.8).contains(&r1), "coef {c}: {r1}");
            assert!((1.4..2.8).contains(&r2), "coef {c}: {r2}");
        }
    }

    #[test]
    fn se_small_relative_to_coefficients() {
        let (data, g) = single_cluster(60, 9);
        let r = bootstrap_se(&data, &vec![0; 300], &[g], 30, BootstrapMode::FixedAssignments, 1).unwrap();
        for (se, coef) in r.coefficient_se[0].iter().zip(g.to_array()) {
            assert!(*se >= 0.0);
            assert!(se / coef.abs() < 0.2, "se {se} coef {coef}");
        }
    }

    #[test]
    fn full_refit_matches_clusters() {
        let a = ClusterCoefficients::new(-2.0, 1.0, 0.0);
        let b = ClusterCoefficients::new(1.5, 0.0, 1.0);
        let spec = ScenarioSpec::custom(
            vec![ClusterDef::independent(a, 100), ClusterDef::independent(b, 100)],
            40,
            5,
        );
        let g = generate_dataset(&spec).unwrap();
        // point estimates listed in reverse order of the data's clusters
        let assignments: Vec<usize> = g.truth.iter().map(|&t| 1 - t).collect();
        let r = bootstrap_se(&g.data, &assignments, &[b, a], 3, BootstrapMode::FullRefit, 2).unwrap();
        for rep in &r.replicates {
            assert!((rep[0].gamma0 - 1.5).abs() < 0.5);
            assert!((rep[1].gamma0 + 2.0).abs() < 0.5);
        }
    }

    #[test]
    fn bad_inputs() {
        let (data, g) = single_cluster(10, 2);
        assert!(bootstrap_se(&data, &vec![0; 300], &[g], 1, BootstrapMode::FixedAssignments, 0).is_err());
        assert!(bootstrap_se(&data, &vec![0; 299], &[g], 5, BootstrapMode::FixedAssignments, 0).is_err());
        assert!(bootstrap_se(&data, &vec![1; 300], &[g], 5, BootstrapMode::FixedAssignments, 0).is_err());
    }

    #[test]
    fn degenerate_resamples_are_skipped() {
        let (data, g) = single_cluster(10, 4);
        let all: Vec<usize> = (0..10).collect();
        let constant = vec![3; 10];
        let r = bootstrap_se_with_resamples(
            &data,
            &vec![0; 300],
            &[g],
            &[all.clone(), constant, all],
            BootstrapMode::FixedAssignments,
            0,
        )
        .unwrap();
        assert_eq!(r.n_skipped, 1);
        assert_eq!(r.n_reps, 2);
    }
}
