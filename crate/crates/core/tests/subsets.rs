use std::collections::BTreeSet;

use transmix::em::PreparedSites;
use transmix::sim::{builtin_scenario, generate_dataset, ClusterDef, ScenarioName, ScenarioSpec};
use transmix::{
    cluster_by_subsets, compute_site_scales, plan_subsets, plan_subsets_with_count, sweep_k, ClusterCoefficients,
    EmConfig, SubsetPlan,
};

fn small_data(seed: u64) -> transmix::TriadDataset {
    let spec = ScenarioSpec::custom(
        vec![
            ClusterDef::independent(ClusterCoefficients::new(-2.0, 0.0, 1.3), 80),
            ClusterDef::independent(ClusterCoefficients::new(-0.7, 1.9, 0.0), 80),
            ClusterDef::independent(ClusterCoefficients::new(1.4, -1.5, -0.6), 80),
        ],
        40,
        seed,
    );
    generate_dataset(&spec).unwrap().data
}

fn config() -> EmConfig {
    EmConfig {
        n_restarts: 2,
        seed: 5,
        ..EmConfig::default()
    }
}

#[test]
fn single_full_subset_matches_direct_fit() {
    let data = small_data(1);
    let scales = compute_site_scales(&data).unwrap();
    let plan = plan_subsets(data.n_sites(), data.n_sites(), 1.0, 3).unwrap();
    assert_eq!(plan.n_subsets, 1);
    let two = cluster_by_subsets(&data, &scales, &plan, &config(), 1..=4).unwrap();
    let direct = sweep_k(&data, &scales, 1..=4, &config()).unwrap();
    assert_eq!(two.final_assignments, direct.selected_fit().hard_assignments());
    assert_eq!(two.conflicts_resolved, 0);
    assert!(two.post_hoc.is_empty());
    assert_eq!(two.final_coefficients, direct.selected_fit().coefficients);
}

#[test]
fn conflicts_go_to_the_most_likely_candidate() {
    let data = small_data(2);
    let scales = compute_site_scales(&data).unwrap();
    let plan = plan_subsets_with_count(data.n_sites(), 120, 4, 8).unwrap();
    let r = cluster_by_subsets(&data, &scales, &plan, &config(), 1..=4).unwrap();
    let prep = PreparedSites::new(&data, &scales).unwrap();

    let mut group_of = std::collections::HashMap::new();
    for s in &r.stage1 {
        group_of.insert((s.subset, s.cluster), s.group);
    }
    let mut candidates = vec![BTreeSet::new(); data.n_sites()];
    for (i, (sites, labels)) in r.subsets.iter().zip(&r.subset_labels).enumerate() {
        for (&j, &l) in sites.iter().zip(labels) {
            candidates[j].insert(group_of[&(i, l)]);
        }
    }
    let mut conflicts = 0;
    for (j, c) in candidates.iter().enumerate() {
        let chosen = r.final_assignments[j];
        if c.is_empty() {
            assert!(r.post_hoc.contains(&j));
            continue;
        }
        assert!(c.contains(&chosen));
        if c.len() > 1 {
            conflicts += 1;
            let best = c
                .iter()
                .map(|&g| prep.site_loglik(j, &r.final_coefficients[g]))
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(prep.site_loglik(j, &r.final_coefficients[chosen]), best);
        }
    }
    assert_eq!(conflicts, r.conflicts_resolved);
    assert_eq!(r.post_hoc, plan.uncovered());
    assert!(r.final_assignments.iter().all(|&g| g < r.final_coefficients.len()));

    let again = cluster_by_subsets(&data, &scales, &plan, &config(), 1..=4).unwrap();
    assert_eq!(again.final_assignments, r.final_assignments);
}

#[test]
fn s0_halves_recover_paternal_cluster() {
    let spec = builtin_scenario(ScenarioName::S0, 21).unwrap();
    let g = generate_dataset(&spec).unwrap();
    let scales = compute_site_scales(&g.data).unwrap();
    let plan = SubsetPlan::from_subsets(
        2000,
        vec![(0..2000).step_by(2).collect(), (1..2000).step_by(2).collect()],
        0,
    )
    .unwrap();
    let r = cluster_by_subsets(&g.data, &scales, &plan, &EmConfig::default(), 2..=6).unwrap();
    let target = ClusterCoefficients::new(-4.2, 0.0, 1.3);
    let dist = |c: &ClusterCoefficients| {
        let (a, b) = (c.to_array(), target.to_array());
        (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>()
    };
    let paternal = (0..r.final_coefficients.len())
        .min_by(|&a, &b| dist(&r.final_coefficients[a]).total_cmp(&dist(&r.final_coefficients[b])))
        .unwrap();
    let hits = (0..2000)
        .filter(|&j| g.truth[j] == 0 && r.final_assignments[j] == paternal)
        .count();
    let frac = hits as f64 / 500.0;

    // Bayes classifier with the generating coefficients: no clustering
    // method can be expected to beat it on this draw.
    let prep = PreparedSites::new(&g.data, &scales).unwrap();
    let prior: Vec<f64> = spec.clusters.iter().map(|c| (c.n_sites as f64).ln()).collect();
    let oracle_hits = (0..2000)
        .filter(|&j| g.truth[j] == 0)
        .filter(|&j| {
            let score = |k: usize| prep.child_loglik(j, &spec.clusters[k].coefficients) + prior[k];
            (0..4).max_by(|&a, &b| score(a).total_cmp(&score(b))) == Some(0)
        })
        .count();
    assert!(
        frac >= 0.95,
        "paternal recovery {frac} (true-coefficient classifier {}), groups {:?}",
        oracle_hits as f64 / 500.0,
        r.final_coefficients
    );
}
