//! Sensitivity and specificity of an inferred clustering against the truth.

use crate::error::{Error, Result};

/// Minimum-cost assignment on a square cost matrix (Hungarian method with
/// potentials). Returns `assign[row] = column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; p[j] is the row matched to column j
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Per-true-cluster recovery after optimal label matching.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Inferred label matched to each true cluster, `None` if the true
    /// cluster was left unmatched (more true than inferred clusters).
    pub matching: Vec<Option<usize>>,
    pub sensitivity: Vec<f64>,
    pub specificity: Vec<f64>,
    /// Number of distinct inferred labels.
    pub selected_k: usize,
    /// Sites whose matched labels agree, over all sites.
    pub accuracy: f64,
}

/// Matches inferred labels to true labels maximizing total overlap, then
/// scores each of the `n_true_clusters` true clusters one-vs-rest.
///
/// Sensitivity of cluster `t` is the fraction of its sites carrying the
/// matched label. Specificity is `TN / (TN + FP)` over the sites outside
/// `t`, where a false positive is a site outside `t` either carrying the
/// matched label or sitting in an inferred cluster that no true cluster
/// claimed. A true cluster left without a partner has sensitivity 0.
pub fn evaluate_clustering(inferred: &[usize], truth: &[usize], n_true_clusters: usize) -> Result<MetricsReport> {
    if truth.len() != inferred.len() {
        return Err(Error::Shape(format!(
            "{} true labels but {} inferred",
            truth.len(),
            inferred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no sites to evaluate".into()));
    }
    let kt = n_true_clusters.max(truth.iter().max().unwrap() + 1);
    let ki = inferred.iter().max().unwrap() + 1;
    let n = kt.max(ki);
    let mut overlap = vec![vec![0usize; n]; n];
    for (&t, &c) in truth.iter().zip(inferred) {
        overlap[t][c] += 1;
    }
    // Ties between equally good matchings are broken by an order of the
    // inferred labels that depends only on their overlap with the truth, so
    // renaming inferred labels never changes the scores.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let col = |c: usize| overlap.iter().map(move |row| row[c]);
        col(b).cmp(col(a))
    });
    let cost: Vec<Vec<f64>> = overlap
        .iter()
        .map(|row| order.iter().map(|&c| -(row[c] as f64)).collect())
        .collect();
    let assign: Vec<usize> = hungarian(&cost).into_iter().map(|pos| order[pos]).collect();

    let true_sizes: Vec<usize> = overlap.iter().map(|r| r.iter().sum()).collect();
    let mut inferred_sizes = vec![0usize; n];
    for &c in inferred {
        inferred_sizes[c] += 1;
    }
    // inferred clusters holding sites but matched to no real true cluster
    let mut claimed = vec![false; n];
    for &c in &assign[..kt] {
        claimed[c] = true;
    }
    let unclaimed: Vec<usize> = (0..ki).filter(|&c| !claimed[c] && inferred_sizes[c] > 0).collect();
    let total = truth.len();

    let mut matching = Vec::with_capacity(kt);
    let mut sensitivity = Vec::with_capacity(kt);
    let mut specificity = Vec::with_capacity(kt);
    let mut correct = 0;
    for t in 0..kt {
        let c = assign[t];
        let matched = c < ki && inferred_sizes[c] > 0;
        let tp = if matched { overlap[t][c] } else { 0 };
        let mut fp = if matched { inferred_sizes[c] - tp } else { 0 };
        fp += unclaimed
            .iter()
            .map(|&u| inferred_sizes[u] - overlap[t][u])
            .sum::<usize>();
        let negatives = total - true_sizes[t];
        correct += tp;
        matching.push(matched.then_some(c));
        sensitivity.push(if true_sizes[t] == 0 {
            f64::NAN
        } else {
            tp as f64 / true_sizes[t] as f64
        });
        specificity.push(if negatives == 0 {
            1.0
        } else {
            1.0 - fp as f64 / negatives as f64
        });
    }
    Ok(MetricsReport {
        matching,
        sensitivity,
        specificity,
        selected_k: inferred_sizes.iter().filter(|&&s| s > 0).count(),
        accuracy: correct as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        permutations(cost.len())
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn hungarian_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for n in 1..=6 {
            for _ in 0..20 {
                let cost: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..n).map(|_| rng.random_range(0..20) as f64).collect())
                    .collect();
                let a = hungarian(&cost);
                let mut seen = a.clone();
                seen.sort();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                let got: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
                assert_eq!(got, brute_force(&cost));
            }
        }
    }

    #[test]
    fn permuted_perfect_labels() {
        let truth = vec![0, 0, 1, 1, 2, 2];
        let inferred = vec![2, 2, 0, 0, 1, 1];
        let r = evaluate_clustering(&inferred, &truth, 3).unwrap();
        assert_eq!(r.matching, vec![Some(2), Some(0), Some(1)]);
        assert_eq!(r.sensitivity, vec![1.0; 3]);
        assert_eq!(r.specificity, vec![1.0; 3]);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.selected_k, 3);
        let same = evaluate_clustering(&truth, &truth, 3).unwrap();
        assert_eq!(same.sensitivity, vec![1.0; 3]);
    }

    #[test]
    fn ten_site_confusion_table() {
        // true A = sites 0..4, B = 4..7, C = 7..10
        let truth = vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2];
        // inferred label 5 holds 3 A + 1 C; label 3 holds 1 A + 2 B;
        // label 1 holds 1 B + 2 C
        let inferred = vec![5, 5, 5, 3, 3, 3, 1, 5, 1, 1];
        let r = evaluate_clustering(&inferred, &truth, 3).unwrap();
        assert_eq!(r.matching, vec![Some(5), Some(3), Some(1)]);
        // A: TP 3, FN 1, FP 1 (site 7), TN 5
        // B: TP 2, FN 1, FP 1 (site 3), TN 6
        // C: TP 2, FN 1, FP 1 (site 6), TN 6
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&r.sensitivity, &[3.0 / 4.0, 2.0 / 3.0, 2.0 / 3.0]));
        assert!(close(&r.specificity, &[5.0 / 6.0, 6.0 / 7.0, 6.0 / 7.0]));
        assert!((r.accuracy - 0.7).abs() < 1e-12);
    }

    #[test]
    fn hand_counted_errors() {
        let truth = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let inferred = vec![0, 0, 0, 1, 1, 1, 1, 1];
        let r = evaluate_clustering(&inferred, &truth, 2).unwrap();
        assert_eq!(r.sensitivity, vec![0.75, 1.0]);
        assert_eq!(r.specificity, vec![1.0, 0.75]);
        assert_eq!(r.accuracy, 7.0 / 8.0);
    }

    #[test]
    fn extra_inferred_cluster_costs_specificity() {
        // inferred splits true 0 in two; the smaller half is unmatched and
        // counts against true 1's specificity
        let truth = vec![0, 0, 0, 0, 1, 1];
        let inferred = vec![0, 0, 0, 2, 1, 1];
        let r = evaluate_clustering(&inferred, &truth, 2).unwrap();
        assert_eq!(r.sensitivity, vec![0.75, 1.0]);
        assert_eq!(r.specificity, vec![1.0, 0.75]);
        assert_eq!(r.selected_k, 3);
    }

    #[test]
    fn merged_clusters_leave_one_unmatched() {
        let truth = vec![0, 0, 1, 1, 2, 2];
        let inferred = vec![0, 0, 0, 0, 1, 1];
        let r = evaluate_clustering(&inferred, &truth, 3).unwrap();
        assert_eq!(r.matching.iter().filter(|m| m.is_none()).count(), 1);
        assert_eq!(r.sensitivity.iter().filter(|&&s| s == 0.0).count(), 1);
        assert_eq!(r.sensitivity[2], 1.0);
        // a true cluster with no sites in the data still gets a row
        let r = evaluate_clustering(&[0, 0], &[0, 0], 2).unwrap();
        assert_eq!(r.sensitivity.len(), 2);
        assert!(r.sensitivity[1].is_nan());
    }

    #[test]
    fn single_inferred_cluster() {
        let truth = vec![0, 0, 1, 1];
        let r = evaluate_clustering(&[0, 0, 0, 0], &truth, 2).unwrap();
        assert_eq!(r.sensitivity, vec![1.0, 0.0]);
        assert_eq!(r.specificity, vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_mismatched_lengths() {
        assert!(evaluate_clustering(&[0], &[0, 1], 2).is_err());
        assert!(evaluate_clustering(&[], &[], 1).is_err());
    }

    proptest! {
        #[test]
        fn invariant_to_label_permutation(
            labels in proptest::collection::vec((0usize..4, 0usize..5), 1..60),
            perm in Just((0usize..5).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let truth: Vec<usize> = labels.iter().map(|l| l.0).collect();
            let inferred: Vec<usize> = labels.iter().map(|l| l.1).collect();
            let relabeled: Vec<usize> = inferred.iter().map(|&c| perm[c]).collect();
            let a = evaluate_clustering(&inferred, &truth, 4).unwrap();
            let b = evaluate_clustering(&relabeled, &truth, 4).unwrap();
            for t in 0..4 {
                let same = |x: f64, y: f64| (x.is_nan() && y.is_nan()) || (x - y).abs() < 1e-12;
                prop_assert!(same(a.sensitivity[t], b.sensitivity[t]));
                prop_assert!(same(a.specificity[t], b.specificity[t]));
            }
        }
    }
}
