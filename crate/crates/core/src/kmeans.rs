//! Weighted Lloyd K-means with k-means++ seeding.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Array2<f64>,
    pub labels: Vec<usize>,
    /// Weighted within-cluster sum of squares.
    pub inertia: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub n_starts: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            n_starts: 10,
            max_iter: 300,
        }
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centers.rows().into_iter().enumerate() {
        let d = sq_dist(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus<R: Rng>(x: ArrayView2<f64>, w: &[f64], k: usize, rng: &mut R) -> Array2<f64> {
    let n = x.nrows();
    let mut centers = Array2::zeros((k, x.ncols()));
    let total: f64 = w.iter().sum();
    let pick = |weights: &[f64], sum: f64, rng: &mut R| -> usize {
        if sum <= 0.0 {
            return rng.random_range(0..n);
        }
        let mut u = rng.random::<f64>() * sum;
        for (i, &wi) in weights.iter().enumerate() {
            u -= wi;
            if u <= 0.0 && wi > 0.0 {
                return i;
            }
        }
        weights.iter().rposition(|&wi| wi > 0.0).unwrap_or(n - 1)
    };
    let first = pick(w, total, rng);
    centers.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let scores: Vec<f64> = d2.iter().zip(w).map(|(d, wi)| d * wi).collect();
        let sum: f64 = scores.iter().sum();
        let next = pick(&scores, sum, rng);
        centers.row_mut(c).assign(&x.row(next));
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(x.row(i), x.row(next)));
        }
    }
    centers
}

fn lloyd(x: ArrayView2<f64>, w: &[f64], mut centers: Array2<f64>, max_iter: usize) -> KMeansResult {
    let n = x.nrows();
    let k = centers.nrows();
    let mut labels = vec![usize::MAX; n];
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let mut changed = false;
        for i in 0..n {
            let (c, _) = nearest(x.row(i), &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centers.raw_dim());
        let mut mass = vec![0.0; k];
        for i in 0..n {
            let mut row = sums.row_mut(labels[i]);
            row.scaled_add(w[i], &x.row(i));
            mass[labels[i]] += w[i];
        }
        for c in 0..k {
            // an emptied center stays where it was
            if mass[c] > 0.0 {
                let mean = &sums.row(c) / mass[c];
                centers.row_mut(c).assign(&mean);
            }
        }
    }
    let inertia = (0..n).map(|i| w[i] * sq_dist(x.row(i), centers.row(labels[i]))).sum();
    KMeansResult {
        centers,
        labels,
        inertia,
        iterations,
    }
}

/// Clusters the rows of `x` into `k` groups, keeping the best of
/// `opts.n_starts` seeded runs. `weights` defaults to all ones.
pub fn kmeans<R: Rng>(
    x: ArrayView2<f64>,
    weights: Option<&[f64]>,
    k: usize,
    opts: &KMeansOptions,
    rng: &mut R,
) -> Result<KMeansResult> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot form {k} groups from {n} points"
        )));
    }
    let ones;
    let w = match weights {
        Some(w) if w.len() != n => {
            return Err(Error::Shape(format!("{} weights for {n} points", w.len())));
        }
        Some(w) => {
            if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
            }
            w
        }
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite point".into()));
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..opts.n_starts.max(1) {
        let centers = seed_plus_plus(x, w, k, rng);
        let fit = lloyd(x, w, centers, opts.max_iter);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one start"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separates_two_blobs() {
        let x = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = kmeans(x.view(), None, 2, &KMeansOptions::default(), &mut rng).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[0], r.labels[2]);
        assert_eq!(r.labels[3], r.labels[5]);
        assert_ne!(r.labels[0], r.labels[3]);
        // centers are the blob means
        let c = r.centers.row(r.labels[0]);
        assert!((c[0] - 0.1 / 3.0).abs() < 1e-12);
        let mut expected = 0.0;
        for i in 0..6 {
            expected += sq_dist(x.row(i), r.centers.row(r.labels[i]));
        }
        assert!((r.inertia - expected).abs() < 1e-12);
    }

    #[test]
    fn weights_pull_the_center() {
        let x = array![[0.0], [1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = kmeans(x.view(), Some(&[3.0, 1.0]), 1, &KMeansOptions::default(), &mut rng).unwrap();
        assert!((r.centers[[0, 0]] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn k_equal_to_n_has_zero_inertia() {
        let x = array![[0.0], [1.0], [4.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = kmeans(x.view(), None, 3, &KMeansOptions::default(), &mut rng).unwrap();
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let x = array![[0.0], [1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = KMeansOptions::default();
        assert!(kmeans(x.view(), None, 3, &o, &mut rng).is_err());
        assert!(kmeans(x.view(), None, 0, &o, &mut rng).is_err());
        assert!(kmeans(x.view(), Some(&[1.0]), 1, &o, &mut rng).is_err());
        assert!(kmeans(x.view(), Some(&[1.0, -1.0]), 1, &o, &mut rng).is_err());
    }
}
