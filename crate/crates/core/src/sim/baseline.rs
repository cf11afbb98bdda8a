//! K-means on per-site mean triples, the comparison method for EM.

use ndarray::Array2;

use crate::data::TriadDataset;
use crate::error::Result;
use crate::kmeans::{kmeans, KMeansOptions, KMeansResult};
use crate::rng::task_rng;
use crate::Role;

/// Per-site `(father, mother, child)` sample means, one row per site.
pub fn mean_triples(data: &TriadDataset) -> Array2<f64> {
    let mut x = Array2::zeros((data.n_sites(), 3));
    for (col, role) in [Role::Father, Role::Mother, Role::Child].into_iter().enumerate() {
        let v = data.values(role);
        for j in 0..data.n_sites() {
            x[[j, col]] = v.row(j).mean().unwrap_or(f64::NAN);
        }
    }
    x
}

/// Clusters sites into `k` groups by their mean triples.
pub fn kmeans_baseline(data: &TriadDataset, k: usize, seed: u64) -> Result<KMeansResult> {
    let x = mean_triples(data);
    let mut rng = task_rng(seed, 0);
    kmeans(x.view(), None, k, &KMeansOptions::default(), &mut rng)
}
