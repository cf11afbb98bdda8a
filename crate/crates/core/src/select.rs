//! BIC and the choice of the number of clusters.

use std::fmt;
use std::ops::RangeInclusive;

use log::warn;
use rayon::prelude::*;

use crate::em::{run_em_prepared, EmConfig, MixtureState, PreparedSites};
use crate::error::{Error, Result};
use crate::{SiteScales, TriadDataset};

/// `-2 l + (6J + 4K - 1) log(3 I J)`.
///
/// The parameter count covers two Beta shapes for each of the three roles at
/// every site, three coefficients per cluster and `K - 1` free mixing
/// proportions; `3 I J` is the number of observations.
pub fn bic_value(loglik: f64, n_sites: usize, n_clusters: usize, n_triads: usize) -> f64 {
    let params = (6 * n_sites + 4 * n_clusters) as f64 - 1.0;
    let n_obs = 3.0 * n_triads as f64 * n_sites as f64;
    -2.0 * loglik + params * n_obs.ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BicRecord {
    pub n_clusters: usize,
    /// `None` when EM failed for this `K`.
    pub loglik: Option<f64>,
    pub bic: Option<f64>,
    pub n_null_clusters: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    MinBic,
    Plateau,
}

impl fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionRule::MinBic => "min-bic",
            SelectionRule::Plateau => "plateau",
        })
    }
}

/// Screen-plot rule. The curve has flattened at the smallest `K` whose drop
/// to `K + 1` is below `drop_fraction` of the largest drop in the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauRule {
    pub drop_fraction: f64,
}

impl Default for PlateauRule {
    fn default() -> Self {
        Self { drop_fraction: 0.05 }
    }
}

impl PlateauRule {
    /// Picks `K` from the records, which must be in increasing `K` order.
    ///
    /// The answer is the smaller of the plateau point and the BIC minimizer,
    /// where a `K` with a null cluster cannot win on minimum BIC. Failed
    /// records are ignored.
    pub fn select(&self, records: &[BicRecord]) -> Option<(usize, SelectionRule)> {
        let valid: Vec<(usize, f64, usize)> = records
            .iter()
            .filter_map(|r| r.bic.map(|b| (r.n_clusters, b, r.n_null_clusters)))
            .collect();
        if valid.is_empty() {
            return None;
        }

        let min_bic = |rows: &mut dyn Iterator<Item = &(usize, f64, usize)>| {
            rows.fold(None::<(usize, f64)>, |best, &(k, b, _)| match best {
                Some((_, bb)) if bb <= b => best,
                _ => Some((k, b)),
            })
            .map(|(k, _)| k)
        };
        let argmin = min_bic(&mut valid.iter().filter(|r| r.2 == 0)).or_else(|| min_bic(&mut valid.iter()))?;

        let drops: Vec<f64> = valid.windows(2).map(|w| w[0].1 - w[1].1).collect();
        let max_drop = drops.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let plateau = if max_drop > 0.0 {
            drops
                .iter()
                .position(|&d| d < self.drop_fraction * max_drop)
                .map(|i| valid[i].0)
        } else {
            None
        };

        match plateau {
            Some(p) if p < argmin => Some((p, SelectionRule::Plateau)),
            _ => Some((argmin, SelectionRule::MinBic)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KSweepResult {
    pub records: Vec<BicRecord>,
    pub selected_k: usize,
    pub selection_rule: SelectionRule,
    /// EM fit for each record, `None` where EM failed.
    pub fits: Vec<Option<MixtureState>>,
}

impl KSweepResult {
    pub fn fit_for(&self, k: usize) -> Option<&MixtureState> {
        self.records
            .iter()
            .position(|r| r.n_clusters == k)
            .and_then(|i| self.fits[i].as_ref())
    }

    pub fn selected_fit(&self) -> &MixtureState {
        self.fit_for(self.selected_k)
            .expect("selected K always has a successful fit")
    }

    /// `(k, bic)` pairs of the successful fits.
    pub fn curve(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.bic.map(|b| (r.n_clusters, b)))
            .collect()
    }
}

/// Fits every `K` in the range and applies the default [`PlateauRule`].
pub fn sweep_k(
    data: &TriadDataset,
    scales: &[SiteScales],
    k_range: RangeInclusive<usize>,
    config: &EmConfig,
) -> Result<KSweepResult> {
    let prep = PreparedSites::new(data, scales)?;
    sweep_k_prepared(&prep, data.n_triads(), k_range, config, &PlateauRule::default())
}

pub fn sweep_k_prepared(
    prep: &PreparedSites,
    n_triads: usize,
    k_range: RangeInclusive<usize>,
    config: &EmConfig,
    rule: &PlateauRule,
) -> Result<KSweepResult> {
    if k_range.is_empty() || *k_range.start() == 0 {
        return Err(Error::InvalidArgument(format!(
            "k range {}..={} must be nonempty and start at 1 or more",
            k_range.start(),
            k_range.end()
        )));
    }
    let n_sites = prep.n_sites();
    let ks: Vec<usize> = k_range.collect();
    let fits: Vec<Result<MixtureState>> = ks
        .par_iter()
        .map(|&k| run_em_prepared(prep, &config.with_clusters(k)))
        .collect();

    let mut records = Vec::with_capacity(ks.len());
    let mut states = Vec::with_capacity(ks.len());
    for (&k, fit) in ks.iter().zip(fits) {
        match fit {
            Ok(state) => {
                let l = state.loglik();
                records.push(BicRecord {
                    n_clusters: k,
                    loglik: Some(l),
                    bic: Some(bic_value(l, n_sites, k, n_triads)),
                    n_null_clusters: state.n_null_clusters(),
                    error: None,
                });
                states.push(Some(state));
            }
            Err(e) => {
                warn!("EM failed at K={k}: {e}");
                records.push(BicRecord {
                    n_clusters: k,
                    loglik: None,
                    bic: None,
                    n_null_clusters: 0,
                    error: Some(e.to_string()),
                });
                states.push(None);
            }
        }
    }
    let (selected_k, selection_rule) = rule.select(&records).ok_or_else(|| Error::AllRestartsFailed {
        restarts: config.n_restarts,
        last: "every K in the sweep failed".into(),
    })?;
    Ok(KSweepResult {
        records,
        selected_k,
        selection_rule,
        fits: states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(k: usize, bic: Option<f64>, nulls: usize) -> BicRecord {
        BicRecord {
            n_clusters: k,
            loglik: bic.map(|b| -b / 2.0),
            bic,
            n_null_clusters: nulls,
            error: None,
        }
    }

    #[test]
    fn bic_examples() {
        assert!((bic_value(0.0, 1, 1, 1) - 9.0 * 3f64.ln()).abs() < 1e-12);
        assert!((bic_value(0.0, 1, 1, 1) - 9.887_510_598_012_987).abs() < 1e-9);
        assert!((bic_value(0.0, 1, 2, 1) - 13.0 * 3f64.ln()).abs() < 1e-12);
        let expected = 200.0 + 12015.0 * 360_000f64.ln();
        assert!((bic_value(-100.0, 2000, 4, 60) - expected).abs() < 1e-9);
    }

    #[test]
    fn plateau_after_sharp_drop() {
        // big drops to K=4, then flat with a shallow minimum at 6
        let r = vec![
            rec(2, Some(1000.0), 0),
            rec(3, Some(600.0), 0),
            rec(4, Some(300.0), 0),
            rec(5, Some(295.0), 0),
            rec(6, Some(290.0), 0),
            rec(7, Some(310.0), 0),
        ];
        assert_eq!(PlateauRule::default().select(&r), Some((4, SelectionRule::Plateau)));
    }

    #[test]
    fn null_cluster_blocks_min_bic() {
        // minimum at 7 has a null cluster; drop from 6 to 7 is slight
        let r = vec![
            rec(4, Some(1000.0), 0),
            rec(5, Some(700.0), 0),
            rec(6, Some(500.0), 0),
            rec(7, Some(490.0), 1),
            rec(8, Some(495.0), 0),
        ];
        assert_eq!(PlateauRule::default().select(&r), Some((6, SelectionRule::Plateau)));
        // still falling at the end of the range: only the min-BIC route applies
        let r = vec![
            rec(2, Some(1000.0), 0),
            rec(3, Some(500.0), 0),
            rec(4, Some(200.0), 0),
            rec(5, Some(100.0), 1),
        ];
        assert_eq!(PlateauRule::default().select(&r), Some((4, SelectionRule::MinBic)));
    }

    #[test]
    fn increasing_curve_selects_first() {
        let r = vec![rec(1, Some(10.0), 0), rec(2, Some(20.0), 0), rec(3, Some(25.0), 0)];
        assert_eq!(PlateauRule::default().select(&r), Some((1, SelectionRule::MinBic)));
    }

    #[test]
    fn single_record_and_failures() {
        assert_eq!(PlateauRule::default().select(&[rec(3, Some(5.0), 0)]).unwrap().0, 3);
        let r = vec![rec(2, Some(100.0), 0), rec(3, None, 0), rec(4, Some(50.0), 0)];
        let (k, _) = PlateauRule::default().select(&r).unwrap();
        assert_ne!(k, 3);
        assert!(PlateauRule::default().select(&[rec(2, None, 0)]).is_none());
    }

    proptest! {
        #[test]
        fn bic_increases_with_k(l in -1e6f64..0.0, j in 1usize..5000, k in 1usize..20, i in 1usize..200) {
            prop_assert!(bic_value(l, j, k + 1, i) > bic_value(l, j, k, i));
        }

        #[test]
        fn selection_is_deterministic_and_valid(bics in proptest::collection::vec(proptest::option::of(0.0f64..1e4), 1..8)) {
            let r: Vec<BicRecord> = bics.iter().enumerate().map(|(i, b)| rec(i + 1, *b, 0)).collect();
            let a = PlateauRule::default().select(&r);
            prop_assert_eq!(a, PlateauRule::default().select(&r));
            if let Some((k, _)) = a {
                prop_assert!(r.iter().any(|x| x.n_clusters == k && x.bic.is_some()));
            }
        }
    }
}
