//! Beta-distribution primitives and the empirical per-site scale estimator.

use log::warn;
use statrs::function::gamma::ln_gamma;

use crate::data::TriadDataset;
use crate::error::{Error, Result, Role};

/// Variances at or above the Bernoulli bound `m(1-m)` are pulled back to this
/// fraction of it before inverting the moments.
pub const VARIANCE_CLAMP: f64 = 0.99;

/// Variances below this fraction of `m(1-m)` count as zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;

pub fn logit(p: f64) -> Result<f64> {
    if p > 0.0 && p < 1.0 {
        Ok((p / (1.0 - p)).ln())
    } else {
        Err(Error::Domain { value: p })
    }
}

pub fn inverse_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shape parameters `(alpha, beta)` of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaScale {
    alpha: f64,
    beta: f64,
}

impl BetaScale {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() {
            Ok(Self { alpha, beta })
        } else {
            Err(Error::InvalidScale { alpha, beta })
        }
    }

    /// Mean/precision parametrization: shapes `(mean * precision, (1 - mean) * precision)`.
    pub fn from_mean_precision(mean: f64, precision: f64) -> Result<Self> {
        Self::new(mean * precision, (1.0 - mean) * precision)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn precision(&self) -> f64 {
        self.alpha + self.beta
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        m * (1.0 - m) / (self.precision() + 1.0)
    }

    /// `log(alpha) - log(beta)`, i.e. the logit of the mean.
    pub fn logit_mean(&self) -> f64 {
        self.alpha.ln() - self.beta.ln()
    }

    /// `-log B(alpha, beta)`.
    pub fn log_normalizer(&self) -> f64 {
        ln_gamma(self.alpha + self.beta) - ln_gamma(self.alpha) - ln_gamma(self.beta)
    }
}

/// Log-density of `Beta(alpha, beta)` at an interior point.
pub fn beta_log_density(x: f64, scale: &BetaScale) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain { value: x });
    }
    Ok(scale.log_normalizer() + (scale.alpha - 1.0) * x.ln() + (scale.beta - 1.0) * (-x).ln_1p())
}

/// Inverts mean and variance into Beta shapes. A variance at or beyond the
/// Bernoulli bound is clamped to `VARIANCE_CLAMP * m(1-m)`; the flag reports
/// whether that happened.
pub fn scale_from_moments(mean: f64, variance: f64) -> Result<(BetaScale, bool)> {
    if !(mean > 0.0 && mean < 1.0) {
        return Err(Error::Domain { value: mean });
    }
    let bound = mean * (1.0 - mean);
    if !(variance > VARIANCE_FLOOR * bound) || !variance.is_finite() {
        return Err(Error::Degenerate(format!("sample variance {variance:e} is zero")));
    }
    let (v, clamped) = if variance >= bound {
        (VARIANCE_CLAMP * bound, true)
    } else {
        (variance, false)
    };
    let common = bound / v - 1.0;
    Ok((BetaScale::new(mean * common, (1.0 - mean) * common)?, clamped))
}

/// Sample mean and unbiased sample variance.
pub fn sample_moments(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("need at least 2 values, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    Ok((mean, ss / (n - 1) as f64))
}

/// Empirical scale estimate of a sample via method-of-moments inversion.
pub fn estimate_scales_from_moments(values: &[f64]) -> Result<BetaScale> {
    if let Some(&bad) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::Domain { value: bad });
    }
    let (mean, var) = sample_moments(values)?;
    let (scale, clamped) = scale_from_moments(mean, var)?;
    if clamped {
        warn!("sample variance {var:.4e} exceeds m(1-m) at mean {mean:.4}; clamped");
    }
    Ok(scale)
}

/// Per-site empirical scales of the three triad roles and the quantities the
/// transmission model is expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteScales {
    pub child: BetaScale,
    pub mother: BetaScale,
    pub father: BetaScale,
    /// Logit of the child's mean methylation.
    pub logit_mean_child: f64,
    /// Logit of the mother's mean methylation.
    pub logit_mean_mother: f64,
    /// Logit of the father's mean methylation.
    pub logit_mean_father: f64,
    /// `alpha + beta` of the child's scale; held fixed during EM.
    pub child_precision: f64,
}

impl SiteScales {
    pub fn from_scales(child: BetaScale, mother: BetaScale, father: BetaScale) -> Self {
        Self {
            child,
            mother,
            father,
            logit_mean_child: child.logit_mean(),
            logit_mean_mother: mother.logit_mean(),
            logit_mean_father: father.logit_mean(),
            child_precision: child.precision(),
        }
    }

    pub fn scale(&self, role: Role) -> &BetaScale {
        match role {
            Role::Child => &self.child,
            Role::Mother => &self.mother,
            Role::Father => &self.father,
        }
    }
}

/// Estimates the scales of every site, one role at a time, across triads.
pub fn compute_site_scales(data: &TriadDataset) -> Result<Vec<SiteScales>> {
    (0..data.n_sites())
        .map(|j| {
            let est = |role: Role| {
                let row = data.site(role, j);
                let values = row.as_slice().map(<[f64]>::to_vec).unwrap_or_else(|| row.to_vec());
                estimate_scales_from_moments(&values).map_err(|e| Error::DegenerateSite {
                    site: data.site_ids()[j].clone(),
                    role,
                    reason: e.to_string(),
                })
            };
            Ok(SiteScales::from_scales(
                est(Role::Child)?,
                est(Role::Mother)?,
                est(Role::Father)?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Beta, Distribution};

    fn trapezoid(f: impl Fn(f64) -> f64, n: usize) -> f64 {
        // open endpoints are evaluated a hair inside the interval
        let h = 1.0 / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let x = (i as f64 * h).clamp(1e-12, 1.0 - 1e-12);
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            s += w * f(x);
        }
        s * h
    }

    #[test]
    fn logit_examples() {
        assert_eq!(logit(0.5).unwrap(), 0.0);
        assert_eq!(inverse_logit(0.0), 0.5);
        assert!((logit(inverse_logit(-0.7)).unwrap() + 0.7).abs() < 1e-12);
        assert!(logit(0.0).is_err());
        assert!(logit(1.0).is_err());
        assert!(logit(f64::NAN).is_err());
    }

    #[test]
    fn density_examples() {
        let uniform = BetaScale::new(1.0, 1.0).unwrap();
        assert!(beta_log_density(0.3, &uniform).unwrap().abs() < 1e-12);
        let b22 = BetaScale::new(2.0, 2.0).unwrap();
        assert_relative_eq!(beta_log_density(0.5, &b22).unwrap(), 1.5f64.ln(), epsilon = 1e-12);
        assert!(beta_log_density(0.0, &b22).is_err());
        assert!(beta_log_density(1.0, &b22).is_err());
    }

    #[test]
    fn density_matches_quadrature_normalizer() {
        // unnormalized kernel integrated numerically gives B(2, 5)
        let kernel = |x: f64| x * (1.0 - x).powi(4);
        let norm = trapezoid(kernel, 200_000);
        let expected = (kernel(0.2) / norm).ln();
        let got = beta_log_density(0.2, &BetaScale::new(2.0, 5.0).unwrap()).unwrap();
        assert!((got - expected).abs() < 1e-8, "{got} vs {expected}");
    }

    #[test]
    fn moment_examples() {
        let (s, clamped) = scale_from_moments(0.5, 1.0 / 12.0).unwrap();
        assert!(!clamped);
        assert_relative_eq!(s.alpha(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.beta(), 1.0, epsilon = 1e-12);
        let (s, _) = scale_from_moments(0.5, 0.05).unwrap();
        assert_relative_eq!(s.alpha(), 2.0, epsilon = 1e-12);
        assert_relative_eq!(s.beta(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn moments_recover_sampled_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dist = Beta::new(3.0, 7.0).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
        let s = estimate_scales_from_moments(&xs).unwrap();
        assert!((2.7..=3.3).contains(&s.alpha()), "alpha {}", s.alpha());
        assert!((6.3..=7.7).contains(&s.beta()), "beta {}", s.beta());
    }

    #[test]
    fn variance_clamp_keeps_shapes_positive() {
        let (s, clamped) = scale_from_moments(0.3, 0.5).unwrap();
        assert!(clamped);
        assert!(s.alpha() > 0.0 && s.beta() > 0.0);
        assert_relative_eq!(s.variance(), VARIANCE_CLAMP * 0.21, max_relative = 1e-12);
    }

    #[test]
    fn constant_values_are_degenerate() {
        assert!(matches!(
            estimate_scales_from_moments(&[0.4, 0.4, 0.4]),
            Err(Error::Degenerate(_))
        ));
        assert!(estimate_scales_from_moments(&[0.4]).is_err());
    }

    fn dataset_from(child: Vec<Vec<f64>>, mother: Vec<Vec<f64>>, father: Vec<Vec<f64>>) -> TriadDataset {
        let to = |v: Vec<Vec<f64>>| {
            let (r, c) = (v.len(), v[0].len());
            Array2::from_shape_vec((r, c), v.into_iter().flatten().collect()).unwrap()
        };
        TriadDataset::with_default_ids(to(child), to(mother), to(father)).unwrap()
    }

    #[test]
    fn site_scales_shape_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let jitter = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..50)
                .map(|_| 0.5 + 1e-3 * (rand::Rng::random::<f64>(rng) - 0.5))
                .collect()
        };
        let b41: Beta<f64> = Beta::new(4.0, 1.0).unwrap();
        let mother_b41: Vec<f64> = (0..4000).map(|_| b41.sample(&mut rng).min(1.0 - 1e-9)).collect();
        let filler: Vec<f64> = (0..4000).map(|i| 0.2 + 0.6 * (i as f64 / 4000.0)).collect();
        let d = dataset_from(vec![filler.clone()], vec![mother_b41], vec![filler]);
        let s = compute_site_scales(&d).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0].logit_mean_mother - 4f64.ln()).abs() < 0.3);

        let sym = dataset_from(
            vec![jitter(&mut rng), jitter(&mut rng)],
            vec![jitter(&mut rng), jitter(&mut rng)],
            vec![jitter(&mut rng), jitter(&mut rng)],
        );
        let s = compute_site_scales(&sym).unwrap();
        assert_eq!(s.len(), sym.site_ids().len());
        for site in &s {
            assert!(site.logit_mean_mother.abs() < 1e-2);
            assert_relative_eq!(
                site.logit_mean_mother,
                site.mother.alpha().ln() - site.mother.beta().ln(),
                epsilon = 1e-12
            );
            assert_relative_eq!(site.child_precision, site.child.precision());
        }
    }

    #[test]
    fn degenerate_site_is_annotated() {
        let d = dataset_from(
            vec![vec![0.3, 0.4, 0.5]],
            vec![vec![0.2, 0.2, 0.2]],
            vec![vec![0.3, 0.4, 0.5]],
        );
        match compute_site_scales(&d) {
            Err(Error::DegenerateSite { site, role, .. }) => {
                assert_eq!(site, "site0");
                assert_eq!(role, Role::Mother);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn moment_inversion_round_trip(mean in 0.01f64..0.99, precision in 0.5f64..500.0) {
            let s = BetaScale::from_mean_precision(mean, precision).unwrap();
            let (back, clamped) = scale_from_moments(s.mean(), s.variance()).unwrap();
            prop_assert!(!clamped);
            prop_assert!(((back.alpha() - s.alpha()) / s.alpha()).abs() < 1e-9);
            prop_assert!(((back.beta() - s.beta()) / s.beta()).abs() < 1e-9);
        }

        #[test]
        fn logit_round_trip(p in 1e-9f64..(1.0 - 1e-9)) {
            prop_assert!((inverse_logit(logit(p).unwrap()) - p).abs() < 1e-9);
        }

        #[test]
        fn density_integrates_to_one(mean in 0.05f64..0.95, precision in 2.5f64..100.0) {
            // shapes >= 1 keep the trapezoid rule accurate at the endpoints
            let s = BetaScale::from_mean_precision(mean, precision).unwrap();
            prop_assume!(s.alpha() >= 1.0 && s.beta() >= 1.0);
            let total = trapezoid(|x| beta_log_density(x, &s).unwrap().exp(), 100_000);
            prop_assert!((total - 1.0).abs() < 1e-4, "integral {}", total);
        }
    }
}
