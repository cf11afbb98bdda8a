//! Empirical EM for the Beta-regression transmission mixture.
//!
//! Per-site Beta scales are fixed at their empirical estimates
//! ([`crate::beta::compute_site_scales`]). EM iterates over the mixing
//! proportions and the per-cluster transmission coefficients only. Under
//! cluster `k` the child at site `j` follows a Beta law with mean
//! `inverse_logit(g0 + g1 * M_j + g2 * F_j)` and the site's empirical child
//! precision `phi_j`.
//!
//! The child log-likelihood of a site depends on its data only through
//! `sum ln y` and `sum ln(1 - y)`, so those sums are computed once per site
//! and every E-step and M-step evaluation is O(1) per (site, cluster).

use log::warn;
use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::beta::{beta_log_density, inverse_logit, BetaScale, SiteScales};
use crate::data::TriadDataset;
use crate::error::{Error, Result, Role};
use crate::optim::{self, BfgsOptions, BfgsStatus};
use crate::rng::task_rng;

/// Child means are kept inside `(MEAN_EPS, 1 - MEAN_EPS)`.
pub const MEAN_EPS: f64 = 1e-12;

/// A cluster whose total responsibility falls below this is frozen.
pub const NULL_CLUSTER_MASS: f64 = 1e-8;

// Sites with smaller responsibility are left out of the inner optimizer;
// the ascent check at the end of the M-step still uses every site.
const M_STEP_WEIGHT_FLOOR: f64 = 1e-12;

/// Transmission coefficients of one cluster: intercept, maternal and
/// paternal strength on the logit scale.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClusterCoefficients {
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl ClusterCoefficients {
    pub const fn new(gamma0: f64, gamma1: f64, gamma2: f64) -> Self {
        Self { gamma0, gamma1, gamma2 }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.gamma0, self.gamma1, self.gamma2]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn linear_predictor(&self, logit_mother: f64, logit_father: f64) -> f64 {
        self.gamma0 + self.gamma1 * logit_mother + self.gamma2 * logit_father
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub n_clusters: usize,
    /// Stop once the observed log-likelihood rises by less than this.
    pub tol: f64,
    pub max_iter: usize,
    pub n_restarts: usize,
    pub seed: u64,
}

impl EmConfig {
    pub fn new(n_clusters: usize) -> Self {
        Self {
            n_clusters,
            ..Self::default()
        }
    }

    pub fn with_clusters(&self, n_clusters: usize) -> Self {
        Self {
            n_clusters,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.n_clusters == 0 {
            return Err(Error::InvalidArgument("n_clusters must be >= 1".into()));
        }
        if self.n_restarts == 0 {
            return Err(Error::InvalidArgument("n_restarts must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            n_clusters: 1,
            tol: 1e-7,
            max_iter: 500,
            n_restarts: 5,
            seed: 0,
        }
    }
}

/// Parameters, responsibilities and log-likelihood history of one EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    pub coefficients: Vec<ClusterCoefficients>,
    pub mixing: Vec<f64>,
    /// `J x K`; row `j` is the posterior cluster membership of site `j`.
    pub responsibilities: Array2<f64>,
    /// Observed-data log-likelihood after each E-step, including parental terms.
    pub loglik_trace: Vec<f64>,
    /// Completed M-steps.
    pub iteration: usize,
    pub converged: bool,
}

impl MixtureState {
    pub fn n_clusters(&self) -> usize {
        self.coefficients.len()
    }

    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().unwrap_or(&f64::NEG_INFINITY)
    }

    pub fn hard_assignments(&self) -> Vec<usize> {
        hard_assignments(self)
    }

    /// Number of sites whose argmax responsibility is each cluster.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters()];
        for k in self.hard_assignments() {
            sizes[k] += 1;
        }
        sizes
    }

    /// Clusters with mixing proportion below `1 / J`.
    pub fn n_null_clusters(&self) -> usize {
        let j = self.responsibilities.nrows().max(1) as f64;
        self.mixing.iter().filter(|&&p| p < 1.0 / j).count()
    }
}

/// Model-implied child mean at a site under the given coefficients.
pub fn child_cluster_mean(coeff: &ClusterCoefficients, site: &SiteScales) -> f64 {
    clamp_mean(inverse_logit(
        coeff.linear_predictor(site.logit_mean_mother, site.logit_mean_father),
    ))
}

fn clamp_mean(mu: f64) -> f64 {
    mu.clamp(MEAN_EPS, 1.0 - MEAN_EPS)
}

/// Log-likelihood of all triads at one site under one cluster, summed
/// directly over the data: child under the cluster's mean with the site's
/// empirical precision, plus the parents under their empirical scales.
pub fn site_cluster_loglik(
    site_index: usize,
    coeff: &ClusterCoefficients,
    data: &TriadDataset,
    scales: &[SiteScales],
) -> Result<f64> {
    let site = &scales[site_index];
    let mu = child_cluster_mean(coeff, site);
    let phi = site.child_precision;
    let child = BetaScale::new(mu * phi, (1.0 - mu) * phi)?;
    let mut total = 0.0;
    for i in 0..data.n_triads() {
        total += beta_log_density(data.values(Role::Child)[[site_index, i]], &child)?;
        total += beta_log_density(data.values(Role::Mother)[[site_index, i]], &site.mother)?;
        total += beta_log_density(data.values(Role::Father)[[site_index, i]], &site.father)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy)]
struct SiteStat {
    m: f64,
    f: f64,
    phi: f64,
    ln_gamma_phi: f64,
    sum_ln: f64,
    sum_ln1m: f64,
    n: f64,
    parental: f64,
}

impl SiteStat {
    fn child_loglik(&self, eta: f64) -> f64 {
        let mu = clamp_mean(inverse_logit(eta));
        let a = mu * self.phi;
        let b = (1.0 - mu) * self.phi;
        self.n * (self.ln_gamma_phi - ln_gamma(a) - ln_gamma(b)) + (a - 1.0) * self.sum_ln + (b - 1.0) * self.sum_ln1m
    }

    // value and d/d(eta)
    fn child_loglik_grad(&self, eta: f64) -> (f64, f64) {
        let raw = inverse_logit(eta);
        let mu = clamp_mean(raw);
        let a = mu * self.phi;
        let b = (1.0 - mu) * self.phi;
        let value = self.n * (self.ln_gamma_phi - ln_gamma(a) - ln_gamma(b))
            + (a - 1.0) * self.sum_ln
            + (b - 1.0) * self.sum_ln1m;
        let dmu = if raw == mu { mu * (1.0 - mu) } else { 0.0 };
        let dl_dmu = self.phi * (self.n * (digamma(b) - digamma(a)) + self.sum_ln - self.sum_ln1m);
        (value, dl_dmu * dmu)
    }
}

/// Per-site sufficient statistics shared by every EM step.
#[derive(Debug, Clone)]
pub struct PreparedSites {
    sites: Vec<SiteStat>,
    targets: Vec<f64>,
}

impl PreparedSites {
    pub fn new(data: &TriadDataset, scales: &[SiteScales]) -> Result<Self> {
        if scales.len() != data.n_sites() {
            return Err(Error::Shape(format!(
                "{} site scales for {} sites",
                scales.len(),
                data.n_sites()
            )));
        }
        let n = data.n_triads() as f64;
        let mut sites = Vec::with_capacity(scales.len());
        for (j, s) in scales.iter().enumerate() {
            let child = data.site(Role::Child, j);
            let sum_ln = child.iter().map(|y| y.ln()).sum();
            let sum_ln1m = child.iter().map(|y| (-y).ln_1p()).sum();
            let parental = role_loglik(data.site(Role::Mother, j), &s.mother)?
                + role_loglik(data.site(Role::Father, j), &s.father)?;
            sites.push(SiteStat {
                m: s.logit_mean_mother,
                f: s.logit_mean_father,
                phi: s.child_precision,
                ln_gamma_phi: ln_gamma(s.child_precision),
                sum_ln,
                sum_ln1m,
                n,
                parental,
            });
        }
        Ok(Self {
            sites,
            targets: scales.iter().map(|s| s.logit_mean_child).collect(),
        })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    /// Child-only log-likelihood of site `j` under `coeff`.
    pub fn child_loglik(&self, j: usize, coeff: &ClusterCoefficients) -> f64 {
        let s = &self.sites[j];
        s.child_loglik(coeff.linear_predictor(s.m, s.f))
    }

    /// Child plus parental log-likelihood of site `j` under `coeff`.
    pub fn site_loglik(&self, j: usize, coeff: &ClusterCoefficients) -> f64 {
        self.child_loglik(j, coeff) + self.sites[j].parental
    }

    pub fn parental_loglik(&self) -> f64 {
        self.sites.iter().map(|s| s.parental).sum()
    }

    pub fn subset(&self, sites: &[usize]) -> Self {
        Self {
            sites: sites.iter().map(|&j| self.sites[j]).collect(),
            targets: sites.iter().map(|&j| self.targets[j]).collect(),
        }
    }
}

fn role_loglik(values: ArrayView1<'_, f64>, scale: &BetaScale) -> Result<f64> {
    values.iter().map(|&x| beta_log_density(x, scale)).sum()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Responsibilities and observed-data log-likelihood at the given parameters.
/// Parental terms are identical across clusters, so they only enter the
/// log-likelihood, not the ratio.
pub fn expectation(prep: &PreparedSites, coeffs: &[ClusterCoefficients], mixing: &[f64]) -> (Array2<f64>, f64) {
    let k = coeffs.len();
    let j_count = prep.n_sites();
    let log_pi: Vec<f64> = mixing.iter().map(|p| p.ln()).collect();
    let mut resp = Array2::<f64>::zeros((j_count, k));
    let mut loglik = prep.parental_loglik();
    let mut row = vec![0.0; k];
    let mut underflow = 0usize;
    for j in 0..j_count {
        for c in 0..k {
            row[c] = log_pi[c] + prep.child_loglik(j, &coeffs[c]);
        }
        let lse = log_sum_exp(&row);
        if !lse.is_finite() {
            underflow += 1;
            resp.row_mut(j).fill(1.0 / k as f64);
            loglik += lse;
            continue;
        }
        loglik += lse;
        let mut out = resp.row_mut(j);
        let mut total = 0.0;
        for c in 0..k {
            let r = (row[c] - lse).exp();
            out[c] = r;
            total += r;
        }
        out.mapv_inplace(|r| r / total);
    }
    if underflow > 0 {
        warn!("{underflow} sites had no finite cluster likelihood; assigned uniform responsibilities");
    }
    (resp, loglik)
}

/// E-step: posterior cluster membership of every site.
pub fn e_step(state: &MixtureState, data: &TriadDataset, scales: &[SiteScales]) -> Result<Array2<f64>> {
    let prep = PreparedSites::new(data, scales)?;
    Ok(expectation(&prep, &state.coefficients, &state.mixing).0)
}

/// Observed-data log-likelihood, parental terms included.
pub fn observed_loglik(
    data: &TriadDataset,
    scales: &[SiteScales],
    coeffs: &[ClusterCoefficients],
    mixing: &[f64],
) -> Result<f64> {
    let prep = PreparedSites::new(data, scales)?;
    Ok(expectation(&prep, coeffs, mixing).1)
}

/// Mixing-proportion update: column means of the responsibilities.
pub fn m_step_pi(responsibilities: &Array2<f64>) -> Vec<f64> {
    let sums = responsibilities.sum_axis(Axis(0));
    // dividing by the grand total rather than J absorbs row rounding
    let total: f64 = sums.sum();
    sums.iter().map(|s| s / total).collect()
}

/// Weighted child log-likelihood of one cluster as a function of its
/// coefficients; the M-step maximizes this.
#[derive(Debug, Clone)]
pub struct ClusterObjective<'a> {
    prep: &'a PreparedSites,
    index: Vec<usize>,
    weights: Vec<f64>,
}

impl<'a> ClusterObjective<'a> {
    /// Keeps every site with positive weight.
    pub fn new(prep: &'a PreparedSites, weights: ArrayView1<'_, f64>) -> Self {
        Self::with_floor(prep, weights, 0.0)
    }

    fn with_floor(prep: &'a PreparedSites, weights: ArrayView1<'_, f64>, floor: f64) -> Self {
        let (index, weights) = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > floor)
            .map(|(j, &w)| (j, w))
            .unzip();
        Self { prep, index, weights }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn value(&self, coeff: &ClusterCoefficients) -> f64 {
        self.index
            .iter()
            .zip(&self.weights)
            .map(|(&j, &w)| w * self.prep.child_loglik(j, coeff))
            .sum()
    }

    pub fn value_and_gradient(&self, coeff: &ClusterCoefficients) -> (f64, [f64; 3]) {
        let mut value = 0.0;
        let mut grad = [0.0; 3];
        for (&j, &w) in self.index.iter().zip(&self.weights) {
            let s = &self.prep.sites[j];
            let (v, d) = s.child_loglik_grad(coeff.linear_predictor(s.m, s.f));
            value += w * v;
            let wd = w * d;
            grad[0] += wd;
            grad[1] += wd * s.m;
            grad[2] += wd * s.f;
        }
        (value, grad)
    }

    /// Maximizes from `start`; the result never has a lower objective.
    pub fn maximize(&self, start: &ClusterCoefficients, cluster: usize) -> Result<ClusterCoefficients> {
        self.maximize_warm(start, None, cluster).map(|(c, _)| c)
    }

    /// As [`maximize`](Self::maximize), seeding BFGS with an inverse Hessian
    /// from an earlier M-step. Also returns the final approximation.
    fn maximize_warm(
        &self,
        start: &ClusterCoefficients,
        inverse_hessian: Option<InverseHessian>,
        cluster: usize,
    ) -> Result<(ClusterCoefficients, InverseHessian)> {
        let opts = BfgsOptions::default();
        let res = optim::minimize_from(
            |x| {
                let (v, g) = self.value_and_gradient(&ClusterCoefficients::from_slice(x));
                (-v, g.iter().map(|d| -d).collect())
            },
            &start.to_array(),
            inverse_hessian,
            &opts,
        );
        if res.status == BfgsStatus::NoProgress {
            let gmax = res.grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !res.f.is_finite() || gmax > 1e-6 * (1.0 + res.f.abs()) {
                return Err(Error::Optimizer {
                    cluster,
                    reason: format!("no ascent direction, |grad| = {gmax:.3e}"),
                });
            }
        }
        Ok((ClusterCoefficients::from_slice(&res.x), res.inverse_hessian))
    }
}

type InverseHessian = Vec<Vec<f64>>;

/// Quasi-Newton update of every cluster's coefficients at fixed
/// responsibilities.
pub fn m_step_gamma(
    state: &MixtureState,
    data: &TriadDataset,
    scales: &[SiteScales],
) -> Result<Vec<ClusterCoefficients>> {
    let prep = PreparedSites::new(data, scales)?;
    maximize_coefficients(&prep, &state.responsibilities, &state.coefficients)
}

/// M-step over prepared sites. Clusters with total responsibility below
/// [`NULL_CLUSTER_MASS`] keep their coefficients.
pub fn maximize_coefficients(
    prep: &PreparedSites,
    responsibilities: &Array2<f64>,
    current: &[ClusterCoefficients],
) -> Result<Vec<ClusterCoefficients>> {
    let mut curvature = vec![None; current.len()];
    maximize_coefficients_warm(prep, responsibilities, current, &mut curvature)
}

/// M-step that keeps each cluster's BFGS curvature between EM iterations.
/// Responsibilities move little late in a run, so the previous inverse
/// Hessian is a good start.
fn maximize_coefficients_warm(
    prep: &PreparedSites,
    responsibilities: &Array2<f64>,
    current: &[ClusterCoefficients],
    curvature: &mut [Option<InverseHessian>],
) -> Result<Vec<ClusterCoefficients>> {
    let fits: Vec<Result<(ClusterCoefficients, Option<InverseHessian>)>> = (0..current.len())
        .into_par_iter()
        .map(|k| {
            let column = responsibilities.column(k);
            if column.sum() < NULL_CLUSTER_MASS {
                return Ok((current[k], None));
            }
            let inner = ClusterObjective::with_floor(prep, column, M_STEP_WEIGHT_FLOOR);
            let (candidate, h) = inner.maximize_warm(&current[k], curvature[k].clone(), k)?;
            let full = ClusterObjective::new(prep, column);
            if full.value(&candidate) >= full.value(&current[k]) {
                Ok((candidate, Some(h)))
            } else {
                Ok((current[k], None))
            }
        })
        .collect();
    let mut out = Vec::with_capacity(current.len());
    for (k, fit) in fits.into_iter().enumerate() {
        let (c, h) = fit?;
        curvature[k] = h;
        out.push(c);
    }
    Ok(out)
}

/// Per-site argmax of the responsibilities, ties to the lowest index.
pub fn hard_assignments(state: &MixtureState) -> Vec<usize> {
    argmax_rows(&state.responsibilities)
}

pub fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let factor = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= factor * m[col][c];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Least-squares fit of the child logit-means on `(1, M_j, F_j)` over the
/// given sites.
pub fn ols_coefficients(prep: &PreparedSites, sites: &[usize]) -> Option<ClusterCoefficients> {
    let mut xtx = [[0.0; 3]; 3];
    let mut xty = [0.0; 3];
    for &j in sites {
        let s = &prep.sites[j];
        let x = [1.0, s.m, s.f];
        for a in 0..3 {
            xty[a] += x[a] * prep.targets[j];
            for b in 0..3 {
                xtx[a][b] += x[a] * x[b];
            }
        }
    }
    for (a, row) in xtx.iter_mut().enumerate() {
        row[a] += 1e-8;
    }
    solve3(xtx, xty).map(|v| ClusterCoefficients::from_slice(&v))
}

/// Rounds of hard reassignment applied to the random-partition start.
pub const INIT_REFINE_ROUNDS: usize = 25;

/// Starting coefficients: OLS within a random partition of the sites into
/// `k` groups, followed by clusterwise-regression refinement.
///
/// A random partition alone gives every group almost the same fit, since
/// each group is a random sample of all sites. Each refinement round moves
/// every site to the group whose coefficients give its child values the
/// highest likelihood and refits OLS per group, which pulls the groups apart
/// while keeping the start random.
pub fn initial_coefficients<R: Rng>(prep: &PreparedSites, k: usize, rng: &mut R) -> Vec<ClusterCoefficients> {
    let mut order: Vec<usize> = (0..prep.n_sites()).collect();
    order.shuffle(rng);
    let pooled = ols_coefficients(prep, &order).unwrap_or_default();
    let fit_groups = |groups: &[Vec<usize>]| -> Vec<ClusterCoefficients> {
        groups
            .iter()
            .map(|group| {
                if group.len() < 3 {
                    pooled
                } else {
                    ols_coefficients(prep, group).unwrap_or(pooled)
                }
            })
            .collect()
    };
    let mut labels: Vec<usize> = vec![0; prep.n_sites()];
    for (pos, &j) in order.iter().enumerate() {
        labels[j] = pos % k;
    }
    let mut coefficients = fit_groups(&partition(&labels, k));
    if k == 1 {
        return coefficients;
    }
    for _ in 0..INIT_REFINE_ROUNDS {
        let mut changed = false;
        for (j, label) in labels.iter_mut().enumerate() {
            let mut best = *label;
            let mut best_ll = prep.child_loglik(j, &coefficients[best]);
            for (c, coeff) in coefficients.iter().enumerate() {
                let ll = prep.child_loglik(j, coeff);
                if ll > best_ll {
                    best = c;
                    best_ll = ll;
                }
            }
            changed |= best != *label;
            *label = best;
        }
        if !changed {
            break;
        }
        let groups = partition(&labels, k);
        // an emptied group restarts from a random site's neighborhood
        let refit = fit_groups(&groups);
        for (c, group) in groups.iter().enumerate() {
            coefficients[c] = if group.len() < 3 {
                let j = rng.random_range(0..prep.n_sites());
                let s = &prep.sites[j];
                ClusterCoefficients::new(
                    prep.targets[j] - pooled.gamma1 * s.m - pooled.gamma2 * s.f,
                    pooled.gamma1,
                    pooled.gamma2,
                )
            } else {
                refit[c]
            };
        }
    }
    coefficients
}

fn partition(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); k];
    for (j, &l) in labels.iter().enumerate() {
        groups[l].push(j);
    }
    groups
}

/// One EM run from the given starting parameters.
pub fn run_em_from(
    data: &TriadDataset,
    scales: &[SiteScales],
    coefficients: Vec<ClusterCoefficients>,
    mixing: Vec<f64>,
    config: &EmConfig,
) -> Result<MixtureState> {
    let prep = PreparedSites::new(data, scales)?;
    run_prepared_from(&prep, coefficients, mixing, config, 0)
}

pub(crate) fn run_prepared_from(
    prep: &PreparedSites,
    mut coefficients: Vec<ClusterCoefficients>,
    mut mixing: Vec<f64>,
    config: &EmConfig,
    stream: u64,
) -> Result<MixtureState> {
    config.validate()?;
    if coefficients.len() != mixing.len() || coefficients.is_empty() {
        return Err(Error::Shape(format!(
            "{} coefficient vectors, {} mixing weights",
            coefficients.len(),
            mixing.len()
        )));
    }
    let (mut resp, mut loglik) = expectation(prep, &coefficients, &mixing);
    let mut trace = vec![loglik];
    let mut iteration = 0;
    let mut converged = false;
    let mut jitter = task_rng(config.seed ^ 0x6a09_e667, stream);
    let mut curvature = vec![None; coefficients.len()];

    while iteration < config.max_iter {
        mixing = m_step_pi(&resp);
        coefficients = match maximize_coefficients_warm(prep, &resp, &coefficients, &mut curvature) {
            Ok(c) => c,
            Err(Error::Optimizer { cluster, reason }) => {
                warn!("M-step failed for cluster {cluster} ({reason}); retrying from a perturbed start");
                let mut perturbed = coefficients.clone();
                let c = &mut perturbed[cluster];
                c.gamma0 += 1e-3 * jitter.random_range(-1.0..1.0);
                c.gamma1 += 1e-3 * jitter.random_range(-1.0..1.0);
                c.gamma2 += 1e-3 * jitter.random_range(-1.0..1.0);
                curvature.iter_mut().for_each(|h| *h = None);
                maximize_coefficients_warm(prep, &resp, &perturbed, &mut curvature)?
            }
            Err(e) => return Err(e),
        };
        iteration += 1;
        let (r, l) = expectation(prep, &coefficients, &mixing);
        resp = r;
        trace.push(l);
        let gain = l - loglik;
        loglik = l;
        if gain < config.tol {
            converged = true;
            break;
        }
    }
    Ok(MixtureState {
        coefficients,
        mixing,
        responsibilities: resp,
        loglik_trace: trace,
        iteration,
        converged,
    })
}

/// Runs EM from `config.n_restarts` independent starts and keeps the one
/// with the highest final log-likelihood.
pub fn run_em(data: &TriadDataset, scales: &[SiteScales], config: &EmConfig) -> Result<MixtureState> {
    let prep = PreparedSites::new(data, scales)?;
    run_em_prepared(&prep, config)
}

pub fn run_em_prepared(prep: &PreparedSites, config: &EmConfig) -> Result<MixtureState> {
    config.validate()?;
    let k = config.n_clusters;
    let runs: Vec<Result<MixtureState>> = (0..config.n_restarts as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = task_rng(config.seed, r);
            let init = initial_coefficients(prep, k, &mut rng);
            run_prepared_from(prep, init, vec![1.0 / k as f64; k], config, r)
        })
        .collect();

    let mut best: Option<MixtureState> = None;
    let mut last_err = None;
    for run in runs {
        match run {
            Ok(state) => {
                if best.as_ref().is_none_or(|b| state.loglik() > b.loglik()) {
                    best = Some(state);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| Error::AllRestartsFailed {
        restarts: config.n_restarts,
        last: last_err.map(|e| e.to_string()).unwrap_or_default(),
    })
}
