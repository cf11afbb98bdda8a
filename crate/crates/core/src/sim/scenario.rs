//! Simulation scenarios and the triad data generator.

use std::fmt;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, StandardNormal};
use statrs::function::beta::inv_beta_reg;
use statrs::function::erf::erfc;

use crate::beta::{inverse_logit, logit};
use crate::data::TriadDataset;
use crate::em::ClusterCoefficients;
use crate::error::{Error, Result};
use crate::rng::task_rng;

/// Generated values are kept inside `[GENERATOR_EPS, 1 - GENERATOR_EPS]`.
pub const GENERATOR_EPS: f64 = 1e-12;

const S0_GAMMAS: [ClusterCoefficients; 4] = [
    ClusterCoefficients::new(-4.2, 0.0, 1.3),
    ClusterCoefficients::new(-0.7, 1.9, 0.0),
    ClusterCoefficients::new(-2.3, 0.0, 0.0),
    ClusterCoefficients::new(1.4, -1.5, -0.6),
];

const EVEN_TRANSMISSION: ClusterCoefficients = ClusterCoefficients::new(-3.0, 2.0, 2.0);

/// Transmission patterns of the six clusters found in the 4063-site cohort
/// analysis; used as the transmitted background of the nontransmission
/// scenarios.
pub const COHORT_GAMMAS: [ClusterCoefficients; 6] = [
    ClusterCoefficients::new(0.2695, 0.5704, 0.4638),
    ClusterCoefficients::new(0.7019, 0.2151, 0.8547),
    ClusterCoefficients::new(1.1761, 0.6727, 0.4763),
    ClusterCoefficients::new(-0.2357, 0.5415, 0.5236),
    ClusterCoefficients::new(0.4783, 0.5265, 0.5106),
    ClusterCoefficients::new(0.0536, 0.6414, 0.3808),
];

/// Cohort cluster sizes (349, 53, 14, 2182, 118, 1347) rescaled to a total.
fn cohort_sizes(total: usize) -> Vec<usize> {
    let raw = [349.0, 53.0, 14.0, 2182.0, 118.0, 1347.0];
    let sum: f64 = raw.iter().sum();
    let mut sizes: Vec<usize> = raw.iter().map(|r| (r / sum * total as f64).floor() as usize).collect();
    // hand the rounding remainder to the largest cluster
    let used: usize = sizes.iter().sum();
    sizes[3] += total - used;
    sizes
}

/// Intercept of the nontransmitted sites in the NT1 scenario.
pub const NT1_INTERCEPT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioName {
    S0,
    S1,
    S2,
    S3,
    S4,
    TruncatedNormal,
    Nontransmission1,
    Nontransmission2,
    Custom,
}

impl ScenarioName {
    pub const BUILTIN: [ScenarioName; 8] = [
        ScenarioName::S0,
        ScenarioName::S1,
        ScenarioName::S2,
        ScenarioName::S3,
        ScenarioName::S4,
        ScenarioName::TruncatedNormal,
        ScenarioName::Nontransmission1,
        ScenarioName::Nontransmission2,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ScenarioName::S0 => "S0",
            ScenarioName::S1 => "S1",
            ScenarioName::S2 => "S2",
            ScenarioName::S3 => "S3",
            ScenarioName::S4 => "S4",
            ScenarioName::TruncatedNormal => "TN",
            ScenarioName::Nontransmission1 => "NT1",
            ScenarioName::Nontransmission2 => "NT2",
            ScenarioName::Custom => "custom",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        Self::BUILTIN
            .into_iter()
            .find(|n| n.tag() == upper)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDef {
    pub coefficients: ClusterCoefficients,
    pub n_sites: usize,
    /// Lag-one latent correlation between adjacent sites of this cluster.
    pub neighbor_correlation: f64,
}

impl ClusterDef {
    pub fn independent(coefficients: ClusterCoefficients, n_sites: usize) -> Self {
        Self {
            coefficients,
            n_sites,
            neighbor_correlation: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    /// Beta marginals with per-site scales drawn from the spec's ranges.
    Beta,
    /// Normal truncated to (0, 1). `parent_mean` and `variance` are the
    /// location and squared scale before truncation.
    TruncatedNormal { parent_mean: f64, variance: f64 },
}

/// How the per-site Beta scales are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleRanges {
    /// Both shape parameters drawn independently and uniformly from
    /// `shape`. The child's mean comes from the cluster coefficients and its
    /// precision is the sum of two such draws.
    Shapes { shape: (f64, f64) },
    /// Mean and precision drawn uniformly; the child's precision comes from
    /// the same range.
    MeanPrecision { mean: (f64, f64), precision: (f64, f64) },
}

impl Default for ScaleRanges {
    fn default() -> Self {
        ScaleRanges::MeanPrecision {
            mean: (0.15, 0.85),
            precision: (5.0, 50.0),
        }
    }
}

impl ScaleRanges {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScaleRanges::Shapes { shape } => shape.0 > 0.0 && shape.0 <= shape.1 && shape.1.is_finite(),
            ScaleRanges::MeanPrecision { mean, precision } => {
                mean.0 > 0.0
                    && mean.0 <= mean.1
                    && mean.1 < 1.0
                    && precision.0 > 0.0
                    && precision.0 <= precision.1
                    && precision.1.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad scale ranges {self:?}")))
        }
    }

    /// `(mean, precision)` of one parental Beta.
    fn draw_parent(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        match *self {
            ScaleRanges::Shapes { shape } => {
                let a: f64 = rng.random_range(shape.0..=shape.1);
                let b: f64 = rng.random_range(shape.0..=shape.1);
                (a / (a + b), a + b)
            }
            ScaleRanges::MeanPrecision { mean, precision } => (
                rng.random_range(mean.0..=mean.1),
                rng.random_range(precision.0..=precision.1),
            ),
        }
    }

    fn draw_child_precision(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            ScaleRanges::Shapes { shape } => rng.random_range(shape.0..=shape.1) + rng.random_range(shape.0..=shape.1),
            ScaleRanges::MeanPrecision { precision, .. } => rng.random_range(precision.0..=precision.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: ScenarioName,
    pub n_triads: usize,
    pub clusters: Vec<ClusterDef>,
    pub generator: Generator,
    pub scale_ranges: ScaleRanges,
    /// True cluster holding nontransmitted sites, when the scenario has one
    /// whose recovery is tracked.
    pub nontransmitted: Option<usize>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn custom(clusters: Vec<ClusterDef>, n_triads: usize, seed: u64) -> Self {
        Self {
            name: ScenarioName::Custom,
            n_triads,
            clusters,
            generator: Generator::Beta,
            scale_ranges: ScaleRanges::default(),
            nontransmitted: None,
            seed,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.clusters.iter().map(|c| c.n_sites).sum()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_triads < 2 {
            return Err(Error::InvalidArgument("need at least 2 triads".into()));
        }
        if self.clusters.is_empty() || self.n_sites() == 0 {
            return Err(Error::InvalidArgument("scenario has no sites".into()));
        }
        for c in &self.clusters {
            if !(0.0..1.0).contains(&c.neighbor_correlation) {
                return Err(Error::InvalidArgument(format!(
                    "neighbor correlation {} outside [0, 1)",
                    c.neighbor_correlation
                )));
            }
            if !c.coefficients.is_finite() {
                return Err(Error::InvalidArgument("non-finite coefficients".into()));
            }
        }
        self.scale_ranges.validate()
    }
}

/// The published simulation configurations, 60 triads each.
pub fn builtin_scenario(name: ScenarioName, seed: u64) -> Result<ScenarioSpec> {
    let ind = ClusterDef::independent;
    let sized =
        |sizes: &[usize]| -> Vec<ClusterDef> { S0_GAMMAS.iter().zip(sizes).map(|(g, &n)| ind(*g, n)).collect() };
    let mut spec = ScenarioSpec {
        name,
        n_triads: 60,
        clusters: Vec::new(),
        generator: Generator::Beta,
        scale_ranges: ScaleRanges::default(),
        nontransmitted: None,
        seed,
    };
    match name {
        ScenarioName::S0 => spec.clusters = sized(&[500, 500, 500, 500]),
        ScenarioName::S1 => spec.clusters = sized(&[500, 600, 850, 50]),
        ScenarioName::S2 => {
            spec.clusters = sized(&[500, 600, 850, 50]);
            spec.clusters[0].neighbor_correlation = 0.9;
            spec.clusters[1].neighbor_correlation = 0.9;
        }
        ScenarioName::S3 => {
            spec.clusters = sized(&[500, 600, 450, 50]);
            spec.clusters.push(ind(EVEN_TRANSMISSION, 400));
        }
        ScenarioName::S4 => spec.clusters = sized(&[2500, 3000, 4250, 250]),
        ScenarioName::TruncatedNormal => {
            spec.clusters = sized(&[500, 500, 500, 500]);
            spec.generator = Generator::TruncatedNormal {
                parent_mean: 0.5,
                variance: 0.25,
            };
        }
        ScenarioName::Nontransmission1 => {
            spec.clusters = COHORT_GAMMAS
                .iter()
                .zip(cohort_sizes(1500))
                .filter(|(_, n)| *n > 0)
                .map(|(g, n)| ind(*g, n))
                .collect();
            spec.clusters
                .push(ind(ClusterCoefficients::new(NT1_INTERCEPT, 0.0, 0.0), 500));
            spec.nontransmitted = Some(spec.clusters.len() - 1);
        }
        ScenarioName::Nontransmission2 => {
            spec.clusters = COHORT_GAMMAS
                .iter()
                .zip(cohort_sizes(1000))
                .filter(|(_, n)| *n > 0)
                .map(|(g, n)| ind(*g, n))
                .collect();
        }
        ScenarioName::Custom => {
            return Err(Error::UnknownScenario("custom".into()));
        }
    }
    Ok(spec)
}

/// Generated data with its ground-truth cluster of every site.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub data: TriadDataset,
    pub truth: Vec<usize>,
}

fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn clip(v: f64) -> f64 {
    if v.is_nan() {
        0.5
    } else {
        v.clamp(GENERATOR_EPS, 1.0 - GENERATOR_EPS)
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng, location: f64, sd: f64) -> f64 {
    let normal = Normal::new(location, sd).expect("finite sd");
    loop {
        let v: f64 = normal.sample(rng);
        if v > 0.0 && v < 1.0 {
            return v;
        }
    }
}

/// Per-role latent AR(1) chains for one cluster's copula, one per triad.
struct CopulaChain {
    rho: f64,
    state: Vec<[f64; 3]>,
}

impl CopulaChain {
    fn new(rho: f64, n_triads: usize) -> Self {
        Self {
            rho,
            state: vec![[f64::NAN; 3]; n_triads],
        }
    }

    /// Advances every chain one site and returns the uniforms.
    fn step(&mut self, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        let innovation = (1.0 - self.rho * self.rho).sqrt();
        self.state
            .iter_mut()
            .map(|z| {
                let mut u = [0.0; 3];
                for r in 0..3 {
                    let e: f64 = rng.sample(StandardNormal);
                    z[r] = if z[r].is_nan() {
                        e
                    } else {
                        self.rho * z[r] + innovation * e
                    };
                    u[r] = standard_normal_cdf(z[r]);
                }
                u
            })
            .collect()
    }
}

fn is_constant(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

/// Draws one dataset from the scenario.
///
/// Per site: parental Beta scales are drawn per [`ScaleRanges`], the child
/// mean follows the site's cluster coefficients applied to the parental
/// logit-means, and the child precision is drawn like a parent's. Triads are then sampled independently, except in
/// clusters with a neighbor correlation, where a Gaussian copula chain
/// couples adjacent sites before the Beta inverse CDF.
pub fn generate_dataset(spec: &ScenarioSpec) -> Result<GeneratedData> {
    spec.validate()?;
    let n = spec.n_triads;
    let j_total = spec.n_sites();
    let mut child = Array2::zeros((j_total, n));
    let mut mother = Array2::zeros((j_total, n));
    let mut father = Array2::zeros((j_total, n));
    let mut truth = Vec::with_capacity(j_total);
    let mut rng = task_rng(spec.seed, 0);
    let ranges = spec.scale_ranges;

    let mut row = 0;
    for (k, cluster) in spec.clusters.iter().enumerate() {
        let mut chain = (cluster.neighbor_correlation > 0.0).then(|| CopulaChain::new(cluster.neighbor_correlation, n));
        for _ in 0..cluster.n_sites {
            let mut values = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
            loop {
                match spec.generator {
                    Generator::Beta => {
                        let (mm, mp) = ranges.draw_parent(&mut rng);
                        let (fm, fp) = ranges.draw_parent(&mut rng);
                        let eta = cluster.coefficients.linear_predictor(logit(mm)?, logit(fm)?);
                        let cm = inverse_logit(eta).clamp(1e-300, 1.0 - 1e-16);
                        let cp = ranges.draw_child_precision(&mut rng);
                        let shapes = [
                            (cm * cp, (1.0 - cm) * cp),
                            (mm * mp, (1.0 - mm) * mp),
                            (fm * fp, (1.0 - fm) * fp),
                        ];
                        match chain.as_mut() {
                            None => {
                                let dists: Vec<Beta<f64>> = shapes
                                    .iter()
                                    .map(|&(a, b)| Beta::new(a, b).map_err(|e| Error::InvalidArgument(e.to_string())))
                                    .collect::<Result<_>>()?;
                                for i in 0..n {
                                    for r in 0..3 {
                                        values[r][i] = clip(dists[r].sample(&mut rng));
                                    }
                                }
                            }
                            Some(ch) => {
                                let u = ch.step(&mut rng);
                                for i in 0..n {
                                    for r in 0..3 {
                                        let (a, b) = shapes[r];
                                        values[r][i] = clip(inv_beta_reg(a, b, u[i][r]));
                                    }
                                }
                            }
                        }
                    }
                    Generator::TruncatedNormal { parent_mean, variance } => {
                        let sd = variance.sqrt();
                        let lp = logit(parent_mean)?;
                        let cm = inverse_logit(cluster.coefficients.linear_predictor(lp, lp));
                        for i in 0..n {
                            values[0][i] = clip(truncated_normal(&mut rng, cm, sd));
                            values[1][i] = clip(truncated_normal(&mut rng, parent_mean, sd));
                            values[2][i] = clip(truncated_normal(&mut rng, parent_mean, sd));
                        }
                    }
                }
                // redraw sites a role of which came out constant
                if !values.iter().any(|v| is_constant(v)) {
                    break;
                }
            }
            for i in 0..n {
                child[[row, i]] = values[0][i];
                mother[[row, i]] = values[1][i];
                father[[row, i]] = values[2][i];
            }
            truth.push(k);
            row += 1;
        }
    }
    Ok(GeneratedData {
        data: TriadDataset::with_default_ids(child, mother, father)?,
        truth,
    })
}
