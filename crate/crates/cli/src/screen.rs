//! Correlation screening of candidate sites.
//!
//! A site is kept when both the mother-child and the father-child Pearson
//! correlations across triads reach the cutoff. A cutoff of 0 disables the
//! screen (only degenerate sites are dropped).

use ndarray::ArrayView1;
use transmix::{Role, TriadDataset};

use crate::error::{CliError, Result};

pub const DEFAULT_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScreenStatus {
    Pass,
    Fail,
    /// Some role has zero variance at this site.
    Degenerate,
}

impl ScreenStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pass => "pass",
            Self::Fail => "fail",
            Self::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteScreen {
    pub site_id: String,
    pub mother_child: Option<f64>,
    pub father_child: Option<f64>,
    pub status: ScreenStatus,
}

/// Pearson correlation; `None` when either vector has zero variance.
pub fn pearson(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, my) = (x.sum() / n, y.sum() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y.iter()) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn has_spread(v: ArrayView1<f64>) -> bool {
    let first = v[0];
    v.iter().any(|&x| x != first)
}

pub fn screen_sites(data: &TriadDataset, cutoff: f64) -> Result<(TriadDataset, Vec<SiteScreen>)> {
    if !(0.0..=1.0).contains(&cutoff) {
        return Err(CliError::Config(format!("cutoff must lie in [0, 1], got {cutoff}")));
    }
    let mut keep = Vec::new();
    let mut report = Vec::with_capacity(data.n_sites());
    for j in 0..data.n_sites() {
        let child = data.site(Role::Child, j);
        let mother = data.site(Role::Mother, j);
        let father = data.site(Role::Father, j);
        let degenerate = data.n_triads() < 2 || !(has_spread(child) && has_spread(mother) && has_spread(father));
        let (mc, fc) = if degenerate {
            (None, None)
        } else {
            (pearson(mother, child), pearson(father, child))
        };
        let status = match (mc, fc) {
            _ if degenerate => ScreenStatus::Degenerate,
            _ if cutoff == 0.0 => ScreenStatus::Pass,
            (Some(a), Some(b)) if a >= cutoff && b >= cutoff => ScreenStatus::Pass,
            _ => ScreenStatus::Fail,
        };
        if status == ScreenStatus::Pass {
            keep.push(j);
        }
        report.push(SiteScreen {
            site_id: data.site_ids()[j].clone(),
            mother_child: mc,
            father_child: fc,
            status,
        });
    }
    if keep.is_empty() {
        return Err(CliError::Config(format!(
            "no site passes the correlation cutoff {cutoff}"
        )));
    }
    Ok((data.select_sites(&keep), report))
}
