//! In-memory triad methylation data.
//!
//! Values are stored site-major: row `j` of each matrix holds the `I`
//! measurements of site `j`, one column per triad.

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result, Role};

/// Lower clip applied to boundary values at ingestion.
pub const BOUNDARY_EPS: f64 = 1e-6;

/// Methylation values of `J` sites measured in `I` mother/father/child triads.
#[derive(Debug, Clone, PartialEq)]
pub struct TriadDataset {
    child: Array2<f64>,
    mother: Array2<f64>,
    father: Array2<f64>,
    site_ids: Vec<String>,
}

impl TriadDataset {
    /// Builds a dataset, checking that the three matrices agree in shape and
    /// that every value lies strictly inside (0, 1).
    pub fn new(child: Array2<f64>, mother: Array2<f64>, father: Array2<f64>, site_ids: Vec<String>) -> Result<Self> {
        let dim = child.dim();
        if mother.dim() != dim || father.dim() != dim {
            return Err(Error::Shape(format!(
                "child {:?}, mother {:?}, father {:?}",
                dim,
                mother.dim(),
                father.dim()
            )));
        }
        if site_ids.len() != dim.0 {
            return Err(Error::Shape(format!("{} site ids for {} sites", site_ids.len(), dim.0)));
        }
        for m in [&child, &mother, &father] {
            if let Some(&bad) = m.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
                return Err(Error::Domain { value: bad });
            }
        }
        Ok(Self {
            child,
            mother,
            father,
            site_ids,
        })
    }

    /// Same as [`TriadDataset::new`] with generated ids `site0`, `site1`, ...
    pub fn with_default_ids(child: Array2<f64>, mother: Array2<f64>, father: Array2<f64>) -> Result<Self> {
        let ids = (0..child.nrows()).map(|j| format!("site{j}")).collect();
        Self::new(child, mother, father, ids)
    }

    pub fn n_sites(&self) -> usize {
        self.child.nrows()
    }

    pub fn n_triads(&self) -> usize {
        self.child.ncols()
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn values(&self, role: Role) -> &Array2<f64> {
        match role {
            Role::Child => &self.child,
            Role::Mother => &self.mother,
            Role::Father => &self.father,
        }
    }

    pub fn site(&self, role: Role, j: usize) -> ArrayView1<'_, f64> {
        self.values(role).row(j)
    }

    /// Restricts the dataset to the given sites, in the given order.
    pub fn select_sites(&self, sites: &[usize]) -> Self {
        Self {
            child: self.child.select(Axis(0), sites),
            mother: self.mother.select(Axis(0), sites),
            father: self.father.select(Axis(0), sites),
            site_ids: sites.iter().map(|&j| self.site_ids[j].clone()).collect(),
        }
    }

    /// Picks triads (columns) by index; repeats are allowed, which is what a
    /// bootstrap resample needs.
    pub fn select_triads(&self, triads: &[usize]) -> Self {
        Self {
            child: self.child.select(Axis(1), triads),
            mother: self.mother.select(Axis(1), triads),
            father: self.father.select(Axis(1), triads),
            site_ids: self.site_ids.clone(),
        }
    }
}

/// Clips a raw proportion into `[BOUNDARY_EPS, 1 - BOUNDARY_EPS]`.
/// Returns the clipped value and whether clipping happened.
pub fn clip_unit(value: f64) -> (f64, bool) {
    if value < BOUNDARY_EPS {
        (BOUNDARY_EPS, true)
    } else if value > 1.0 - BOUNDARY_EPS {
        (1.0 - BOUNDARY_EPS, true)
    } else {
        (value, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_boundary_values() {
        let ok = array![[0.2, 0.3]];
        let bad = array![[0.0, 0.3]];
        assert!(TriadDataset::with_default_ids(bad, ok.clone(), ok.clone()).is_err());
        assert!(TriadDataset::with_default_ids(ok.clone(), ok.clone(), ok).is_ok());
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let a = array![[0.2, 0.3]];
        let b = array![[0.2, 0.3, 0.4]];
        assert!(matches!(
            TriadDataset::with_default_ids(a.clone(), b, a),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn triad_resampling_repeats_columns() {
        let c = array![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]];
        let d = TriadDataset::with_default_ids(c.clone(), c.clone(), c).unwrap();
        let r = d.select_triads(&[2, 2, 0]);
        assert_eq!(r.n_triads(), 3);
        assert_eq!(r.site(Role::Child, 1).to_vec(), vec![0.6, 0.6, 0.4]);
        let s = d.select_sites(&[1]);
        assert_eq!(s.site_ids(), &["site1".to_string()]);
    }

    #[test]
    fn clip_unit_boundaries() {
        assert_eq!(clip_unit(0.0), (BOUNDARY_EPS, true));
        assert_eq!(clip_unit(1.0), (1.0 - BOUNDARY_EPS, true));
        assert_eq!(clip_unit(0.4), (0.4, false));
    }
}
