//! Long-format CSV ingestion.
//!
//! Beta files have columns `site_id,role,subject_id,value`; intensity files
//! have `site_id,role,subject_id,M,U` and are converted with
//! `beta = M / (c + M + U)`. Every (site, role, subject) cell must appear
//! exactly once. Sites and subjects keep the order of first appearance.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use ndarray::Array2;
use transmix::data::clip_unit;
use transmix::{Role, TriadDataset};

use crate::error::{CliError, Result};

/// Offset added to the intensity denominator.
pub const DEFAULT_INTENSITY_OFFSET: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Beta,
    Intensity,
}

impl FromStr for InputFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "beta" | "beta-csv" => Ok(Self::Beta),
            "intensity" | "intensity-csv" => Ok(Self::Intensity),
            other => Err(CliError::Config(format!("unknown input format `{other}`"))),
        }
    }
}

impl std::fmt::Display for InputFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Beta => "beta",
            Self::Intensity => "intensity",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: TriadDataset,
    pub subject_ids: Vec<String>,
    /// Values moved onto the boundary clip.
    pub n_clipped: usize,
}

/// `M / (c + M + U)`.
pub fn beta_from_intensities(methylated: f64, unmethylated: f64, offset: f64) -> f64 {
    methylated / (offset + methylated + unmethylated)
}

pub fn ingest_triads(path: &Path, format: InputFormat, offset: f64) -> Result<Ingested> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    ingest_reader(file, format, offset)
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| CliError::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
}

pub fn ingest_reader<R: Read>(reader: R, format: InputFormat, offset: f64) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| CliError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let site_col = column(headers, "site_id")?;
    let role_col = column(headers, "role")?;
    let subject_col = column(headers, "subject_id")?;
    let value_cols = match format {
        InputFormat::Beta => vec![column(headers, "value")?],
        InputFormat::Intensity => vec![column(headers, "M")?, column(headers, "U")?],
    };

    let mut site_index: HashMap<String, usize> = HashMap::new();
    let mut site_ids = Vec::new();
    let mut subject_index: HashMap<String, usize> = HashMap::new();
    let mut subject_ids = Vec::new();
    let mut cells: HashMap<(usize, Role, usize), f64> = HashMap::new();
    let mut n_clipped = 0;

    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| CliError::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |i: usize| -> Result<&str> {
            record.get(i).ok_or_else(|| CliError::Parse {
                line,
                message: format!("expected at least {} fields", i + 1),
            })
        };
        let number = |i: usize| -> Result<f64> {
            let s = field(i)?;
            s.parse::<f64>().map_err(|_| CliError::Parse {
                line,
                message: format!("`{s}` is not a number"),
            })
        };
        let site = field(site_col)?.to_string();
        let role: Role = field(role_col)?.parse().map_err(|e: transmix::Error| CliError::Parse {
            line,
            message: e.to_string(),
        })?;
        let subject = field(subject_col)?.to_string();

        let raw = match format {
            InputFormat::Beta => number(value_cols[0])?,
            InputFormat::Intensity => {
                let (m, u) = (number(value_cols[0])?, number(value_cols[1])?);
                if !(m >= 0.0 && u >= 0.0 && m.is_finite() && u.is_finite()) {
                    return Err(CliError::OutOfRange {
                        line,
                        message: format!("intensities must be finite and nonnegative, got M={m}, U={u}"),
                    });
                }
                beta_from_intensities(m, u, offset)
            }
        };
        if !(0.0..=1.0).contains(&raw) {
            return Err(CliError::OutOfRange {
                line,
                message: format!("beta value {raw} outside [0, 1]"),
            });
        }
        let (value, clipped) = clip_unit(raw);
        if clipped {
            n_clipped += 1;
        }

        let next = site_ids.len();
        let j = *site_index.entry(site.clone()).or_insert_with(|| {
            site_ids.push(site.clone());
            next
        });
        let next = subject_ids.len();
        let i = *subject_index.entry(subject.clone()).or_insert_with(|| {
            subject_ids.push(subject.clone());
            next
        });
        if cells.insert((j, role, i), value).is_some() {
            return Err(CliError::Parse {
                line,
                message: format!("duplicate entry for site `{site}`, {role}, subject `{subject}`"),
            });
        }
    }
    if site_ids.is_empty() {
        return Err(CliError::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    if n_clipped > 0 {
        warn!("{n_clipped} boundary values clipped into the open unit interval");
    }

    let (n_sites, n_subjects) = (site_ids.len(), subject_ids.len());
    let mut missing = Vec::new();
    let mut matrices = [
        Array2::zeros((n_sites, n_subjects)),
        Array2::zeros((n_sites, n_subjects)),
        Array2::zeros((n_sites, n_subjects)),
    ];
    for j in 0..n_sites {
        for (r, role) in Role::ALL.into_iter().enumerate() {
            for i in 0..n_subjects {
                match cells.get(&(j, role, i)) {
                    Some(&v) => matrices[r][[j, i]] = v,
                    None => missing.push(format!("({}, {role}, {})", site_ids[j], subject_ids[i])),
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::IncompleteTriads(missing));
    }
    let [child, mother, father] = matrices;
    Ok(Ingested {
        data: TriadDataset::new(child, mother, father, site_ids)?,
        subject_ids,
        n_clipped,
    })
}

/// Writes a dataset in the beta long format, one row per value.
pub fn write_beta_csv<W: Write>(data: &TriadDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["site_id", "role", "subject_id", "value"])?;
    for (j, site) in data.site_ids().iter().enumerate() {
        for role in Role::ALL {
            for (i, v) in data.site(role, j).iter().enumerate() {
                w.write_record([site.as_str(), role.as_str(), &format!("s{i}"), &v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
