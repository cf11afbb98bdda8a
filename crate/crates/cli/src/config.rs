//! Run configuration and its flat `key = value` manifest form.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use transmix::sim::{BootstrapMode, ScenarioName};

use crate::error::{CliError, Result};
use crate::ingest::{InputFormat, DEFAULT_INTENSITY_OFFSET};
use crate::screen::DEFAULT_CUTOFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Sweep,
    Subsets,
    Simulate,
    Bootstrap,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fit => "fit",
            Self::Sweep => "sweep",
            Self::Subsets => "subsets",
            Self::Simulate => "simulate",
            Self::Bootstrap => "bootstrap",
        }
    }

    pub fn needs_input(self) -> bool {
        self != Self::Simulate
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fit" => Ok(Self::Fit),
            "sweep" => Ok(Self::Sweep),
            "subsets" => Ok(Self::Subsets),
            "simulate" => Ok(Self::Simulate),
            "bootstrap" => Ok(Self::Bootstrap),
            other => Err(CliError::Config(format!("unknown command `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub format: InputFormat,
    pub intensity_offset: f64,
    pub output: PathBuf,
    /// Fixed number of clusters; overrides the range where both apply.
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    pub cutoff: f64,
    pub subset_size: Option<usize>,
    pub miss_budget: f64,
    /// Forces the number of subsets instead of deriving it from the budget.
    pub n_subsets: Option<usize>,
    pub scenario: ScenarioName,
    pub replicates: usize,
    pub bootstrap_reps: usize,
    pub bootstrap_mode: BootstrapMode,
}

impl RunConfig {
    pub fn new(command: Command, output: impl Into<PathBuf>) -> Self {
        Self {
            command,
            input: None,
            format: InputFormat::Beta,
            intensity_offset: DEFAULT_INTENSITY_OFFSET,
            output: output.into(),
            k: None,
            k_min: 1,
            k_max: 8,
            tol: 1e-7,
            max_iter: 500,
            restarts: 5,
            seed: 0,
            cutoff: DEFAULT_CUTOFF,
            subset_size: None,
            miss_budget: 1.0,
            n_subsets: None,
            scenario: ScenarioName::S0,
            replicates: 100,
            bootstrap_reps: 100,
            bootstrap_mode: BootstrapMode::FixedAssignments,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.command.needs_input() {
            match &self.input {
                None => return bad(format!("`{}` needs --input", self.command)),
                Some(p) if !p.is_file() => return bad(format!("input file {} not found", p.display())),
                _ => {}
            }
        }
        if !(0.0..=1.0).contains(&self.cutoff) {
            return bad(format!("cutoff must lie in [0, 1], got {}", self.cutoff));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.k == Some(0) || self.k_min == 0 || self.k_min > self.k_max {
            return bad(format!(
                "bad cluster range: k={:?}, {}..={}",
                self.k, self.k_min, self.k_max
            ));
        }
        if matches!(self.command, Command::Fit | Command::Bootstrap) && self.k.is_none() {
            return bad(format!("`{}` needs --k", self.command));
        }
        if self.command == Command::Subsets && self.subset_size.is_none() {
            return bad("`subsets` needs --subset-size".into());
        }
        if !(self.miss_budget > 0.0 && self.miss_budget < 100.0) {
            return bad(format!("miss budget must lie in (0, 100), got {}", self.miss_budget));
        }
        if self.restarts == 0 || self.replicates == 0 {
            return bad("restarts and replicates must be at least 1".into());
        }
        if self.command == Command::Bootstrap && self.bootstrap_reps < 2 {
            return bad("bootstrap needs at least 2 repetitions".into());
        }
        Ok(())
    }

    /// Cluster counts to sweep: just `k` when it is set.
    pub fn k_range(&self) -> std::ops::RangeInclusive<usize> {
        match self.k {
            Some(k) => k..=k,
            None => self.k_min..=self.k_max,
        }
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            ("command", self.command.to_string()),
            (
                "input",
                self.input.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("format", self.format.to_string()),
            ("intensity_offset", self.intensity_offset.to_string()),
            ("output", self.output.display().to_string()),
            ("k", opt(self.k)),
            ("k_min", self.k_min.to_string()),
            ("k_max", self.k_max.to_string()),
            ("tol", self.tol.to_string()),
            ("max_iter", self.max_iter.to_string()),
            ("restarts", self.restarts.to_string()),
            ("seed", self.seed.to_string()),
            ("cutoff", self.cutoff.to_string()),
            ("subset_size", opt(self.subset_size)),
            ("miss_budget", self.miss_budget.to_string()),
            ("n_subsets", opt(self.n_subsets)),
            ("scenario", self.scenario.to_string()),
            ("replicates", self.replicates.to_string()),
            ("bootstrap_reps", self.bootstrap_reps.to_string()),
            (
                "bootstrap_mode",
                match self.bootstrap_mode {
                    BootstrapMode::FixedAssignments => "fixed",
                    BootstrapMode::FullRefit => "refit",
                }
                .to_string(),
            ),
        ]
    }

    /// Reads the settings back from a manifest. Keys outside the settings
    /// (results, versions) are ignored.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let map = parse_manifest(text)?;
        let get = |k: &str| map.get(k).map(String::as_str).unwrap_or("");
        let num = |k: &str| -> Result<f64> {
            get(k)
                .parse()
                .map_err(|_| CliError::Config(format!("manifest key `{k}`: `{}` is not a number", get(k))))
        };
        let count = |k: &str| -> Result<usize> {
            get(k)
                .parse()
                .map_err(|_| CliError::Config(format!("manifest key `{k}`: `{}` is not a count", get(k))))
        };
        let opt_count = |k: &str| -> Result<Option<usize>> {
            if get(k).is_empty() {
                Ok(None)
            } else {
                count(k).map(Some)
            }
        };
        let input = get("input");
        Ok(Self {
            command: get("command").parse()?,
            input: (!input.is_empty()).then(|| PathBuf::from(input)),
            format: get("format").parse()?,
            intensity_offset: num("intensity_offset")?,
            output: PathBuf::from(get("output")),
            k: opt_count("k")?,
            k_min: count("k_min")?,
            k_max: count("k_max")?,
            tol: num("tol")?,
            max_iter: count("max_iter")?,
            restarts: count("restarts")?,
            seed: get("seed")
                .parse()
                .map_err(|_| CliError::Config(format!("manifest key `seed`: `{}`", get("seed"))))?,
            cutoff: num("cutoff")?,
            subset_size: opt_count("subset_size")?,
            miss_budget: num("miss_budget")?,
            n_subsets: opt_count("n_subsets")?,
            scenario: get("scenario").parse()?,
            replicates: count("replicates")?,
            bootstrap_reps: count("bootstrap_reps")?,
            bootstrap_mode: match get("bootstrap_mode") {
                "fixed" => BootstrapMode::FixedAssignments,
                "refit" => BootstrapMode::FullRefit,
                other => return Err(CliError::Config(format!("unknown bootstrap mode `{other}`"))),
            },
        })
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Parse {
            line: n + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Renders settings followed by `extra` pairs (results, versions).
pub fn render_manifest(config: &RunConfig, extra: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in config.to_pairs() {
        s.push_str(&format!("{k} = {v}\n"));
    }
    for (k, v) in extra {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let mut c = RunConfig::new(Command::Subsets, "out");
        c.input = Some("data.csv".into());
        c.k = None;
        c.tol = 1e-9;
        c.seed = u64::MAX;
        c.subset_size = Some(200);
        c.n_subsets = Some(3);
        c.scenario = ScenarioName::Nontransmission1;
        c.bootstrap_mode = BootstrapMode::FullRefit;
        c.format = InputFormat::Intensity;
        let text = render_manifest(&c, &[("result.selected_k".into(), "4".into())]);
        assert_eq!(RunConfig::from_manifest(&text).unwrap(), c);
    }

    #[test]
    fn validation() {
        let c = RunConfig::new(Command::Simulate, "out");
        assert!(c.validate().is_ok());
        let mut fit = RunConfig::new(Command::Fit, "out");
        fit.input = Some("/definitely/not/here.csv".into());
        fit.k = Some(3);
        assert!(fit.validate().is_err());
        let mut c = RunConfig::new(Command::Simulate, "out");
        c.cutoff = 1.5;
        assert!(c.validate().is_err());
        c.cutoff = 0.4;
        c.k_min = 5;
        c.k_max = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn manifest_parse_errors() {
        assert!(parse_manifest("a = 1\n# note\n\nb=2").unwrap().len() == 2);
        assert!(matches!(
            parse_manifest("a = 1\nnonsense"),
            Err(CliError::Parse { line: 2, .. })
        ));
    }
}
