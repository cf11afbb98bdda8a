//! Dispatch of the five commands and the files they write.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use transmix::rng::derive_seed;
use transmix::sim::{
    bootstrap_se, builtin_scenario, run_mc_study, BootstrapResult, MethodSummary, StudyConfig, StudyReport,
};
use transmix::{
    cluster_by_subsets, compute_site_scales, plan_subsets, plan_subsets_with_count, run_em, sweep_k,
    ClusterCoefficients, EmConfig, KSweepResult, MixtureState, SiteScales, TriadDataset, TwoStageResult,
};

use crate::config::{render_manifest, Command, RunConfig};
use crate::error::{CliError, Result};
use crate::ingest::ingest_triads;
use crate::screen::{screen_sites, SiteScreen};

pub const MANIFEST_FILE: &str = "run_manifest.txt";

#[derive(Debug, Clone, Default)]
pub struct PipelineSummary {
    pub selected_k: Option<usize>,
    pub n_sites: usize,
    pub files: Vec<PathBuf>,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body)?;
        self.files.push(path);
        Ok(())
    }
}

fn em_config(config: &RunConfig, k: usize) -> EmConfig {
    EmConfig {
        n_clusters: k,
        tol: config.tol,
        max_iter: config.max_iter,
        n_restarts: config.restarts,
        seed: config.seed,
    }
}

struct Prepared {
    data: TriadDataset,
    scales: Vec<SiteScales>,
}

fn load(config: &RunConfig, out: &mut Outputs) -> Result<Prepared> {
    let path = config
        .input
        .as_ref()
        .ok_or_else(|| CliError::Config("no input file".into()))?;
    let ingested = ingest_triads(path, config.format, config.intensity_offset)?;
    info!(
        "read {} sites x {} triads from {}",
        ingested.data.n_sites(),
        ingested.data.n_triads(),
        path.display()
    );
    let (data, report) = screen_sites(&ingested.data, config.cutoff)?;
    info!(
        "{} of {} sites pass screening at cutoff {}",
        data.n_sites(),
        report.len(),
        config.cutoff
    );
    write_screening(out, &report)?;
    let scales = compute_site_scales(&data)?;
    Ok(Prepared { data, scales })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_screening(out: &mut Outputs, report: &[SiteScreen]) -> Result<()> {
    out.csv(
        "screening.csv",
        &["site_id", "mother_child_r", "father_child_r", "status"],
        report.iter().map(|s| {
            vec![
                s.site_id.clone(),
                opt(s.mother_child),
                opt(s.father_child),
                s.status.as_str().to_string(),
            ]
        }),
    )
}

fn write_assignments(out: &mut Outputs, data: &TriadDataset, fit: &MixtureState) -> Result<()> {
    let k = fit.n_clusters();
    let mut header = vec!["site_id".to_string(), "cluster".to_string()];
    header.extend((0..k).map(|c| format!("r{c}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let labels = fit.hard_assignments();
    out.csv(
        "assignments.csv",
        &header,
        data.site_ids().iter().enumerate().map(|(j, id)| {
            let mut row = vec![id.clone(), labels[j].to_string()];
            row.extend(fit.responsibilities.row(j).iter().map(|r| r.to_string()));
            row
        }),
    )
}

fn write_coefficients(
    out: &mut Outputs,
    coefficients: &[ClusterCoefficients],
    mixing: &[f64],
    sizes: &[usize],
    se: Option<&BootstrapResult>,
) -> Result<()> {
    let mut header = vec!["cluster", "gamma0", "gamma1", "gamma2"];
    if se.is_some() {
        header.extend(["se_gamma0", "se_gamma1", "se_gamma2"]);
    }
    header.extend(["pi", "n_sites"]);
    out.csv(
        "coefficients.csv",
        &header,
        coefficients.iter().enumerate().map(|(k, c)| {
            let mut row = vec![k.to_string()];
            row.extend(c.to_array().iter().map(|v| v.to_string()));
            if let Some(b) = se {
                row.extend(b.coefficient_se[k].iter().map(|v| v.to_string()));
            }
            row.push(mixing[k].to_string());
            row.push(sizes[k].to_string());
            row
        }),
    )
}

fn write_bic_curve(out: &mut Outputs, sweep: &KSweepResult) -> Result<()> {
    out.csv(
        "bic_curve.csv",
        &["k", "loglik", "bic", "null_clusters", "error"],
        sweep.records.iter().map(|r| {
            vec![
                r.n_clusters.to_string(),
                opt(r.loglik),
                opt(r.bic),
                r.n_null_clusters.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )
}

fn write_fit(out: &mut Outputs, data: &TriadDataset, fit: &MixtureState, se: Option<&BootstrapResult>) -> Result<()> {
    write_assignments(out, data, fit)?;
    write_coefficients(out, &fit.coefficients, &fit.mixing, &fit.cluster_sizes(), se)
}

fn run_sweep(config: &RunConfig, data: &Prepared) -> Result<KSweepResult> {
    Ok(sweep_k(
        &data.data,
        &data.scales,
        config.k_range(),
        &em_config(config, 1),
    )?)
}

fn write_two_stage(out: &mut Outputs, data: &TriadDataset, r: &TwoStageResult) -> Result<()> {
    out.csv(
        "stage1.csv",
        &["subset", "cluster", "gamma0", "gamma1", "gamma2", "size", "group"],
        r.stage1.iter().map(|s| {
            let g = s.coefficients.to_array();
            vec![
                s.subset.to_string(),
                s.cluster.to_string(),
                g[0].to_string(),
                g[1].to_string(),
                g[2].to_string(),
                s.size.to_string(),
                s.group.to_string(),
            ]
        }),
    )?;
    let mut post_hoc = vec![false; data.n_sites()];
    for &j in &r.post_hoc {
        post_hoc[j] = true;
    }
    out.csv(
        "assignments.csv",
        &["site_id", "cluster", "post_hoc"],
        data.site_ids()
            .iter()
            .enumerate()
            .map(|(j, id)| vec![id.clone(), r.final_assignments[j].to_string(), post_hoc[j].to_string()]),
    )?;
    let k = r.final_coefficients.len();
    let mut sizes = vec![0; k];
    for &g in &r.final_assignments {
        sizes[g] += 1;
    }
    let mixing: Vec<f64> = sizes.iter().map(|&s| s as f64 / data.n_sites() as f64).collect();
    write_coefficients(out, &r.final_coefficients, &mixing, &sizes, None)
}

fn summary_rows(method: &str, s: &MethodSummary) -> Vec<Vec<String>> {
    (0..s.sensitivity_mean.len())
        .map(|k| {
            vec![
                method.to_string(),
                (k + 1).to_string(),
                s.sensitivity_mean[k].to_string(),
                s.sensitivity_sd[k].to_string(),
                s.specificity_mean[k].to_string(),
                s.specificity_sd[k].to_string(),
            ]
        })
        .collect()
}

fn write_study(out: &mut Outputs, report: &StudyReport) -> Result<()> {
    let mut rows = summary_rows("em_selected_k", &report.em_selected);
    rows.extend(summary_rows("em_true_k", &report.em_true_k));
    rows.extend(summary_rows("kmeans", &report.kmeans));
    out.csv(
        "study_summary.csv",
        &[
            "method",
            "cluster",
            "sensitivity_mean",
            "sensitivity_sd",
            "specificity_mean",
            "specificity_sd",
        ],
        rows,
    )?;
    out.csv(
        "k_frequency.csv",
        &["k", "count", "fraction"],
        report
            .k_frequency
            .iter()
            .map(|(k, n)| vec![k.to_string(), n.to_string(), report.fraction_selecting(*k).to_string()]),
    )?;
    out.csv(
        "replicates.csv",
        &[
            "replicate",
            "data_seed",
            "selected_k",
            "rule",
            "nontransmitted_recovery",
        ],
        report.replicates.iter().map(|o| {
            vec![
                o.replicate.to_string(),
                o.data_seed.to_string(),
                o.selected_k.to_string(),
                o.selection_rule.to_string(),
                opt(o.nontransmitted_recovery),
            ]
        }),
    )?;
    if !report.failures.is_empty() {
        out.csv(
            "failed_replicates.csv",
            &["replicate", "error"],
            report
                .failures
                .iter()
                .map(|f| vec![f.replicate.to_string(), f.error.clone()]),
        )?;
    }
    Ok(())
}

/// Runs the configured command and writes its artifacts plus the manifest
/// into `config.output`.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineSummary> {
    config.validate()?;
    let mut out = Outputs::new(&config.output)?;
    let mut results: Vec<(String, String)> = Vec::new();
    let mut summary = PipelineSummary::default();

    match config.command {
        Command::Fit => {
            let data = load(config, &mut out)?;
            let k = config.k.expect("validated");
            let fit = run_em(&data.data, &data.scales, &em_config(config, k))?;
            write_fit(&mut out, &data.data, &fit, None)?;
            results.push(("result.loglik".into(), fit.loglik().to_string()));
            results.push(("result.iterations".into(), fit.iteration.to_string()));
            results.push(("result.converged".into(), fit.converged.to_string()));
            summary.selected_k = Some(k);
            summary.n_sites = data.data.n_sites();
        }
        Command::Sweep => {
            let data = load(config, &mut out)?;
            let sweep = run_sweep(config, &data)?;
            write_bic_curve(&mut out, &sweep)?;
            write_fit(&mut out, &data.data, sweep.selected_fit(), None)?;
            results.push(("result.selected_k".into(), sweep.selected_k.to_string()));
            results.push(("result.selection_rule".into(), sweep.selection_rule.to_string()));
            summary.selected_k = Some(sweep.selected_k);
            summary.n_sites = data.data.n_sites();
        }
        Command::Subsets => {
            let data = load(config, &mut out)?;
            let j = data.data.n_sites();
            let s = config.subset_size.expect("validated");
            let plan_seed = derive_seed(config.seed, 0x5ab5);
            let plan = match config.n_subsets {
                Some(m) => plan_subsets_with_count(j, s, m, plan_seed)?,
                None => plan_subsets(j, s, config.miss_budget, plan_seed)?,
            };
            info!(
                "{} subsets of {s} sites, expected miss {:.4}%",
                plan.n_subsets,
                plan.expected_miss_pct()
            );
            let r = cluster_by_subsets(&data.data, &data.scales, &plan, &em_config(config, 1), config.k_range())?;
            write_two_stage(&mut out, &data.data, &r)?;
            results.push(("result.n_subsets".into(), plan.n_subsets.to_string()));
            results.push(("result.n_groups".into(), r.final_coefficients.len().to_string()));
            results.push(("result.conflicts_resolved".into(), r.conflicts_resolved.to_string()));
            results.push(("result.post_hoc".into(), r.post_hoc.len().to_string()));
            summary.selected_k = Some(r.final_coefficients.len());
            summary.n_sites = j;
        }
        Command::Simulate => {
            let spec = builtin_scenario(config.scenario, config.seed)?;
            let mut study = StudyConfig::new(config.replicates, config.k_range());
            study.em = em_config(config, 1);
            let report = run_mc_study(&spec, &study)?;
            write_study(&mut out, &report)?;
            results.push(("result.replicates".into(), report.replicates.len().to_string()));
            results.push(("result.failed_replicates".into(), report.failures.len().to_string()));
            summary.n_sites = spec.n_sites();
        }
        Command::Bootstrap => {
            let data = load(config, &mut out)?;
            let k = config.k.expect("validated");
            let fit = run_em(&data.data, &data.scales, &em_config(config, k))?;
            let boot = bootstrap_se(
                &data.data,
                &fit.hard_assignments(),
                &fit.coefficients,
                config.bootstrap_reps,
                config.bootstrap_mode,
                derive_seed(config.seed, 0xb007),
            )?;
            write_fit(&mut out, &data.data, &fit, Some(&boot))?;
            results.push(("result.bootstrap_used".into(), boot.n_reps.to_string()));
            results.push(("result.bootstrap_skipped".into(), boot.n_skipped.to_string()));
            summary.selected_k = Some(k);
            summary.n_sites = data.data.n_sites();
        }
    }

    results.push(("version.transmix".into(), env!("CARGO_PKG_VERSION").into()));
    out.text(MANIFEST_FILE, &render_manifest(config, &results))?;
    summary.files = out.files;
    Ok(summary)
}

/// Writes `error.json` into the output directory when it can; the same
/// record is returned for printing.
pub fn error_record(config_output: Option<&Path>, err: &CliError) -> String {
    let record = serde_json::json!({
        "error": err.kind(),
        "message": err.to_string(),
    })
    .to_string();
    if let Some(dir) = config_output {
        if dir.is_dir() {
            let _ = fs::write(dir.join("error.json"), &record);
        }
    }
    record
}
