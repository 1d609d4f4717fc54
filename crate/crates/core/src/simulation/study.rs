use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generators::{simulate, SimConfig, SimModel};
use crate::error::{Error, Result};
use crate::geometry::build_mesh;
use crate::hazard::ModelKind;
use crate::inference::{fit_with, FitOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub replicates: usize,
    pub kinds: Vec<ModelKind>,
    pub mesh_buffer: f64,
    pub mesh_spacing: f64,
    pub b: usize,
    pub level: f64,
}

/// What one model fit to one replicate produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFit {
    pub kind: ModelKind,
    pub converged: bool,
    pub error: Option<String>,
    pub n_hat: Option<f64>,
    pub se_n: Option<f64>,
    pub ci_n: Option<(f64, f64)>,
    pub ci_n_wald: Option<(f64, f64)>,
    /// Natural-scale estimates in model parameter order.
    pub params: Vec<f64>,
    pub se_params: Option<Vec<f64>>,
    pub ci_params: Option<Vec<(f64, f64)>>,
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub n_observed: usize,
    pub captures: usize,
    pub fits: Vec<ReplicateFit>,
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: ModelKind,
    pub parameter: String,
    /// Absent when the generator has no counterpart for the parameter.
    pub truth: Option<f64>,
    pub mean_estimate: f64,
    pub sd_estimate: f64,
    pub mean_se: Option<f64>,
    pub pct_bias: Option<f64>,
    pub mean_ci_width: Option<f64>,
    pub pct_coverage: Option<f64>,
    pub rmse: Option<f64>,
    /// Abundance only: the same metrics for the symmetric Wald interval.
    pub mean_ci_width_wald: Option<f64>,
    pub pct_coverage_wald: Option<f64>,
    /// Replicates contributing to the row.
    pub used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataProfile {
    pub replicates: usize,
    pub mean_observed_fraction: f64,
    /// Mean over replicates with at least one observed individual.
    pub mean_detections_per_observed: f64,
    pub mean_captures: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusions {
    pub model: ModelKind,
    pub failed: usize,
    pub not_converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyReport {
    pub config: StudyConfig,
    pub replicates: usize,
    pub profile: DataProfile,
    pub rows: Vec<SummaryRow>,
    pub excluded: Vec<Exclusions>,
    pub replicate_results: Vec<ReplicateResult>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn profile_of(n_true: usize, counts: &[(usize, usize)]) -> DataProfile {
    let fractions: Vec<f64> = counts.iter().map(|(n, _)| *n as f64 / n_true.max(1) as f64).collect();
    let per: Vec<f64> = counts.iter().filter(|(n, _)| *n > 0).map(|(n, c)| *c as f64 / *n as f64).collect();
    let captures: Vec<f64> = counts.iter().map(|(_, c)| *c as f64).collect();
    DataProfile {
        replicates: counts.len(),
        mean_observed_fraction: mean(&fractions),
        mean_detections_per_observed: if per.is_empty() { 0.0 } else { mean(&per) },
        mean_captures: mean(&captures),
    }
}

/// Simulates `replicates` datasets and summarises their size.
pub fn profile(config: &SimConfig, replicates: usize) -> Result<DataProfile> {
    if replicates == 0 {
        return Err(Error::config("replicates must be at least 1"));
    }
    let counts = (0..replicates)
        .into_par_iter()
        .map(|r| simulate(config, r as u64).map(|d| (d.n_observed(), d.captures())))
        .collect::<Result<Vec<_>>>()?;
    Ok(profile_of(config.n_true, &counts))
}

fn failed(kind: ModelKind, message: String) -> ReplicateFit {
    ReplicateFit {
        kind,
        converged: false,
        error: Some(message),
        n_hat: None,
        se_n: None,
        ci_n: None,
        ci_n_wald: None,
        params: Vec::new(),
        se_params: None,
        ci_params: None,
        loglik: None,
        aic: None,
    }
}

fn truth_for(model: &SimModel, kind: ModelKind, parameter: &str) -> Option<f64> {
    match (model, parameter) {
        (SimModel::Mscr { h0, .. }, "h0") => Some(*h0),
        (SimModel::Mscr { sigma2, .. }, "sigma2") => Some(*sigma2),
        (SimModel::Mscr { beta, .. }, "beta") if kind == ModelKind::Mscr => Some(*beta),
        _ => None,
    }
}

/// Estimate, SE, interval and Wald interval from one replicate.
type Draw = (f64, Option<f64>, Option<(f64, f64)>, Option<(f64, f64)>);

fn summarise(
    kind: ModelKind,
    parameter: &str,
    truth: Option<f64>,
    draws: &[Draw],
) -> Option<SummaryRow> {
    if draws.is_empty() {
        return None;
    }
    let est: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let m = mean(&est);
    let sd = if est.len() > 1 {
        (est.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let ses: Vec<f64> = draws.iter().filter_map(|d| d.1).collect();
    let widths = |cis: &Vec<(f64, f64)>| (!cis.is_empty()).then(|| mean(&cis.iter().map(|c| c.1 - c.0).collect::<Vec<_>>()));
    let cover = |cis: &Vec<(f64, f64)>| {
        truth.filter(|_| !cis.is_empty()).map(|t| {
            100.0 * cis.iter().filter(|c| c.0 <= t && t <= c.1).count() as f64 / cis.len() as f64
        })
    };
    let cis: Vec<(f64, f64)> = draws.iter().filter_map(|d| d.2).collect();
    let wald: Vec<(f64, f64)> = draws.iter().filter_map(|d| d.3).collect();
    Some(SummaryRow {
        model: kind,
        parameter: parameter.to_string(),
        truth,
        mean_estimate: m,
        sd_estimate: sd,
        mean_se: (!ses.is_empty()).then(|| mean(&ses)),
        pct_bias: truth.map(|t| 100.0 * (m - t) / t),
        mean_ci_width: widths(&cis),
        pct_coverage: cover(&cis),
        rmse: truth.map(|t| mean(&est.iter().map(|e| (e - t).powi(2)).collect::<Vec<_>>()).sqrt()),
        mean_ci_width_wald: widths(&wald),
        pct_coverage_wald: cover(&wald),
        used: draws.len(),
    })
}

/// Simulates, fits every requested model to each replicate and summarises.
///
/// Replicates that fail or do not converge are kept in the raw results but
/// excluded from the summary rows; their counts are reported.
pub fn run_sim_study(config: &StudyConfig) -> Result<SimStudyReport> {
    if config.replicates == 0 {
        return Err(Error::config("replicates must be at least 1"));
    }
    if config.kinds.is_empty() {
        return Err(Error::config("at least one model kind is required"));
    }
    let mesh = build_mesh(&config.sim.traps, config.mesh_buffer, config.mesh_spacing)?;
    let options = FitOptions { level: config.level, ..FitOptions::default() };
    let results = (0..config.replicates)
        .into_par_iter()
        .map(|r| -> Result<ReplicateResult> {
            let data = simulate(&config.sim, r as u64)?;
            let fits = config
                .kinds
                .iter()
                .map(|&kind| {
                    if data.n_observed() == 0 {
                        return failed(kind, "no individuals observed".into());
                    }
                    match fit_with(&data.dataset, kind, &mesh, config.b, None, &options) {
                        Ok(f) => ReplicateFit {
                            kind,
                            converged: f.converged,
                            error: None,
                            n_hat: Some(f.n_hat),
                            se_n: Some(f.se_n),
                            ci_n: Some(f.ci_n),
                            ci_n_wald: Some(f.ci_n_wald),
                            params: f.log_params_hat.iter().map(|v| v.exp()).collect(),
                            se_params: f.se_params,
                            ci_params: f.ci_params,
                            loglik: Some(f.loglik),
                            aic: Some(f.aic),
                        },
                        Err(e) => {
                            log::warn!("replicate {r}, {kind}: {e}");
                            failed(kind, e.to_string())
                        }
                    }
                })
                .collect();
            log::info!("replicate {r} done: n = {}", data.n_observed());
            Ok(ReplicateResult {
                replicate: r,
                n_observed: data.n_observed(),
                captures: data.captures(),
                fits,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let counts: Vec<(usize, usize)> = results.iter().map(|r| (r.n_observed, r.captures)).collect();
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for &kind in &config.kinds {
        let fits: Vec<&ReplicateFit> = results.iter().filter_map(|r| r.fits.iter().find(|f| f.kind == kind)).collect();
        excluded.push(Exclusions {
            model: kind,
            failed: fits.iter().filter(|f| f.error.is_some()).count(),
            not_converged: fits.iter().filter(|f| f.error.is_none() && !f.converged).count(),
        });
        let good: Vec<&&ReplicateFit> = fits.iter().filter(|f| f.converged).collect();
        let draws: Vec<_> = good
            .iter()
            .filter_map(|f| Some((f.n_hat?, f.se_n, f.ci_n, f.ci_n_wald)))
            .collect();
        rows.extend(summarise(kind, "N", Some(config.sim.n_true as f64), &draws));
        for (j, name) in crate::model::model_for(kind).param_names().iter().enumerate() {
            let draws: Vec<_> = good
                .iter()
                .map(|f| {
                    (
                        f.params[j],
                        f.se_params.as_ref().map(|s| s[j]),
                        f.ci_params.as_ref().map(|c| c[j]),
                        None,
                    )
                })
                .collect();
            rows.extend(summarise(kind, name, truth_for(&config.sim.model, kind, name), &draws));
        }
    }
    Ok(SimStudyReport {
        config: config.clone(),
        replicates: config.replicates,
        profile: profile_of(config.sim.n_true, &counts),
        rows,
        excluded,
        replicate_results: results,
    })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

impl SimStudyReport {
    /// Aligned text table, one row per model and parameter.
    pub fn table(&self) -> String {
        let pct = format!("{:.0}", 100.0 * self.config.level);
        let header = [
            "Model".to_string(),
            "Parameter".to_string(),
            "Truth".to_string(),
            "Estimate (SE)".to_string(),
            "% Bias".to_string(),
            format!("{pct}% CI Width"),
            "% Coverage".to_string(),
            "RMSE".to_string(),
        ];
        let mut cells = vec![header.to_vec()];
        for r in &self.rows {
            cells.push(vec![
                r.model.to_string(),
                r.parameter.clone(),
                fmt_opt(r.truth, 2),
                format!("{:.2} ({})", r.mean_estimate, fmt_opt(r.mean_se, 2)),
                fmt_opt(r.pct_bias, 1),
                fmt_opt(r.mean_ci_width, 2),
                fmt_opt(r.pct_coverage, 0),
                fmt_opt(r.rmse, 2),
            ]);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "replicates: {}; mean observed fraction {:.3}; mean detections per observed individual {:.2}; mean captures {:.1}",
            self.replicates,
            self.profile.mean_observed_fraction,
            self.profile.mean_detections_per_observed,
            self.profile.mean_captures
        );
        for r in self.rows.iter().filter(|r| r.pct_coverage_wald.is_some()) {
            let _ = writeln!(
                out,
                "{} N: log-normal coverage {}%, Wald coverage {}% (width {})",
                r.model,
                fmt_opt(r.pct_coverage, 0),
                fmt_opt(r.pct_coverage_wald, 0),
                fmt_opt(r.mean_ci_width_wald, 2)
            );
        }
        for e in &self.excluded {
            let _ = writeln!(
                out,
                "{}: excluded {} failed and {} non-converged replicates",
                e.model, e.failed, e.not_converged
            );
        }
        out
    }
}
