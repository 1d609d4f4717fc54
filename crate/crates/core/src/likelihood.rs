//! Capture histories and the conditional likelihood.
//!
//! The likelihood of the observed histories given that `n` individuals were
//! seen is `prod_i f(w_i) / p`, where `f(w_i)` integrates the history density
//! over a uniform activity-centre prior and `p` is the probability of at
//! least one detection. Neither depends on the population size.
//!
//! Two evaluation routes exist. The free functions evaluate one activity
//! centre at a time through [`crate::hazard`]; [`Likelihood`] evaluates whole
//! mesh surfaces through [`crate::kernel`] and is what fitting uses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, SpatialMesh, SurveyWindow, TrapArray};
use crate::hazard::{cumulative_limiting_hazard, ModelParams};
use crate::kernel::{MeshKernel, Scratch};
use crate::model::model_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Days since the start of the survey.
    pub time: f64,
    /// Index into the trap array.
    pub trap: usize,
}

/// One individual's detections, strictly increasing in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureHistory {
    pub individual_id: String,
    detections: Vec<Detection>,
}

impl CaptureHistory {
    pub fn new(individual_id: impl Into<String>, detections: Vec<Detection>) -> Result<Self> {
        let individual_id = individual_id.into();
        if detections.is_empty() {
            return Err(Error::data(format!("individual {individual_id} has no detections")));
        }
        for w in detections.windows(2) {
            if !(w[1].time > w[0].time) {
                return Err(Error::data(format!(
                    "individual {individual_id}: detection times must be strictly increasing ({} then {})",
                    w[0].time, w[1].time
                )));
            }
        }
        Ok(CaptureHistory { individual_id, detections })
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    /// Checks trap indices and that every time lies in `(0, T]`.
    pub fn validate(&self, traps: &TrapArray, window: &SurveyWindow) -> Result<()> {
        for d in &self.detections {
            if d.trap >= traps.len() {
                return Err(Error::data(format!(
                    "individual {}: trap index {} out of range",
                    self.individual_id, d.trap
                )));
            }
            if !(d.time > 0.0 && d.time <= window.t_end()) || !d.time.is_finite() {
                return Err(Error::data(format!(
                    "individual {}: detection time {} outside (0, {}]",
                    self.individual_id,
                    d.time,
                    window.t_end()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    histories: Vec<CaptureHistory>,
    traps: TrapArray,
    window: SurveyWindow,
}

impl Dataset {
    pub fn new(histories: Vec<CaptureHistory>, traps: TrapArray, window: SurveyWindow) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for h in &histories {
            if !seen.insert(h.individual_id.as_str()) {
                return Err(Error::data(format!("duplicate individual id {}", h.individual_id)));
            }
            h.validate(&traps, &window)?;
        }
        Ok(Dataset { histories, traps, window })
    }

    pub fn histories(&self) -> &[CaptureHistory] {
        &self.histories
    }

    pub fn traps(&self) -> &TrapArray {
        &self.traps
    }

    pub fn window(&self) -> SurveyWindow {
        self.window
    }

    /// Number of observed individuals.
    pub fn n(&self) -> usize {
        self.histories.len()
    }

    pub fn total_detections(&self) -> usize {
        self.histories.iter().map(CaptureHistory::len).sum()
    }

    pub fn history(&self, id: &str) -> Option<&CaptureHistory> {
        self.histories.iter().find(|h| h.individual_id == id)
    }

    /// Same data with traps shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Dataset {
            histories: self.histories.clone(),
            traps: self.traps.translated(dx, dy),
            window: self.window,
        }
    }
}

/// Max-shifted log-sum-exp, summed in index order.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// History density `f(w_i; s, theta)` at a single activity centre.
pub fn history_density_given_ac(
    history: &CaptureHistory,
    s: Point,
    params: &ModelParams,
    traps: &TrapArray,
    window: &SurveyWindow,
    b: usize,
) -> Result<f64> {
    history.validate(traps, window)?;
    model_for(params.kind)
        .log_density_at(history, s, params, traps, window, b)
        .map(f64::exp)
}

/// `f(w_i; theta)`: the history density averaged over the mesh, one point at a time.
pub fn marginal_history_density(
    history: &CaptureHistory,
    params: &ModelParams,
    traps: &TrapArray,
    mesh: &SpatialMesh,
    window: &SurveyWindow,
    b: usize,
) -> Result<f64> {
    history.validate(traps, window)?;
    let model = model_for(params.kind);
    let logs = mesh
        .points()
        .iter()
        .map(|&s| model.log_density_at(history, s, params, traps, window, b))
        .collect::<Result<Vec<_>>>()?;
    Ok((log_sum_exp(&logs) + (mesh.cell_area() / mesh.total_area()).ln()).exp())
}

/// `p(theta; s)`: probability of at least one detection during the survey.
pub fn detect_prob_given_ac(s: Point, params: &ModelParams, traps: &TrapArray, window: &SurveyWindow) -> f64 {
    -(-window.t_end() * cumulative_limiting_hazard(s, params, traps)).exp_m1()
}

/// `p(theta)`: detection probability averaged over the mesh.
pub fn detect_prob(params: &ModelParams, traps: &TrapArray, mesh: &SpatialMesh, window: &SurveyWindow) -> f64 {
    let sum: f64 = mesh
        .points()
        .iter()
        .map(|&s| detect_prob_given_ac(s, params, traps, window))
        .sum();
    sum * mesh.cell_area() / mesh.total_area()
}

/// Negative conditional log-likelihood, one-off evaluation.
pub fn neg_log_likelihood(dataset: &Dataset, params: &ModelParams, mesh: &SpatialMesh, b: usize) -> Result<f64> {
    params.validate()?;
    Ok(Likelihood::new(dataset, mesh, b)?.neg_log_likelihood(params))
}

/// Mesh-surface evaluator for one dataset, mesh and time resolution.
#[derive(Debug)]
pub struct Likelihood<'a> {
    dataset: &'a Dataset,
    mesh: &'a SpatialMesh,
    kernel: MeshKernel,
    b: usize,
}

impl<'a> Likelihood<'a> {
    pub fn new(dataset: &'a Dataset, mesh: &'a SpatialMesh, b: usize) -> Result<Self> {
        if dataset.n() == 0 {
            return Err(Error::data("dataset has no observed individuals"));
        }
        if b == 0 {
            return Err(Error::config("number of time intervals B must be at least 1"));
        }
        Ok(Likelihood {
            dataset,
            mesh,
            kernel: MeshKernel::new(dataset.traps(), mesh),
            b,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn mesh(&self) -> &SpatialMesh {
        self.mesh
    }

    pub fn b(&self) -> usize {
        self.b
    }

    fn limiting(&self, params: &ModelParams) -> Vec<f64> {
        self.kernel.limiting_surface(params.h0, params.sigma2, &mut Scratch::default())
    }

    /// `p(theta)` via the mesh kernel.
    pub fn detect_prob(&self, params: &ModelParams) -> f64 {
        let t = self.dataset.window().t_end();
        let lim = self.limiting(params);
        let sum: f64 = lim.iter().map(|h| -(-t * h).exp_m1()).sum();
        sum / lim.len() as f64
    }

    fn surface_with(&self, i: usize, params: &ModelParams, limiting: &[f64]) -> Vec<f64> {
        let ctx = crate::model::SurfaceContext {
            kernel: &self.kernel,
            window: self.dataset.window(),
            b: self.b,
            limiting,
        };
        model_for(params.kind).log_density_surface(&self.dataset.histories()[i], params, &ctx)
    }

    /// `log f(w_i; s_m, theta)` for every mesh point `s_m`.
    pub fn log_surface(&self, i: usize, params: &ModelParams) -> Vec<f64> {
        self.surface_with(i, params, &self.limiting(params))
    }

    /// `log f(w_i; theta)`.
    pub fn log_marginal(&self, i: usize, params: &ModelParams) -> f64 {
        let lim = self.limiting(params);
        log_sum_exp(&self.surface_with(i, params, &lim)) - (self.mesh.len() as f64).ln()
    }

    /// `-sum_i [log f(w_i) - log p]`; `+inf` for invalid parameters or underflow.
    pub fn neg_log_likelihood(&self, params: &ModelParams) -> f64 {
        if params.validate().is_err() {
            return f64::INFINITY;
        }
        let lim = self.limiting(params);
        let t = self.dataset.window().t_end();
        let p = lim.iter().map(|h| -(-t * h).exp_m1()).sum::<f64>() / lim.len() as f64;
        if !(p > 0.0) {
            return f64::INFINITY;
        }
        let log_m = (self.mesh.len() as f64).ln();
        let per_individual: Vec<f64> = (0..self.dataset.n())
            .into_par_iter()
            .map(|i| log_sum_exp(&self.surface_with(i, params, &lim)) - log_m)
            .collect();
        let log_p = p.ln();
        let mut total = 0.0;
        for lf in per_individual {
            if !lf.is_finite() {
                return f64::INFINITY;
            }
            total += lf - log_p;
        }
        -total
    }
}
