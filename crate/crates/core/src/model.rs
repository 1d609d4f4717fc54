//! Detection models behind a common trait, looked up by name.
//!
//! A [`DetectionModel`] knows its parameterisation (on the log scale used by
//! the optimiser) and how to evaluate the log history density, both at a
//! single activity centre and over a whole mesh. [`ModelRegistry`] maps model
//! names to implementations so the front end can select them at runtime.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{Point, SurveyWindow, TrapArray};
use crate::hazard::{
    cumulative_limiting_hazard, log_hazard, log_survival, MemoryState, ModelKind, ModelParams, TimeGrid,
};
use crate::kernel::{KernelTerm, MeshKernel, Scratch};
use crate::likelihood::CaptureHistory;

/// Everything a model needs to evaluate mesh surfaces.
pub struct SurfaceContext<'a> {
    pub kernel: &'a MeshKernel,
    pub window: SurveyWindow,
    /// Global number of time intervals over `[0, T]`.
    pub b: usize,
    /// Cumulative half-normal hazard at every mesh point for the current parameters.
    pub limiting: &'a [f64],
}

pub trait DetectionModel: Debug + Send + Sync {
    fn kind(&self) -> ModelKind;

    fn name(&self) -> &'static str {
        self.kind().name()
    }

    fn description(&self) -> &'static str;

    /// Names of the free parameters, in optimiser order.
    fn param_names(&self) -> &'static [&'static str];

    /// Parameter count used for AIC.
    fn aic_parameter_count(&self) -> usize;

    /// Maps log-scale free parameters to model parameters.
    fn params_from_log(&self, x: &[f64]) -> ModelParams;

    /// Log-scale free parameters for `params`.
    fn log_params(&self, params: &ModelParams) -> Vec<f64>;

    /// `log f(w; s, theta)` at one activity centre.
    fn log_density_at(
        &self,
        history: &CaptureHistory,
        s: Point,
        params: &ModelParams,
        traps: &TrapArray,
        window: &SurveyWindow,
        b: usize,
    ) -> Result<f64>;

    /// `log f(w; s_m, theta)` at every mesh point.
    fn log_density_surface(&self, history: &CaptureHistory, params: &ModelParams, ctx: &SurfaceContext<'_>) -> Vec<f64>;
}

/// Hazards with memory of the last detection (OU-type kernel).
#[derive(Debug, Clone, Copy, Default)]
pub struct MemoryModel;

/// Standard continuous-time SCR: half-normal hazard throughout.
#[derive(Debug, Clone, Copy, Default)]
pub struct HalfNormalModel;

static MEMORY_MODEL: MemoryModel = MemoryModel;
static HALF_NORMAL_MODEL: HalfNormalModel = HalfNormalModel;

/// The built-in implementation for `kind`.
pub fn model_for(kind: ModelKind) -> &'static dyn DetectionModel {
    match kind {
        ModelKind::Mscr => &MEMORY_MODEL,
        ModelKind::Scr => &HALF_NORMAL_MODEL,
    }
}

impl DetectionModel for MemoryModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Mscr
    }

    fn description(&self) -> &'static str {
        "memory SCR: OU-type hazard anchored at the last detection"
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["h0", "sigma2", "beta"]
    }

    fn aic_parameter_count(&self) -> usize {
        3
    }

    fn params_from_log(&self, x: &[f64]) -> ModelParams {
        ModelParams::mscr(x[0].exp(), x[1].exp(), x[2].exp())
    }

    fn log_params(&self, p: &ModelParams) -> Vec<f64> {
        vec![p.h0.ln(), p.sigma2.ln(), p.beta.ln()]
    }

    fn log_density_at(
        &self,
        history: &CaptureHistory,
        s: Point,
        params: &ModelParams,
        traps: &TrapArray,
        window: &SurveyWindow,
        b: usize,
    ) -> Result<f64> {
        let t_end = window.t_end();
        let d = history.detections();
        let first = d[0];
        let mut logf = -first.time * cumulative_limiting_hazard(s, params, traps)
            + log_hazard(traps.location(first.trap), first.time, s, None, params)?;
        let mut mem = MemoryState::new(traps.location(first.trap), first.time);
        for det in &d[1..] {
            let grid = TimeGrid::for_interval(mem.time, det.time, t_end, b)?;
            logf += log_survival(mem.time, det.time, s, Some(&mem), params, traps, &grid)?;
            let z = traps.location(det.trap);
            logf += log_hazard(z, det.time, s, Some(&mem), params)?;
            mem = MemoryState::new(z, det.time);
        }
        if mem.time < t_end {
            let grid = TimeGrid::for_interval(mem.time, t_end, t_end, b)?;
            logf += log_survival(mem.time, t_end, s, Some(&mem), params, traps, &grid)?;
        }
        Ok(logf)
    }

    fn log_density_surface(&self, history: &CaptureHistory, params: &ModelParams, ctx: &SurfaceContext<'_>) -> Vec<f64> {
        let kernel = ctx.kernel;
        let t_end = ctx.window.t_end();
        let log_h0 = params.h0.ln();
        let mut scratch = Scratch::default();
        let d = history.detections();
        let first = d[0];

        let mut logf: Vec<f64> = ctx.limiting.iter().map(|h| log_h0 - first.time * h).collect();
        kernel.add_log_kernel(&mut logf, first.trap, &KernelTerm::limiting(params.sigma2), &mut scratch);

        // integrated cumulative hazard after the first detection
        let mut integral = vec![0.0; kernel.len()];
        let mut mem = MemoryState::new(kernel.trap(first.trap), first.time);
        let integrate =|mem: &MemoryState, until: f64, integral: &mut Vec<f64>, scratch: &mut Scratch| {
            let n = crate::hazard::intervals_for(until - mem.time, t_end, ctx.b);
            let grid = TimeGrid::new(mem.time, until, n).expect("ordered interval");
            for (eta, width) in grid.cells() {
                let term = KernelTerm::after(mem, eta, params.sigma2, params.beta);
                kernel.add_cumulative(integral, params.h0 * width, &term, scratch);
            }
        };
        for det in &d[1..] {
            integrate(&mem, det.time, &mut integral, &mut scratch);
            let term = KernelTerm::after(&mem, det.time, params.sigma2, params.beta);
            kernel.add_log_kernel(&mut logf, det.trap, &term, &mut scratch);
            mem = MemoryState::new(kernel.trap(det.trap), det.time);
        }
        if mem.time < t_end {
            integrate(&mem, t_end, &mut integral, &mut scratch);
        }
        let extra = log_h0 * (d.len() - 1) as f64;
        for (l, i) in logf.iter_mut().zip(&integral) {
            *l += extra - i;
        }
        logf
    }
}

impl DetectionModel for HalfNormalModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Scr
    }

    fn description(&self) -> &'static str {
        "standard continuous-time SCR: half-normal hazard"
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["h0", "sigma2"]
    }

    fn aic_parameter_count(&self) -> usize {
        2
    }

    fn params_from_log(&self, x: &[f64]) -> ModelParams {
        ModelParams::scr(x[0].exp(), x[1].exp())
    }

    fn log_params(&self, p: &ModelParams) -> Vec<f64> {
        vec![p.h0.ln(), p.sigma2.ln()]
    }

    fn log_density_at(
        &self,
        history: &CaptureHistory,
        s: Point,
        params: &ModelParams,
        traps: &TrapArray,
        window: &SurveyWindow,
        _b: usize,
    ) -> Result<f64> {
        let mut logf = -window.t_end() * cumulative_limiting_hazard(s, params, traps);
        for det in history.detections() {
            logf += log_hazard(traps.location(det.trap), det.time, s, None, params)?;
        }
        Ok(logf)
    }

    fn log_density_surface(&self, history: &CaptureHistory, params: &ModelParams, ctx: &SurfaceContext<'_>) -> Vec<f64> {
        let t_end = ctx.window.t_end();
        let base = params.h0.ln() * history.len() as f64;
        let mut logf: Vec<f64> = ctx.limiting.iter().map(|h| base - t_end * h).collect();
        let term = KernelTerm::limiting(params.sigma2);
        let mut scratch = Scratch::default();
        for det in history.detections() {
            ctx.kernel.add_log_kernel(&mut logf, det.trap, &term, &mut scratch);
        }
        logf
    }
}

/// Name-keyed collection of detection models. Lookup is case-insensitive.
#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    models: BTreeMap<String, Arc<dyn DetectionModel>>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        ModelRegistry::default()
    }

    /// Registry holding the MSCR and SCR models.
    pub fn with_defaults() -> Self {
        let mut r = ModelRegistry::new();
        r.register(Arc::new(MemoryModel));
        r.register(Arc::new(HalfNormalModel));
        r
    }

    pub fn register(&mut self, model: Arc<dyn DetectionModel>) {
        self.models.insert(model.name().to_ascii_uppercase(), model);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn DetectionModel>> {
        self.models.get(&name.to_ascii_uppercase()).cloned().ok_or_else(|| {
            Error::config(format!(
                "unknown model {name:?}; available: {}",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lookup() {
        let r = ModelRegistry::with_defaults();
        assert_eq!(r.names(), vec!["MSCR".to_string(), "SCR".to_string()]);
        assert_eq!(r.get("mscr").unwrap().kind(), ModelKind::Mscr);
        assert_eq!(r.get("Scr").unwrap().aic_parameter_count(), 2);
        assert!(r.get("lévy").is_err());
    }

    #[test]
    fn log_param_round_trip() {
        let p = ModelParams::mscr(1.65, 0.22, 0.37);
        let m = model_for(ModelKind::Mscr);
        let q = m.params_from_log(&m.log_params(&p));
        assert!((q.h0 - p.h0).abs() < 1e-15 && (q.sigma2 - p.sigma2).abs() < 1e-15 && (q.beta - p.beta).abs() < 1e-15);
        let m = model_for(ModelKind::Scr);
        assert_eq!(m.log_params(&p).len(), 2);
    }
}
