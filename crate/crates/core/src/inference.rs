//! Maximum-likelihood fitting and abundance estimation.
//!
//! Fitting is conditional: hazard parameters are estimated from the
//! likelihood of the observed histories given `n`, then abundance follows
//! from the Horvitz-Thompson step `N = n / p(theta)`. Its variance adds the
//! delta-method term for `theta` to the binomial variance of `n`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::geometry::{Point, SpatialMesh, SurveyWindow, TrapArray};
use crate::hazard::{ModelKind, ModelParams};
use crate::kernel::{MeshKernel, Scratch};
use crate::likelihood::{detect_prob, log_sum_exp, CaptureHistory, Dataset, Likelihood};
use crate::model::{model_for, SurfaceContext};
use crate::optim::{gradient, hessian, Bfgs, NelderMead, Objective};

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub simplex: NelderMead,
    pub bfgs: Bfgs,
    /// Relative central-difference step for gradients (log scale).
    pub gradient_step: f64,
    /// Relative central-difference step for the Hessian (log scale).
    pub hessian_step: f64,
    /// Maximum Newton refinements after BFGS.
    pub newton_steps: usize,
    /// A fit only counts as converged if `max |gradient|` is below this.
    pub converged_gradient: f64,
    /// Confidence level for all intervals.
    pub level: f64,
    /// Divides each log-parameter before it reaches the optimiser.
    pub param_scale: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            simplex: NelderMead {
                initial_step: 0.5,
                max_evaluations: 400,
                ftol: 1e-8,
                xtol: 1e-4,
            },
            bfgs: Bfgs {
                max_iterations: 100,
                gtol: 1e-6,
                gradient_step: 1e-4,
            },
            gradient_step: 1e-4,
            hessian_step: 1e-3,
            newton_steps: 3,
            converged_gradient: 1e-4,
            level: 0.95,
            param_scale: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureInfo {
    pub time_intervals_b: usize,
    pub mesh_spacing_km: f64,
    pub mesh_points: usize,
    pub buffer_km: f64,
    pub area_km2: f64,
}

impl QuadratureInfo {
    pub fn new(mesh: &SpatialMesh, b: usize) -> Self {
        QuadratureInfo {
            time_intervals_b: b,
            mesh_spacing_km: mesh.spacing(),
            mesh_points: mesh.len(),
            buffer_km: mesh.buffer(),
            area_km2: mesh.total_area(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: ModelKind,
    pub params_hat: ModelParams,
    pub param_names: Vec<String>,
    pub log_params_hat: Vec<f64>,
    /// Covariance of the log-parameters (inverse finite-difference Hessian).
    pub cov_params: Option<Vec<Vec<f64>>>,
    /// Natural-scale standard errors, delta-mapped from `cov_params`.
    pub se_params: Option<Vec<f64>>,
    pub ci_params: Option<Vec<(f64, f64)>>,
    pub ci_params_method: String,
    pub loglik: f64,
    pub aic: f64,
    pub aic_parameter_count: usize,
    pub n_observed: usize,
    pub p_hat: f64,
    pub n_hat: f64,
    pub var_n: f64,
    pub se_n: f64,
    /// True when `var_n` holds only the binomial term.
    pub var_n_partial: bool,
    pub ci_n: (f64, f64),
    pub ci_n_method: String,
    pub ci_n_wald: (f64, f64),
    pub level: f64,
    pub converged: bool,
    pub max_abs_gradient: f64,
    pub evaluations: usize,
    pub quadrature: QuadratureInfo,
    pub warnings: Vec<String>,
}

/// Two-sided standard-normal quantile for confidence `level`.
pub fn normal_quantile(level: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + 0.5 * level)
}

/// Scale-aware starting values when the caller gives none.
pub fn default_init(dataset: &Dataset, kind: ModelKind) -> ModelParams {
    let n = dataset.n().max(1) as f64;
    let h0 = (dataset.total_detections() as f64 / (n * dataset.window().t_end())).max(1e-3);
    let traps = dataset.traps();
    let mut ss = 0.0;
    let mut count = 0usize;
    for h in dataset.histories() {
        let locs: Vec<Point> = h.detections().iter().map(|d| traps.location(d.trap)).collect();
        let cx = locs.iter().map(|p| p.x).sum::<f64>() / locs.len() as f64;
        let cy = locs.iter().map(|p| p.y).sum::<f64>() / locs.len() as f64;
        let c = Point::new(cx, cy);
        ss += locs.iter().map(|p| p.dist2(&c)).sum::<f64>();
        count += locs.len();
    }
    let mut sigma2 = if count > 0 { ss / count as f64 } else { 0.0 };
    if !(sigma2 > 1e-12) {
        let span = traps.span();
        sigma2 = if span > 0.0 { 0.1 * span * span } else { 1.0 };
    }
    match kind {
        ModelKind::Mscr => ModelParams::mscr(h0, sigma2, 1.0),
        ModelKind::Scr => ModelParams::scr(h0, sigma2),
    }
}

/// `N = n / p`.
pub fn ht_abundance(n: usize, p_hat: f64) -> Result<f64> {
    if !(p_hat > 0.0 && p_hat <= 1.0) {
        return Err(Error::domain(format!("detection probability must lie in (0, 1], got {p_hat}")));
    }
    if n == 0 {
        log::warn!("no observed individuals; abundance estimate is 0");
    }
    Ok(n as f64 / p_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HtVariance {
    pub total: f64,
    pub delta_term: f64,
    pub binomial_term: f64,
    /// Covariance was unavailable; only the binomial term is included.
    pub partial: bool,
}

/// Variance of the Horvitz-Thompson abundance estimate.
///
/// `cov_log_params` is the covariance of the log-parameters; the derivative
/// of `n / p(theta)` is taken by central differences on the same scale.
pub fn ht_variance(
    n: usize,
    params_hat: &ModelParams,
    cov_log_params: Option<&[Vec<f64>]>,
    mesh: &SpatialMesh,
    traps: &TrapArray,
    window: &SurveyWindow,
    rel_step: f64,
) -> Result<HtVariance> {
    let p = detect_prob(params_hat, traps, mesh, window);
    if !(p > 0.0) {
        return Err(Error::Numerical("detection probability is zero at the estimate".into()));
    }
    let nf = n as f64;
    let binomial_term = nf * (1.0 - p) / (p * p);
    let Some(cov) = cov_log_params else {
        return Ok(HtVariance { total: binomial_term, delta_term: 0.0, binomial_term, partial: true });
    };
    let model = model_for(params_hat.kind);
    let x = model.log_params(params_hat);
    if cov.len() != x.len() || cov.iter().any(|r| r.len() != x.len()) {
        return Err(Error::config(format!("covariance must be {0}x{0}", x.len())));
    }
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = rel_step * x[i].abs().max(1.0);
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        let np = nf / detect_prob(&model.params_from_log(&xp), traps, mesh, window);
        let nm = nf / detect_prob(&model.params_from_log(&xm), traps, mesh, window);
        grad[i] = (np - nm) / (2.0 * h);
    }
    let mut delta_term = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            delta_term += grad[i] * cov[i][j] * grad[j];
        }
    }
    Ok(HtVariance {
        total: delta_term + binomial_term,
        delta_term,
        binomial_term,
        partial: false,
    })
}

/// Log-normal interval `(N / C, N * C)` with `C = exp(z sqrt(ln(1 + var / N^2)))`.
#[allow(non_snake_case)]
pub fn lognormal_ci_N(n_hat: f64, var_n: f64, level: f64) -> (f64, f64) {
    let c = (normal_quantile(level) * (1.0 + var_n / (n_hat * n_hat)).ln().sqrt()).exp();
    (n_hat / c, n_hat * c)
}

/// Symmetric Wald interval for `N`.
#[allow(non_snake_case)]
pub fn wald_ci_N(n_hat: f64, var_n: f64, level: f64) -> (f64, f64) {
    let half = normal_quantile(level) * var_n.sqrt();
    (n_hat - half, n_hat + half)
}

pub fn aic(loglik: f64, k: usize) -> f64 {
    2.0 * k as f64 - 2.0 * loglik
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Inverse of a symmetric positive-definite matrix, or `None`.
fn spd_inverse(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = 0.5 * (h + h.transpose());
    let inv = sym.cholesky()?.inverse();
    inv.iter().all(|v| v.is_finite()).then(|| 0.5 * (&inv + inv.transpose()))
}

pub fn fit(
    dataset: &Dataset,
    kind: ModelKind,
    mesh: &SpatialMesh,
    b: usize,
    init: Option<ModelParams>,
) -> Result<FitResult> {
    fit_with(dataset, kind, mesh, b, init, &FitOptions::default())
}

/// Maximises the conditional likelihood for `kind` and derives abundance.
///
/// Never fails on non-convergence: the result is flagged instead.
pub fn fit_with(
    dataset: &Dataset,
    kind: ModelKind,
    mesh: &SpatialMesh,
    b: usize,
    init: Option<ModelParams>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if dataset.n() == 0 {
        return Err(Error::data("cannot fit a dataset with no observed individuals"));
    }
    let lik = Likelihood::new(dataset, mesh, b)?;
    let model = model_for(kind);
    let mut warnings = Vec::new();
    if kind == ModelKind::Mscr && dataset.histories().iter().all(|h| h.len() < 2) {
        warnings.push("no individual was detected more than once; beta is weakly identified".to_string());
    }
    let init = match init {
        Some(p) => ModelParams { kind, ..p },
        None => default_init(dataset, kind),
    };
    let x0 = model.log_params(&init);
    let dim = x0.len();
    let scale = match &opts.param_scale {
        Some(s) if s.len() == dim && s.iter().all(|v| *v > 0.0) => s.clone(),
        Some(_) => return Err(Error::config(format!("param_scale must hold {dim} positive values"))),
        None => vec![1.0; dim],
    };
    let unscale = |y: &[f64]| -> Vec<f64> { y.iter().zip(&scale).map(|(a, s)| a * s).collect() };
    let nll_log = |x: &[f64]| lik.neg_log_likelihood(&model.params_from_log(x));

    let mut obj = Objective::new(|y: &[f64]| nll_log(&unscale(y)));
    let y0: Vec<f64> = x0.iter().zip(&scale).map(|(a, s)| a / s).collect();
    let f0 = obj.eval(&y0);
    if !f0.is_finite() {
        return Err(Error::Init {
            message: format!("objective is not finite at the initial values {init:?}"),
            hint: "supply --h0-init/--sigma2-init closer to the data scale or enlarge the mesh buffer".into(),
        });
    }
    let simplex = opts.simplex.minimize(&mut obj, &y0);
    let polished = opts.bfgs.minimize(&mut obj, &simplex.x);
    let mut evaluations = obj.evaluations;

    let mut x = unscale(&polished.x);
    let mut obj = Objective::new(nll_log);
    let mut fx = obj.eval(&x);
    let mut g = gradient(&mut obj, &x, opts.gradient_step);
    for _ in 0..opts.newton_steps {
        if max_abs(&g) < 1e-7 {
            break;
        }
        let h = hessian(&mut obj, &x, opts.hessian_step);
        let Some(chol) = (0.5 * (&h + h.transpose())).cholesky() else {
            break;
        };
        let d = chol.solve(&nalgebra::DVector::from_column_slice(&g));
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..10 {
            let xn: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a - t * b).collect();
            let fnew = obj.eval(&xn);
            if fnew <= fx {
                x = xn;
                fx = fnew;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
        g = gradient(&mut obj, &x, opts.gradient_step);
    }
    let h = hessian(&mut obj, &x, opts.hessian_step);
    evaluations += obj.evaluations;

    let params_hat = model.params_from_log(&x);
    let max_grad = max_abs(&g);
    let cov = spd_inverse(&h);
    if cov.is_none() {
        warnings.push("Hessian is not positive definite at the optimum; covariance unavailable".into());
    }
    let converged = cov.is_some() && max_grad < opts.converged_gradient && fx.is_finite();
    if cov.is_some() && !converged {
        warnings.push(format!("gradient {max_grad:.3e} above convergence threshold"));
    }

    let cov_rows: Option<Vec<Vec<f64>>> =
        cov.as_ref().map(|c| (0..dim).map(|i| (0..dim).map(|j| c[(i, j)]).collect()).collect());
    let z = normal_quantile(opts.level);
    let natural: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let se_params = cov_rows
        .as_ref()
        .map(|c| (0..dim).map(|i| natural[i] * c[i][i].max(0.0).sqrt()).collect::<Vec<_>>());
    let ci_params = cov_rows.as_ref().map(|c| {
        (0..dim)
            .map(|i| {
                let se = c[i][i].max(0.0).sqrt();
                ((x[i] - z * se).exp(), (x[i] + z * se).exp())
            })
            .collect::<Vec<_>>()
    });

    let n = dataset.n();
    let p_hat = lik.detect_prob(&params_hat);
    let n_hat = ht_abundance(n, p_hat)?;
    let var = ht_variance(
        n,
        &params_hat,
        cov_rows.as_deref(),
        mesh,
        dataset.traps(),
        &dataset.window(),
        opts.gradient_step,
    )?;
    let loglik = -fx;
    let k = model.aic_parameter_count();
    Ok(FitResult {
        kind,
        params_hat,
        param_names: model.param_names().iter().map(|s| s.to_string()).collect(),
        log_params_hat: x,
        cov_params: cov_rows,
        se_params,
        ci_params,
        ci_params_method: "wald on log scale (assumed)".into(),
        loglik,
        aic: aic(loglik, k),
        aic_parameter_count: k,
        n_observed: n,
        p_hat,
        n_hat,
        var_n: var.total,
        se_n: var.total.sqrt(),
        var_n_partial: var.partial,
        ci_n: lognormal_ci_N(n_hat, var.total, opts.level),
        ci_n_method: "lognormal".into(),
        ci_n_wald: wald_ci_N(n_hat, var.total, opts.level),
        level: opts.level,
        converged,
        max_abs_gradient: max_grad,
        evaluations,
        quadrature: QuadratureInfo::new(mesh, b),
        warnings,
    })
}

/// AIC differences relative to the best (lowest-AIC) fit.
pub fn delta_aic(fits: &[&FitResult]) -> Vec<f64> {
    let best = fits.iter().map(|f| f.aic).fold(f64::INFINITY, f64::min);
    fits.iter().map(|f| f.aic - best).collect()
}

/// Posterior density of one individual's activity centre over the mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcSurface {
    /// Density per mesh point, 1/km^2, in mesh order.
    pub density: Vec<f64>,
    pub mode: Point,
    pub mode_index: usize,
    pub cell_area: f64,
}

impl AcSurface {
    /// `sum density * cell_area`; 1 up to rounding.
    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell_area
    }
}

fn surface_from_logs(logs: &[f64], mesh: &SpatialMesh, id: &str) -> Result<AcSurface> {
    let lse = log_sum_exp(logs);
    if !lse.is_finite() {
        let finite = logs.iter().filter(|v| v.is_finite()).count();
        return Err(Error::Numerical(format!(
            "activity-centre surface for {id} is degenerate: {finite} of {} mesh log-densities finite, log normaliser {lse}",
            logs.len()
        )));
    }
    let mut mode_index = 0;
    for (m, v) in logs.iter().enumerate() {
        if *v > logs[mode_index] {
            mode_index = m;
        }
    }
    let ca = mesh.cell_area();
    Ok(AcSurface {
        density: logs.iter().map(|v| (v - lse).exp() / ca).collect(),
        mode: mesh.points()[mode_index],
        mode_index,
        cell_area: ca,
    })
}

/// Activity-centre density for `history` under `params`.
pub fn ac_surface(
    history: &CaptureHistory,
    params: &ModelParams,
    mesh: &SpatialMesh,
    traps: &TrapArray,
    window: &SurveyWindow,
    b: usize,
) -> Result<AcSurface> {
    params.validate()?;
    history.validate(traps, window)?;
    if b == 0 {
        return Err(Error::config("number of time intervals B must be at least 1"));
    }
    let kernel = MeshKernel::new(traps, mesh);
    let limiting = kernel.limiting_surface(params.h0, params.sigma2, &mut Scratch::default());
    let ctx = SurfaceContext {
        kernel: &kernel,
        window: *window,
        b,
        limiting: &limiting,
    };
    let logs = model_for(params.kind).log_density_surface(history, params, &ctx);
    surface_from_logs(&logs, mesh, &history.individual_id)
}
