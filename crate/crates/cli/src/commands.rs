use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mscr::inference::{default_init, delta_aic, fit_with, ac_surface as surface_for, FitOptions, FitResult};
use mscr::io::{self, CaptureOptions, ColumnAdapter};
use mscr::simulation::{run_sim_study, simulate as run_generator, SimConfig, SimModel, StudyConfig};
use mscr::{build_mesh, Dataset, Error, ModelKind, Result, SpatialMesh, SurveyWindow, TrapArray};
use serde::Serialize;
use serde_json::{json, Value};

use crate::provenance::{Envelope, InputFile};
use crate::{
    AcSurfaceArgs, FitArgs, GeneratorChoice, IngestArgs, KindChoice, MeshArgs, MeshInfoArgs, SimArgs, SimStudyArgs,
    SimulateArgs,
};

/// Writes a line to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn kinds_of(choices: &[KindChoice]) -> Vec<ModelKind> {
    let mut out = Vec::new();
    for c in choices {
        let ks: &[ModelKind] = match c {
            KindChoice::Mscr => &[ModelKind::Mscr],
            KindChoice::Scr => &[ModelKind::Scr],
            KindChoice::Both => &[ModelKind::Mscr, ModelKind::Scr],
        };
        for k in ks {
            if !out.contains(k) {
                out.push(*k);
            }
        }
    }
    out
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("--level must lie in (0, 1), got {level}")))
    }
}

fn load(ingest: &IngestArgs, window: &SurveyWindow) -> Result<(Dataset, Vec<InputFile>)> {
    let adapter: ColumnAdapter = match &ingest.adapter {
        Some(s) => s.parse()?,
        None => ColumnAdapter::default(),
    };
    let epoch = match &ingest.epoch {
        Some(s) => Some(
            io::parse_timestamp(s).ok_or_else(|| Error::Config(format!("--epoch {s:?} is not an ISO date or date-time")))?,
        ),
        None => None,
    };
    let traps = io::read_traps(&ingest.traps, &adapter)?;
    let opts = CaptureOptions { epoch, adapter };
    let dataset = io::read_captures(&ingest.captures, &traps, window, &opts)?;
    let inputs = vec![InputFile::hash(&ingest.traps)?, InputFile::hash(&ingest.captures)?];
    Ok((dataset, inputs))
}

#[derive(Serialize)]
struct FitConfig<'a> {
    #[serde(flatten)]
    args: &'a FitArgs,
    kinds: Vec<ModelKind>,
}

pub fn fit(a: &FitArgs) -> Result<()> {
    check_level(a.level)?;
    let window = SurveyWindow::new(a.t_end)?;
    let (dataset, inputs) = load(&a.ingest, &window)?;
    let mesh = build_mesh(dataset.traps(), a.mesh.buffer, a.mesh.spacing)?;
    if !mesh.contains_all(dataset.traps()) {
        return Err(Error::Config("mesh does not cover every trap".into()));
    }
    ensure_dir(&a.out)?;
    let kinds = kinds_of(&[a.kind]);
    let config = FitConfig { args: a, kinds: kinds.clone() };
    let options = FitOptions { level: a.level, ..FitOptions::default() };
    let mut fits = Vec::new();
    for &kind in &kinds {
        let mut extra = Vec::new();
        let init = if a.h0_init.is_some() || a.sigma2_init.is_some() || a.beta_init.is_some() {
            let mut p = default_init(&dataset, kind);
            p.h0 = a.h0_init.unwrap_or(p.h0);
            p.sigma2 = a.sigma2_init.unwrap_or(p.sigma2);
            if kind == ModelKind::Mscr {
                p.beta = a.beta_init.unwrap_or(p.beta);
            } else if a.beta_init.is_some() {
                let msg = "--beta-init is ignored for SCR".to_string();
                log::warn!("{msg}");
                extra.push(msg);
            }
            Some(p)
        } else {
            None
        };
        log::info!("fitting {kind} to {} individuals", dataset.n());
        let mut result = fit_with(&dataset, kind, &mesh, a.b, init, &options)?;
        result.warnings.extend(extra);
        for w in &result.warnings {
            log::warn!("{kind}: {w}");
        }
        let path = a.out.join(format!("fit_{kind}.json"));
        Envelope::new("fit", &config, a.seed, inputs.clone(), &result).write(&path)?;
        say!(
            "{kind}: N = {:.2} (SE {:.2}), {:.0}% CI ({:.2}, {:.2}); loglik {:.3}; AIC {:.3}; converged {}",
            result.n_hat,
            result.se_n,
            100.0 * a.level,
            result.ci_n.0,
            result.ci_n.1,
            result.loglik,
            result.aic,
            result.converged
        );
        fits.push(result);
    }
    if fits.len() > 1 {
        let refs: Vec<&FitResult> = fits.iter().collect();
        let deltas = delta_aic(&refs);
        let models: Vec<Value> = fits
            .iter()
            .map(|f| json!({ "kind": f.kind, "loglik": f.loglik, "aic": f.aic, "k": f.aic_parameter_count }))
            .collect();
        let by_kind: BTreeMap<String, f64> = fits.iter().zip(&deltas).map(|(f, d)| (f.kind.to_string(), *d)).collect();
        let aic = |k: ModelKind| fits.iter().find(|f| f.kind == k).map(|f| f.aic);
        let scr_minus_mscr = match (aic(ModelKind::Scr), aic(ModelKind::Mscr)) {
            (Some(s), Some(m)) => Some(s - m),
            _ => None,
        };
        let result = json!({
            "models": models,
            "delta_aic": by_kind,
            "delta_aic_scr_minus_mscr": scr_minus_mscr,
        });
        Envelope::new("fit", &config, a.seed, inputs, result).write(&a.out.join("comparison.json"))?;
        if let Some(d) = scr_minus_mscr {
            say!("delta AIC (SCR - MSCR) = {d:.3}");
        }
    }
    Ok(())
}

fn load_traps_or_default(path: Option<&Path>) -> Result<(TrapArray, Vec<InputFile>)> {
    match path {
        Some(p) => Ok((io::read_traps(p, &ColumnAdapter::default())?, vec![InputFile::hash(p)?])),
        None => Ok((TrapArray::default_layout(), Vec::new())),
    }
}

fn sim_config(a: &SimArgs, keep_trajectories: bool) -> Result<(SimConfig, Vec<InputFile>)> {
    let (traps, inputs) = load_traps_or_default(a.traps.as_deref())?;
    let mesh = build_mesh(&traps, a.mesh.buffer, a.mesh.spacing)?;
    let (model, step_min) = match a.model {
        GeneratorChoice::Mscr => {
            if a.radius_m.is_some() {
                log::warn!("--radius-m is ignored by the mscr generator");
            }
            (
                SimModel::Mscr {
                    h0: a.h0.unwrap_or(1.65),
                    sigma2: a.sigma2.unwrap_or(0.22),
                    beta: a.beta.unwrap_or(0.37),
                },
                a.step_min.unwrap_or(1.0),
            )
        }
        GeneratorChoice::Ou => {
            if a.h0.is_some() {
                log::warn!("--h0 is ignored by the ou generator");
            }
            (
                SimModel::Ou {
                    sigma2: a.sigma2.unwrap_or(1.49),
                    beta: a.beta.unwrap_or(1.35),
                    detect_radius: a.radius_m.unwrap_or(50.0) / 1000.0,
                },
                a.step_min.unwrap_or(10.0),
            )
        }
    };
    let config = SimConfig {
        n_true: a.n_true,
        model,
        step: step_min / 1440.0,
        t_end: a.t_end,
        seed: a.seed,
        traps,
        region: mesh.region(),
        keep_trajectories,
    };
    Ok((config, inputs))
}

#[derive(Serialize)]
struct Resolved<'a, A, C> {
    #[serde(flatten)]
    args: &'a A,
    resolved: C,
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let (config, inputs) = sim_config(&a.sim, a.trajectories)?;
    let data = run_generator(&config, a.replicate)?;
    ensure_dir(&a.out)?;
    io::write_traps(&a.out.join("traps.csv"), &config.traps)?;
    io::write_captures(&a.out.join("captures.csv"), &data.dataset)?;
    io::write_truth(&a.out.join("truth.csv"), &data.truth)?;
    if a.trajectories {
        if data.trajectories.is_empty() {
            log::warn!("the {} generator records no trajectories", config.model.generator_name());
        } else {
            io::write_trajectories(&a.out.join("trajectories.csv"), &data.trajectories)?;
        }
    }
    let summary = json!({
        "generator": config.model.generator_name(),
        "replicate": a.replicate,
        "n_true": config.n_true,
        "n_observed": data.n_observed(),
        "captures": data.captures(),
    });
    let echo = Resolved { args: a, resolved: &config };
    Envelope::new("simulate", echo, Some(config.seed), inputs, &summary).write(&a.out.join("simulate.json"))?;
    say!(
        "{} of {} individuals observed, {} captures",
        data.n_observed(),
        config.n_true,
        data.captures()
    );
    Ok(())
}

pub fn sim_study(a: &SimStudyArgs) -> Result<()> {
    check_level(a.level)?;
    let (sim, inputs) = sim_config(&a.sim, false)?;
    let config = StudyConfig {
        sim,
        replicates: a.replicates,
        kinds: kinds_of(&a.kinds),
        mesh_buffer: a.sim.mesh.buffer,
        mesh_spacing: a.sim.mesh.spacing,
        b: a.b,
        level: a.level,
    };
    let report = run_sim_study(&config)?;
    ensure_dir(&a.out)?;
    let table = report.table();
    fs::write(a.out.join("study.txt"), &table).map_err(io_err(&a.out))?;
    let seed = config.sim.seed;
    let echo = Resolved { args: a, resolved: &config };
    Envelope::new("sim-study", echo, Some(seed), inputs, &report).write(&a.out.join("study.json"))?;
    say!("{}", table.trim_end());
    Ok(())
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn ac_surface(a: &AcSurfaceArgs) -> Result<()> {
    let text = fs::read_to_string(&a.fit).map_err(io_err(&a.fit))?;
    let saved: Value = serde_json::from_str(&text)?;
    let fit: FitResult = serde_json::from_value(saved["result"].clone())?;
    let t_end = saved["config"]["t_end"]
        .as_f64()
        .ok_or_else(|| Error::Config(format!("{} does not record the survey length", a.fit.display())))?;
    let window = SurveyWindow::new(t_end)?;
    let (dataset, mut inputs) = load(&a.ingest, &window)?;
    if let Ok(recorded) = serde_json::from_value::<Vec<InputFile>>(saved["inputs"].clone()) {
        let same = recorded.iter().map(|f| &f.sha256).eq(inputs.iter().map(|f| &f.sha256));
        if !same {
            log::warn!("input files differ from those the fit was computed on");
        }
    }
    inputs.push(InputFile::hash(&a.fit)?);
    let q = fit.quadrature;
    let mesh = build_mesh(dataset.traps(), q.buffer_km, q.mesh_spacing_km)?;

    let wanted: Vec<&str> = if a.individual.iter().any(|i| i == "all") {
        dataset.histories().iter().map(|h| h.individual_id.as_str()).collect()
    } else {
        a.individual.iter().map(String::as_str).collect()
    };
    let mut histories = Vec::new();
    for id in &wanted {
        let h = dataset.history(id).ok_or_else(|| {
            let ids: Vec<&str> = dataset.histories().iter().map(|h| h.individual_id.as_str()).collect();
            Error::Config(format!("unknown individual {id:?}; available: {}", ids.join(", ")))
        })?;
        histories.push(h);
    }
    ensure_dir(&a.out)?;
    for h in histories {
        let surface = surface_for(h, &fit.params_hat, &mesh, dataset.traps(), &window, q.time_intervals_b)?;
        let stem = file_stem(&h.individual_id);
        io::write_surface(&a.out.join(format!("surface_{stem}.csv")), &mesh, &surface)?;
        let sidecar = json!({
            "individual_id": h.individual_id,
            "kind": fit.kind,
            "mode": { "x_km": surface.mode.x, "y_km": surface.mode.y },
            "mode_index": surface.mode_index,
            "mass": surface.mass(),
        });
        let env = Envelope::new("ac-surface", a, None, inputs.clone(), sidecar);
        let path = a.out.join(format!("surface_{stem}.json"));
        let mut line = serde_json::to_string(&env)?;
        line.push('\n');
        fs::write(&path, line).map_err(io_err(&path))?;
        say!("{}: mode ({}, {})", h.individual_id, surface.mode.x, surface.mode.y);
    }
    Ok(())
}

fn describe(mesh: &SpatialMesh, traps: &TrapArray, m: &MeshArgs) -> Value {
    json!({
        "traps": traps.len(),
        "buffer_km": m.buffer,
        "spacing_km": m.spacing,
        "nx": mesh.nx(),
        "ny": mesh.ny(),
        "points": mesh.len(),
        "cell_area_km2": mesh.cell_area(),
        "area_km2": mesh.total_area(),
        "region": mesh.region(),
    })
}

pub fn mesh_info(a: &MeshInfoArgs) -> Result<()> {
    let (traps, _) = load_traps_or_default(a.traps.as_deref())?;
    let mesh = build_mesh(&traps, a.mesh.buffer, a.mesh.spacing)?;
    say!("{}", serde_json::to_string_pretty(&describe(&mesh, &traps, &a.mesh))?);
    Ok(())
}
