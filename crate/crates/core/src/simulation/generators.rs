use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Rect, SurveyWindow, TrapArray};
use crate::hazard::ou_variance_unchecked;
use crate::likelihood::{CaptureHistory, Dataset, Detection};
use crate::rng::{substream, Purpose};

/// Which process generates the data, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "lowercase")]
pub enum SimModel {
    /// Memory hazard process.
    Mscr { h0: f64, sigma2: f64, beta: f64 },
    /// OU movement; `detect_radius` in km.
    Ou { sigma2: f64, beta: f64, detect_radius: f64 },
}

impl SimModel {
    pub fn generator_name(&self) -> &'static str {
        match self {
            SimModel::Mscr { .. } => "mscr",
            SimModel::Ou { .. } => "ou",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_true: usize,
    pub model: SimModel,
    /// Fine interval (mscr) or movement cadence (ou), days.
    pub step: f64,
    pub t_end: f64,
    pub seed: u64,
    pub traps: TrapArray,
    /// Activity centres are uniform over this rectangle.
    pub region: Rect,
    #[serde(default)]
    pub keep_trajectories: bool,
}

impl SimConfig {
    fn validate(&self) -> Result<SurveyWindow> {
        let window = SurveyWindow::new(self.t_end)?;
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::config(format!("step must be positive, got {}", self.step)));
        }
        if self.step >= self.t_end {
            return Err(Error::config(format!(
                "step {} must be shorter than the survey length {}",
                self.step, self.t_end
            )));
        }
        let r = self.region;
        if !(r.width() > 0.0 && r.height() > 0.0 && r.area().is_finite()) {
            return Err(Error::config("simulation region must have positive finite extent"));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match self.model {
            SimModel::Mscr { h0, sigma2, beta } => {
                if !(h0 >= 0.0 && h0.is_finite()) {
                    return Err(Error::config(format!("h0 must be >= 0, got {h0}")));
                }
                positive("sigma2", sigma2)?;
                positive("beta", beta)?;
            }
            SimModel::Ou { sigma2, beta, detect_radius } => {
                positive("sigma2", sigma2)?;
                positive("beta", beta)?;
                if !(detect_radius >= 0.0 && detect_radius.is_finite()) {
                    return Err(Error::config(format!("detection radius must be >= 0, got {detect_radius}")));
                }
            }
        }
        Ok(window)
    }

    fn individual_id(&self, i: usize) -> String {
        let width = self.n_true.to_string().len().max(3);
        format!("I{:0width$}", i + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub individual_id: String,
    pub activity_centre: Point,
    pub observed: bool,
    pub detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub individual_id: String,
    pub times: Vec<f64>,
    pub positions: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    /// Observed individuals only.
    pub dataset: Dataset,
    /// All `n_true` individuals.
    pub truth: Vec<TruthRecord>,
    /// Empty unless requested and the generator moves animals.
    pub trajectories: Vec<Trajectory>,
}

impl SimulatedData {
    pub fn n_observed(&self) -> usize {
        self.dataset.n()
    }

    pub fn captures(&self) -> usize {
        self.dataset.total_detections()
    }
}

pub trait DataGenerator: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    /// Generates replicate `replicate` of `config`.
    fn simulate(&self, config: &SimConfig, replicate: u64) -> Result<SimulatedData>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MscrGenerator;

#[derive(Debug, Clone, Copy, Default)]
pub struct OuGenerator;

struct Individual {
    centre: Point,
    detections: Vec<Detection>,
    trajectory: Option<Trajectory>,
}

fn uniform_in(region: &Rect, rng: &mut ChaCha8Rng) -> Point {
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    Point::new(region.xmin + u * region.width(), region.ymin + v * region.height())
}

fn assemble(
    config: &SimConfig,
    window: SurveyWindow,
    individuals: Vec<Individual>,
) -> Result<SimulatedData> {
    let mut histories = Vec::new();
    let mut truth = Vec::with_capacity(individuals.len());
    let mut trajectories = Vec::new();
    for (i, ind) in individuals.into_iter().enumerate() {
        let id = config.individual_id(i);
        truth.push(TruthRecord {
            individual_id: id.clone(),
            activity_centre: ind.centre,
            observed: !ind.detections.is_empty(),
            detections: ind.detections.len(),
        });
        if let Some(t) = ind.trajectory {
            trajectories.push(t);
        }
        if !ind.detections.is_empty() {
            histories.push(CaptureHistory::new(id, ind.detections)?);
        }
    }
    Ok(SimulatedData {
        dataset: Dataset::new(histories, config.traps.clone(), window)?,
        truth,
        trajectories,
    })
}

impl DataGenerator for MscrGenerator {
    fn name(&self) -> &'static str {
        "mscr"
    }

    fn description(&self) -> &'static str {
        "Bernoulli thinning of the memory hazard over fine time intervals"
    }

    fn simulate(&self, config: &SimConfig, replicate: u64) -> Result<SimulatedData> {
        let SimModel::Mscr { h0, sigma2, beta } = config.model else {
            return Err(Error::config("the mscr generator needs mscr parameters"));
        };
        let window = config.validate()?;
        let t_end = config.t_end;
        // the lattice must end exactly at T
        let steps = (t_end / config.step - 1e-9).ceil() as usize;
        let dt = t_end / steps as f64;
        let traps: Vec<Point> = config.traps.locations().collect();
        let individuals = (0..config.n_true)
            .into_par_iter()
            .map(|i| {
                let mut ac_rng = substream(config.seed, replicate, i as u64, Purpose::ActivityCentre);
                let s = uniform_in(&config.region, &mut ac_rng);
                let mut rng = substream(config.seed, replicate, i as u64, Purpose::Detection);
                let limiting: Vec<f64> = traps
                    .iter()
                    .map(|z| h0 * (-z.dist2(&s) / (2.0 * sigma2)).exp())
                    .collect();
                let limiting_total: f64 = limiting.iter().sum();
                let mut current = vec![0.0; traps.len()];
                let mut last: Option<(Point, f64)> = None;
                let mut detections = Vec::new();
                for k in 0..steps {
                    let eta = (k as f64 + 0.5) * dt;
                    let (weights, total) = match last {
                        None => (&limiting, limiting_total),
                        Some((zs, ts)) => {
                            let a = (-beta * (eta - ts)).exp();
                            let mu = Point::new(a * zs.x + (1.0 - a) * s.x, a * zs.y + (1.0 - a) * s.y);
                            let inv = 0.5 / ou_variance_unchecked(sigma2, beta, eta - ts);
                            for (h, z) in current.iter_mut().zip(&traps) {
                                *h = h0 * (-z.dist2(&mu) * inv).exp();
                            }
                            let total = current.iter().sum();
                            (&current, total)
                        }
                    };
                    let p = -(-total * dt).exp_m1();
                    let u: f64 = rng.random();
                    if u < p {
                        let trap = WeightedIndex::new(weights.iter().copied())
                            .map_err(|e| Error::Numerical(format!("trap choice: {e}")))?
                            .sample(&mut rng);
                        let time = if k + 1 == steps { t_end } else { (k + 1) as f64 * dt };
                        detections.push(Detection { time, trap });
                        last = Some((traps[trap], time));
                    }
                }
                Ok(Individual { centre: s, detections, trajectory: None })
            })
            .collect::<Result<Vec<_>>>()?;
        assemble(config, window, individuals)
    }
}

impl DataGenerator for OuGenerator {
    fn name(&self) -> &'static str {
        "ou"
    }

    fn description(&self) -> &'static str {
        "OU movement sampled at a fixed cadence; capture when within a radius of a trap"
    }

    fn simulate(&self, config: &SimConfig, replicate: u64) -> Result<SimulatedData> {
        let SimModel::Ou { sigma2, beta, detect_radius } = config.model else {
            return Err(Error::config("the ou generator needs ou parameters"));
        };
        let window = config.validate()?;
        let delta = config.step;
        let steps = (config.t_end / delta + 1e-9).floor() as usize;
        let a = (-beta * delta).exp();
        let sd = ou_variance_unchecked(sigma2, beta, delta).sqrt();
        let r2 = detect_radius * detect_radius;
        let traps: Vec<Point> = config.traps.locations().collect();
        let individuals = (0..config.n_true)
            .into_par_iter()
            .map(|i| {
                let mut ac_rng = substream(config.seed, replicate, i as u64, Purpose::ActivityCentre);
                let s = uniform_in(&config.region, &mut ac_rng);
                let mut rng = substream(config.seed, replicate, i as u64, Purpose::Movement);
                let mut x = s;
                let mut detections = Vec::new();
                let mut trajectory = config.keep_trajectories.then(|| Trajectory {
                    individual_id: config.individual_id(i),
                    times: vec![0.0],
                    positions: vec![s],
                });
                for k in 1..=steps {
                    let ex: f64 = rng.sample(StandardNormal);
                    let ey: f64 = rng.sample(StandardNormal);
                    x = Point::new(a * x.x + (1.0 - a) * s.x + sd * ex, a * x.y + (1.0 - a) * s.y + sd * ey);
                    let time = (k as f64 * delta).min(config.t_end);
                    if let Some(t) = trajectory.as_mut() {
                        t.times.push(time);
                        t.positions.push(x);
                    }
                    let mut nearest: Option<(usize, f64)> = None;
                    for (j, z) in traps.iter().enumerate() {
                        let d2 = z.dist2(&x);
                        if d2 < r2 && nearest.is_none_or(|(_, best)| d2 < best) {
                            nearest = Some((j, d2));
                        }
                    }
                    if let Some((trap, _)) = nearest {
                        detections.push(Detection { time, trap });
                    }
                }
                Individual { centre: s, detections, trajectory }
            })
            .collect::<Vec<_>>();
        assemble(config, window, individuals)
    }
}

/// Name-keyed collection of data generators.
#[derive(Debug, Clone, Default)]
pub struct GeneratorRegistry {
    generators: BTreeMap<String, Arc<dyn DataGenerator>>,
}

impl GeneratorRegistry {
    pub fn new() -> Self {
        GeneratorRegistry::default()
    }

    pub fn with_defaults() -> Self {
        let mut r = GeneratorRegistry::new();
        r.register(Arc::new(MscrGenerator));
        r.register(Arc::new(OuGenerator));
        r
    }

    pub fn register(&mut self, generator: Arc<dyn DataGenerator>) {
        self.generators.insert(generator.name().to_ascii_lowercase(), generator);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn DataGenerator>> {
        self.generators.get(&name.to_ascii_lowercase()).cloned().ok_or_else(|| {
            Error::config(format!("unknown generator {name:?}; available: {}", self.names().join(", ")))
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.generators.keys().cloned().collect()
    }
}

/// Runs the built-in generator matching `config.model`.
pub fn simulate(config: &SimConfig, replicate: u64) -> Result<SimulatedData> {
    match config.model {
        SimModel::Mscr { .. } => MscrGenerator.simulate(config, replicate),
        SimModel::Ou { .. } => OuGenerator.simulate(config, replicate),
    }
}

pub fn simulate_mscr(config: &SimConfig, replicate: u64) -> Result<SimulatedData> {
    MscrGenerator.simulate(config, replicate)
}

pub fn simulate_ou(config: &SimConfig, replicate: u64) -> Result<SimulatedData> {
    OuGenerator.simulate(config, replicate)
}
