//! Continuous-time memory spatial capture-recapture (MSCR).
//!
//! Detections of an individual are modelled as a recurrent-event process
//! whose hazard at each camera trap depends on the individual's latent
//! activity centre and, once seen, on where and when it was last detected.
//! The memory decays as an Ornstein-Uhlenbeck mean/covariance, so the
//! standard half-normal SCR hazard is the limit of infinitely fast
//! reversion.
//!
//! The crate is organised as
//!
//! - [`geometry`]: trap arrays, the buffered survey region and its quadrature mesh;
//! - [`hazard`]: hazard, cumulative hazard and survival with midpoint time quadrature;
//! - [`model`]: the detection models (MSCR, SCR) behind one trait, plus a name registry;
//! - [`likelihood`]: capture-history densities, detection probability and the
//!   conditional likelihood;
//! - [`inference`]: fitting, Horvitz-Thompson abundance, intervals, AIC and
//!   activity-centre surfaces;
//! - [`simulation`]: data generators (registered by name) and replicated studies;
//! - [`io`]: the CSV formats.

pub mod error;
pub mod geometry;
pub mod hazard;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod likelihood;
pub mod model;
pub mod optim;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
pub use geometry::{build_mesh, trap_distances, Point, Rect, SpatialMesh, SurveyWindow, Trap, TrapArray};
pub use hazard::{MemoryState, ModelKind, ModelParams, TimeGrid};
pub use inference::{fit, AcSurface, FitOptions, FitResult};
pub use likelihood::{CaptureHistory, Dataset, Detection, Likelihood};
pub use model::{DetectionModel, ModelRegistry};
