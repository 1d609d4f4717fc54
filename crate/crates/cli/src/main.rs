//! `mscr`: fit, simulate and inspect memory spatial capture-recapture models.
//!
//! Exit codes: 0 success, 1 I/O or internal failure, 2 data, validation or
//! usage error, 3 numerical failure.

mod commands;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mscr::Error;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "mscr", version, about = "Continuous-time memory spatial capture-recapture")]
struct Cli {
    /// Worker threads; defaults to available parallelism. Output does not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit MSCR and/or SCR to trap and capture files.
    Fit(FitArgs),
    /// Simulate one dataset.
    Simulate(SimulateArgs),
    /// Run a replicated simulation study.
    SimStudy(SimStudyArgs),
    /// Activity-centre density surfaces from a saved fit.
    AcSurface(AcSurfaceArgs),
    /// Describe the quadrature mesh for a trap layout.
    MeshInfo(MeshInfoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum KindChoice {
    #[value(name = "MSCR", alias = "mscr")]
    Mscr,
    #[value(name = "SCR", alias = "scr")]
    Scr,
    #[value(name = "both", alias = "BOTH")]
    Both,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MeshArgs {
    /// Buffer around the trap bounding box, km.
    #[arg(long, default_value_t = 2.0)]
    pub buffer: f64,
    /// Mesh spacing, km.
    #[arg(long, default_value_t = 0.2)]
    pub spacing: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    /// Traps CSV: trap_id,x_km,y_km.
    #[arg(long)]
    pub traps: PathBuf,
    /// Captures CSV: individual_id,time_days,trap_id.
    #[arg(long)]
    pub captures: PathBuf,
    /// Treat the time column as timestamps and convert to days since this ISO date or date-time.
    #[arg(long)]
    pub epoch: Option<String>,
    /// Column mapping for external schemas, e.g. individual_id=ID,time_days=When,trap_id=Cam.
    #[arg(long)]
    pub adapter: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub ingest: IngestArgs,
    /// Survey length, days.
    #[arg(long = "T")]
    pub t_end: f64,
    #[arg(long, value_enum, default_value_t = KindChoice::Both)]
    pub kind: KindChoice,
    #[command(flatten)]
    #[serde(flatten)]
    pub mesh: MeshArgs,
    /// Time sub-intervals over the whole survey.
    #[arg(long = "B", default_value_t = 100)]
    pub b: usize,
    #[arg(long)]
    pub h0_init: Option<f64>,
    #[arg(long)]
    pub sigma2_init: Option<f64>,
    #[arg(long)]
    pub beta_init: Option<f64>,
    /// Confidence level for all intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Recorded in the output only; fitting is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorChoice {
    Mscr,
    Ou,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimArgs {
    #[arg(long, value_enum, default_value_t = GeneratorChoice::Mscr)]
    pub model: GeneratorChoice,
    /// True population size.
    #[arg(long = "N", default_value_t = 20)]
    pub n_true: usize,
    /// mscr only; default 1.65 per day.
    #[arg(long)]
    pub h0: Option<f64>,
    /// Default 0.22 km^2 (mscr) or 1.49 km^2 (ou).
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Default 0.37 (mscr) or 1.35 (ou) per day.
    #[arg(long)]
    pub beta: Option<f64>,
    /// ou only; default 50 m.
    #[arg(long)]
    pub radius_m: Option<f64>,
    /// Fine interval (mscr, default 1) or movement cadence (ou, default 10), minutes.
    #[arg(long)]
    pub step_min: Option<f64>,
    /// Survey length, days.
    #[arg(long = "T", default_value_t = 12.0)]
    pub t_end: f64,
    #[arg(long)]
    pub seed: u64,
    /// Traps CSV; defaults to a 5x6 grid spanning 6x6 km.
    #[arg(long)]
    pub traps: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub mesh: MeshArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    /// Replicate index, selecting an independent random stream.
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    /// Also write OU trajectories.
    #[arg(long)]
    pub trajectories: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimStudyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [KindChoice::Mscr, KindChoice::Scr])]
    pub kinds: Vec<KindChoice>,
    #[arg(long = "B", default_value_t = 100)]
    pub b: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AcSurfaceArgs {
    /// A fit_<kind>.json written by `mscr fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub ingest: IngestArgs,
    /// Individual id, repeatable, or `all`.
    #[arg(long, required = true)]
    pub individual: Vec<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MeshInfoArgs {
    /// Traps CSV; defaults to a 5x6 grid spanning 6x6 km.
    #[arg(long)]
    pub traps: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub mesh: MeshArgs,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Data(_) | Error::Domain(_) | Error::Init { .. } | Error::Parse { .. } | Error::Csv(_) => 2,
        Error::Numerical(_) => 3,
        Error::Io { .. } | Error::Json(_) => 1,
    }
}

fn report(e: &Error) {
    let mut detail = serde_json::json!({
        "category": e.category(),
        "message": e.to_string(),
    });
    if let Error::Parse { file, line, column, .. } = e {
        detail["file"] = serde_json::json!(file);
        detail["line"] = serde_json::json!(line);
        detail["column"] = serde_json::json!(column);
    }
    if let Error::Init { hint, .. } = e {
        detail["hint"] = serde_json::json!(hint);
    }
    eprintln!("{}", serde_json::json!({ "error": detail }));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            report(&Error::Config("--workers must be at least 1".into()));
            return ExitCode::from(2);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            report(&Error::Config(format!("cannot start worker pool: {e}")));
            return ExitCode::from(1);
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::SimStudy(a) => commands::sim_study(a),
        Command::AcSurface(a) => commands::ac_surface(a),
        Command::MeshInfo(a) => commands::mesh_info(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
