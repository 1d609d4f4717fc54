//! CSV formats.
//!
//! | file       | columns                                   |
//! |------------|-------------------------------------------|
//! | traps      | `trap_id,x_km,y_km`                       |
//! | captures   | `individual_id,time_days,trap_id`         |
//! | truth      | `individual_id,x_km,y_km,observed,detections` |
//! | trajectory | `individual_id,time_days,x_km,y_km`       |
//! | surface    | `x_km,y_km,density`                       |
//!
//! Numbers are written in shortest round-trip form. Parse errors name the
//! file, line and column.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use crate::error::{Error, Result};
use crate::geometry::{Point, SpatialMesh, SurveyWindow, Trap, TrapArray};
use crate::inference::AcSurface;
use crate::likelihood::{CaptureHistory, Dataset, Detection};
use crate::simulation::{Trajectory, TruthRecord};

/// Maps canonical column names to the names used by an external file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColumnAdapter {
    map: HashMap<String, String>,
}

impl ColumnAdapter {
    /// External name for `canonical`, or `canonical` itself.
    pub fn column<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.map.get(canonical).map_or(canonical, String::as_str)
    }
}

impl FromStr for ColumnAdapter {
    type Err = Error;

    /// `canonical=external` pairs separated by commas, e.g.
    /// `individual_id=ID,time_days=when,trap_id=Detector`.
    fn from_str(s: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for pair in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::config(format!("adapter entry {pair:?} is not canonical=external")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(ColumnAdapter { map })
    }
}

#[derive(Debug, Clone, Default)]
pub struct CaptureOptions {
    /// When set, the time column holds timestamps converted to days since this instant.
    pub epoch: Option<NaiveDateTime>,
    pub adapter: ColumnAdapter,
}

/// Parses an ISO date or date-time; RFC 3339 offsets are converted to UTC.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_utc());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn parse_err(file: &Path, line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

struct Table<R> {
    file: PathBuf,
    reader: csv::Reader<R>,
    columns: Vec<usize>,
    names: Vec<String>,
}

impl<R: Read> Table<R> {
    fn new(source: R, file: &Path, wanted: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let headers = reader
            .headers()
            .map_err(|e| parse_err(file, 1, "header", e.to_string()))?
            .clone();
        let columns = wanted
            .iter()
            .map(|w| {
                headers
                    .iter()
                    .position(|h| h == *w)
                    .ok_or_else(|| parse_err(file, 1, w, format!("missing column; header is {:?}", headers.iter().collect::<Vec<_>>())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Table {
            file: file.to_path_buf(),
            reader,
            columns,
            names: wanted.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Calls `f(line, fields)` for every data row.
    fn for_each(&mut self, mut f: impl FnMut(u64, Vec<&str>) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            let more = self.reader.read_record(&mut record).map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(&self.file, line, "-", e.to_string())
            })?;
            if !more {
                return Ok(());
            }
            let line = record.position().map_or(0, |p| p.line());
            let fields = self
                .columns
                .iter()
                .zip(&self.names)
                .map(|(&c, name)| {
                    record
                        .get(c)
                        .ok_or_else(|| parse_err(&self.file, line, name, "missing field"))
                })
                .collect::<Result<Vec<_>>>()?;
            f(line, fields)?;
        }
    }

    fn number(&self, line: u64, column: usize, value: &str) -> Result<f64> {
        let v: f64 = value
            .parse()
            .map_err(|_| parse_err(&self.file, line, &self.names[column], format!("{value:?} is not a number")))?;
        if !v.is_finite() {
            return Err(parse_err(&self.file, line, &self.names[column], format!("{value:?} is not finite")));
        }
        Ok(v)
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(io_err(path))
}

pub fn read_traps(path: &Path, adapter: &ColumnAdapter) -> Result<TrapArray> {
    parse_traps(open(path)?, path, adapter)
}

/// Parses a traps table from any reader; `name` is used in error messages.
pub fn parse_traps<R: Read>(source: R, name: &Path, adapter: &ColumnAdapter) -> Result<TrapArray> {
    let cols = [adapter.column("trap_id"), adapter.column("x_km"), adapter.column("y_km")];
    let mut table = Table::new(source, name, &cols)?;
    let mut traps = Vec::new();
    let mut lines = Vec::new();
    let mut rows = Vec::new();
    table.for_each(|line, f| {
        rows.push((line, f[0].to_string(), f[1].to_string(), f[2].to_string()));
        Ok(())
    })?;
    for (line, id, x, y) in rows {
        if id.is_empty() {
            return Err(parse_err(name, line, cols[0], "empty trap id"));
        }
        let location = Point::new(table.number(line, 1, &x)?, table.number(line, 2, &y)?);
        traps.push(Trap { id, location });
        lines.push(line);
    }
    TrapArray::new(traps).map_err(|e| match e {
        Error::Data(m) | Error::Config(m) => parse_err(name, lines.first().copied().unwrap_or(1), cols[0], m),
        other => other,
    })
}

pub fn read_captures(path: &Path, traps: &TrapArray, window: &SurveyWindow, opts: &CaptureOptions) -> Result<Dataset> {
    parse_captures(open(path)?, path, traps, window, opts)
}

pub fn parse_captures<R: Read>(
    source: R,
    name: &Path,
    traps: &TrapArray,
    window: &SurveyWindow,
    opts: &CaptureOptions,
) -> Result<Dataset> {
    let a = &opts.adapter;
    let cols = [a.column("individual_id"), a.column("time_days"), a.column("trap_id")];
    let mut table = Table::new(source, name, &cols)?;
    let mut rows = Vec::new();
    table.for_each(|line, f| {
        rows.push((line, f[0].to_string(), f[1].to_string(), f[2].to_string()));
        Ok(())
    })?;
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, Vec<(u64, Detection)>> = HashMap::new();
    for (line, id, time, trap_id) in rows {
        if id.is_empty() {
            return Err(parse_err(name, line, cols[0], "empty individual id"));
        }
        let time = match opts.epoch {
            None => table.number(line, 1, &time)?,
            Some(epoch) => {
                let t = parse_timestamp(&time)
                    .ok_or_else(|| parse_err(name, line, cols[1], format!("{time:?} is not an ISO timestamp")))?;
                (t - epoch).num_microseconds().map(|us| us as f64 / 86_400e6).ok_or_else(|| {
                    parse_err(name, line, cols[1], "timestamp too far from the epoch")
                })?
            }
        };
        if !(time > 0.0) {
            return Err(parse_err(name, line, cols[1], format!("detection time {time} is not after the survey start")));
        }
        if time > window.t_end() {
            return Err(parse_err(
                name,
                line,
                cols[1],
                format!("detection time {time} exceeds the survey length {}", window.t_end()),
            ));
        }
        let trap = traps
            .index_of(&trap_id)
            .ok_or_else(|| parse_err(name, line, cols[2], format!("unknown trap id {trap_id:?}")))?;
        if !by_id.contains_key(&id) {
            order.push(id.clone());
        }
        by_id.entry(id).or_default().push((line, Detection { time, trap }));
    }
    let mut histories = Vec::with_capacity(order.len());
    for id in order {
        let mut dets = by_id.remove(&id).unwrap_or_default();
        dets.sort_by(|a, b| a.1.time.total_cmp(&b.1.time));
        for w in dets.windows(2) {
            if w[0].1.time == w[1].1.time {
                return Err(parse_err(
                    name,
                    w[1].0,
                    cols[1],
                    format!("individual {id} has two detections at time {} (also line {})", w[1].1.time, w[0].0),
                ));
            }
        }
        histories.push(CaptureHistory::new(id, dets.into_iter().map(|d| d.1).collect())?);
    }
    Dataset::new(histories, traps.clone(), *window)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(io_err(path))
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|source| Error::Io { path: PathBuf::from("<csv>"), source })
}

pub fn write_traps_to<W: Write>(out: W, traps: &TrapArray) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trap_id", "x_km", "y_km"])?;
    for t in traps.traps() {
        w.write_record([t.id.clone(), num(t.location.x), num(t.location.y)])?;
    }
    finish(w)
}

/// One row per detection, individuals in dataset order, times increasing.
pub fn write_captures_to<W: Write>(out: W, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["individual_id", "time_days", "trap_id"])?;
    let traps = dataset.traps().traps();
    for h in dataset.histories() {
        for d in h.detections() {
            w.write_record([h.individual_id.clone(), num(d.time), traps[d.trap].id.clone()])?;
        }
    }
    finish(w)
}

pub fn write_truth_to<W: Write>(out: W, truth: &[TruthRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["individual_id", "x_km", "y_km", "observed", "detections"])?;
    for t in truth {
        w.write_record([
            t.individual_id.clone(),
            num(t.activity_centre.x),
            num(t.activity_centre.y),
            t.observed.to_string(),
            t.detections.to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_trajectories_to<W: Write>(out: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["individual_id", "time_days", "x_km", "y_km"])?;
    for t in trajectories {
        for (time, p) in t.times.iter().zip(&t.positions) {
            w.write_record([t.individual_id.clone(), num(*time), num(p.x), num(p.y)])?;
        }
    }
    finish(w)
}

pub fn write_surface_to<W: Write>(out: W, mesh: &SpatialMesh, surface: &AcSurface) -> Result<()> {
    if surface.density.len() != mesh.len() {
        return Err(Error::config("surface does not match the mesh"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x_km", "y_km", "density"])?;
    for (p, d) in mesh.points().iter().zip(&surface.density) {
        w.write_record([num(p.x), num(p.y), num(*d)])?;
    }
    finish(w)
}

pub fn write_traps(path: &Path, traps: &TrapArray) -> Result<()> {
    write_traps_to(create(path)?, traps)
}

pub fn write_captures(path: &Path, dataset: &Dataset) -> Result<()> {
    write_captures_to(create(path)?, dataset)
}

pub fn write_truth(path: &Path, truth: &[TruthRecord]) -> Result<()> {
    write_truth_to(create(path)?, truth)
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    write_trajectories_to(create(path)?, trajectories)
}

pub fn write_surface(path: &Path, mesh: &SpatialMesh, surface: &AcSurface) -> Result<()> {
    write_surface_to(create(path)?, mesh, surface)
}
