//! Survey landscape: trap array, buffered rectangular region, quadrature mesh.
//!
//! All coordinates are kilometres, all areas square kilometres.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.dist2(other).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trap {
    pub id: String,
    pub location: Point,
}

/// Ordered set of camera traps with unique ids and distinct locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapArray {
    traps: Vec<Trap>,
}

impl TrapArray {
    pub fn new(traps: Vec<Trap>) -> Result<Self> {
        if traps.is_empty() {
            return Err(Error::config("trap array is empty"));
        }
        let mut ids = HashSet::new();
        let mut locs = HashSet::new();
        for t in &traps {
            if !t.location.is_finite() {
                return Err(Error::config(format!("trap {} has non-finite coordinates", t.id)));
            }
            if !ids.insert(t.id.as_str()) {
                return Err(Error::config(format!("duplicate trap id {}", t.id)));
            }
            if !locs.insert((t.location.x.to_bits(), t.location.y.to_bits())) {
                return Err(Error::config(format!(
                    "trap {} shares its location with another trap",
                    t.id
                )));
            }
        }
        Ok(TrapArray { traps })
    }

    /// Builds traps named `T01`, `T02`, ... from bare coordinates.
    pub fn from_points(points: &[Point]) -> Result<Self> {
        let width = points.len().to_string().len().max(2);
        TrapArray::new(
            points
                .iter()
                .enumerate()
                .map(|(i, p)| Trap {
                    id: format!("T{:0width$}", i + 1),
                    location: *p,
                })
                .collect(),
        )
    }

    /// Regular `cols` x `rows` grid spanning `[x0, x0+width] x [y0, y0+height]`.
    pub fn grid(cols: usize, rows: usize, origin: Point, width: f64, height: f64) -> Result<Self> {
        if cols == 0 || rows == 0 {
            return Err(Error::config("trap grid needs at least one row and column"));
        }
        let dx = if cols > 1 { width / (cols - 1) as f64 } else { 0.0 };
        let dy = if rows > 1 { height / (rows - 1) as f64 } else { 0.0 };
        let mut pts = Vec::with_capacity(cols * rows);
        for r in 0..rows {
            for c in 0..cols {
                pts.push(Point::new(origin.x + c as f64 * dx, origin.y + r as f64 * dy));
            }
        }
        TrapArray::from_points(&pts)
    }

    /// The default simulation layout: 30 traps on a 5 x 6 grid over a 6 x 6 km square.
    pub fn default_layout() -> Self {
        TrapArray::grid(5, 6, Point::new(0.0, 0.0), 6.0, 6.0).expect("static layout is valid")
    }

    pub fn len(&self) -> usize {
        self.traps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traps.is_empty()
    }

    pub fn traps(&self) -> &[Trap] {
        &self.traps
    }

    pub fn location(&self, index: usize) -> Point {
        self.traps[index].location
    }

    pub fn locations(&self) -> impl Iterator<Item = Point> + '_ {
        self.traps.iter().map(|t| t.location)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.traps.iter().position(|t| t.id == id)
    }

    /// Bounding box of the trap locations.
    pub fn bounds(&self) -> Rect {
        let mut r = Rect {
            xmin: f64::INFINITY,
            xmax: f64::NEG_INFINITY,
            ymin: f64::INFINITY,
            ymax: f64::NEG_INFINITY,
        };
        for p in self.locations() {
            r.xmin = r.xmin.min(p.x);
            r.xmax = r.xmax.max(p.x);
            r.ymin = r.ymin.min(p.y);
            r.ymax = r.ymax.max(p.y);
        }
        r
    }

    /// Largest side of the trap bounding box.
    pub fn span(&self) -> f64 {
        let b = self.bounds();
        b.width().max(b.height())
    }

    /// Same traps shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        TrapArray {
            traps: self
                .traps
                .iter()
                .map(|t| Trap {
                    id: t.id.clone(),
                    location: Point::new(t.location.x + dx, t.location.y + dy),
                })
                .collect(),
        }
    }
}

/// Euclidean distances from `point` to every trap, in trap order.
pub fn trap_distances(traps: &TrapArray, point: Point) -> Vec<f64> {
    traps.locations().map(|z| z.dist(&point)).collect()
}

/// Study period `[0, T]` in days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurveyWindow {
    t_end: f64,
}

impl SurveyWindow {
    pub fn new(t_end: f64) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::config(format!("survey length must be positive, got {t_end}")));
        }
        Ok(SurveyWindow { t_end })
    }

    pub fn t_start(&self) -> f64 {
        0.0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }
}

/// Uniform grid of cell centres covering the buffered trap bounding box.
///
/// Points are stored row-major: index `j * nx + i` is column `i` (x) of
/// row `j` (y). Every point carries the same weight `cell_area`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialMesh {
    xs: Vec<f64>,
    ys: Vec<f64>,
    points: Vec<Point>,
    spacing: f64,
    cell_area: f64,
    total_area: f64,
    buffer: f64,
}

/// Builds the midpoint quadrature mesh for the traps' bounding box grown by
/// `buffer` on every side.
pub fn build_mesh(traps: &TrapArray, buffer: f64, spacing: f64) -> Result<SpatialMesh> {
    if traps.is_empty() {
        return Err(Error::config("cannot build a mesh without traps"));
    }
    if !(buffer >= 0.0 && buffer.is_finite()) {
        return Err(Error::config(format!("buffer must be >= 0, got {buffer}")));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::config(format!("mesh spacing must be > 0, got {spacing}")));
    }
    let b = traps.bounds();
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let lo = lo - buffer;
        let hi = hi + buffer;
        let n = ((hi - lo) / spacing + 1e-9).floor() as usize + 1;
        let centre = 0.5 * (lo + hi);
        let half = 0.5 * (n - 1) as f64;
        (0..n).map(|i| centre + (i as f64 - half) * spacing).collect()
    };
    let xs = axis(b.xmin, b.xmax);
    let ys = axis(b.ymin, b.ymax);
    SpatialMesh::from_axes(xs, ys, spacing, buffer)
}

impl SpatialMesh {
    fn from_axes(xs: Vec<f64>, ys: Vec<f64>, spacing: f64, buffer: f64) -> Result<Self> {
        let count = xs.len() * ys.len();
        if count == 0 {
            return Err(Error::config("mesh has no points"));
        }
        let points = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| Point::new(x, y)))
            .collect();
        let cell_area = spacing * spacing;
        Ok(SpatialMesh {
            xs,
            ys,
            points,
            spacing,
            cell_area,
            total_area: count as f64 * cell_area,
            buffer,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn nx(&self) -> usize {
        self.xs.len()
    }

    pub fn ny(&self) -> usize {
        self.ys.len()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }

    pub fn total_area(&self) -> f64 {
        self.total_area
    }

    pub fn buffer(&self) -> f64 {
        self.buffer
    }

    /// The region covered by the mesh cells; its area equals `total_area`.
    pub fn region(&self) -> Rect {
        let h = 0.5 * self.spacing;
        Rect {
            xmin: self.xs[0] - h,
            xmax: self.xs[self.xs.len() - 1] + h,
            ymin: self.ys[0] - h,
            ymax: self.ys[self.ys.len() - 1] + h,
        }
    }

    pub fn contains_all(&self, traps: &TrapArray) -> bool {
        let r = self.region();
        traps.locations().all(|p| r.contains(&p))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let xs = self.xs.iter().map(|x| x + dx).collect();
        let ys = self.ys.iter().map(|y| y + dy).collect();
        SpatialMesh::from_axes(xs, ys, self.spacing, self.buffer).expect("non-empty mesh")
    }

    /// Mesh of a single point, weight `cell_area`, centred at `p`.
    pub fn single_point(p: Point, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::config("mesh spacing must be > 0"));
        }
        SpatialMesh::from_axes(vec![p.x], vec![p.y], spacing, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square_traps() -> TrapArray {
        TrapArray::from_points(&[Point::new(0.0, 0.0), Point::new(6.0, 0.0), Point::new(0.0, 6.0), Point::new(6.0, 6.0)])
            .unwrap()
    }

    #[test]
    fn mesh_over_ten_km_box() {
        let mesh = build_mesh(&square_traps(), 2.0, 0.2).unwrap();
        assert_eq!(mesh.nx(), 51);
        assert_eq!(mesh.ny(), 51);
        assert_eq!(mesh.len(), 2601);
        assert_relative_eq!(mesh.total_area(), 104.04, max_relative = 1e-12);
        assert_relative_eq!(mesh.xs()[0], -2.0, epsilon = 1e-12);
        assert_relative_eq!(mesh.xs()[50], 8.0, epsilon = 1e-12);
        assert!(mesh.contains_all(&square_traps()));
    }

    #[test]
    fn single_trap_degenerate_mesh() {
        let traps = TrapArray::from_points(&[Point::new(0.0, 0.0)]).unwrap();
        let mesh = build_mesh(&traps, 0.0, 1.0).unwrap();
        assert_eq!(mesh.len(), 1);
        assert_eq!(mesh.total_area(), 1.0);
        assert_eq!(mesh.points()[0], Point::new(0.0, 0.0));
    }

    #[test]
    fn area_is_count_times_cell_area() {
        for &(buf, sp) in &[(2.0, 0.2), (1.3, 0.37), (0.0, 0.11), (2.0, 0.2042)] {
            let mesh = build_mesh(&square_traps(), buf, sp).unwrap();
            let direct = mesh.len() as f64 * mesh.cell_area();
            assert!(((mesh.total_area() - direct) / direct).abs() < 1e-12);
            assert!(mesh.contains_all(&square_traps()));
        }
    }

    #[test]
    fn halving_spacing_quadruples_count_up_to_a_ring() {
        let coarse = build_mesh(&square_traps(), 2.0, 0.4).unwrap();
        let fine = build_mesh(&square_traps(), 2.0, 0.2).unwrap();
        let expected = 4 * coarse.len();
        let ring = 2 * (fine.nx() + fine.ny());
        assert!(fine.len().abs_diff(expected) <= ring);
    }

    #[test]
    fn mesh_rejects_bad_config() {
        assert!(build_mesh(&square_traps(), -1.0, 0.2).is_err());
        assert!(build_mesh(&square_traps(), 1.0, 0.0).is_err());
        assert!(TrapArray::new(vec![]).is_err());
    }

    #[test]
    fn trap_validation() {
        let dup_id = vec![
            Trap { id: "a".into(), location: Point::new(0.0, 0.0) },
            Trap { id: "a".into(), location: Point::new(1.0, 0.0) },
        ];
        assert!(TrapArray::new(dup_id).is_err());
        let dup_loc = vec![
            Trap { id: "a".into(), location: Point::new(0.0, 0.0) },
            Trap { id: "b".into(), location: Point::new(0.0, 0.0) },
        ];
        assert!(TrapArray::new(dup_loc).is_err());
    }

    #[test]
    fn distances() {
        let one = TrapArray::from_points(&[Point::new(0.0, 0.0)]).unwrap();
        assert_eq!(trap_distances(&one, Point::new(3.0, 4.0)), vec![5.0]);
        assert_eq!(trap_distances(&one, Point::new(0.0, 0.0)), vec![0.0]);
        let line =
            TrapArray::from_points(&[Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)]).unwrap();
        assert_eq!(trap_distances(&line, Point::new(1.0, 0.0)), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn default_layout_scale() {
        let traps = TrapArray::default_layout();
        assert_eq!(traps.len(), 30);
        let mesh = build_mesh(&traps, 2.0, 0.2).unwrap();
        assert!((mesh.total_area() - 100.12).abs() < 5.0);
    }
}
