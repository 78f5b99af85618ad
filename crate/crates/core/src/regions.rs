//! Five-region classification of the workspace.
//!
//! Critical (CR) and target (TR) regions are stored as closed discs. Detection
//! regions (DR) are never stored: each CR is surrounded by an annulus of width
//! `dr_width`. Safe (SR) and unknown (UR) space is whatever is left, split by a
//! per-cell "known safe" mask that grows as the needle explores.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Returned by [`RegionMap::min_clearance`] when there is no CR to be close to.
pub const NO_CLEARANCE_LIMIT: f64 = f64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned workspace rectangle in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// Whether the closed disc intersects the rectangle.
    pub fn intersects_disc(&self, center: Point, radius: f64) -> bool {
        let cx = center.x.clamp(self.x_min, self.x_max);
        let cy = center.y.clamp(self.y_min, self.y_max);
        center.dist(Point::new(cx, cy)) <= radius
    }
}

impl Default for Rect {
    fn default() -> Self {
        Self::new(0.0, 0.0, 100.0, 100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionType {
    /// Not yet classified.
    Unknown,
    /// Known not to violate safety.
    Safe,
    /// Violates safety.
    Critical,
    /// Band around a CR in which the CR can be sensed before contact.
    Detection,
    /// Where the needle should end up.
    Target,
}

impl RegionType {
    pub fn abbrev(self) -> &'static str {
        match self {
            RegionType::Unknown => "UR",
            RegionType::Safe => "SR",
            RegionType::Critical => "CR",
            RegionType::Detection => "DR",
            RegionType::Target => "TR",
        }
    }
}

impl fmt::Display for RegionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

/// A closed disc. Only CRs and TRs are stored explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: Point,
    pub radius: f64,
    pub kind: RegionType,
}

impl Region {
    pub fn critical(center: Point, radius: f64) -> Self {
        Self { center, radius, kind: RegionType::Critical }
    }

    pub fn target(center: Point, radius: f64) -> Self {
        Self { center, radius, kind: RegionType::Target }
    }

    pub fn contains(&self, p: Point) -> bool {
        self.center.dist(p) <= self.radius
    }

    /// Signed distance from `p` to the disc boundary (negative inside).
    pub fn boundary_dist(&self, p: Point) -> f64 {
        self.center.dist(p) - self.radius
    }
}

/// Index of a square quantization cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }
}

/// The (possibly partial) knowledge of the environment.
///
/// Update operations return a new map; a map is never mutated after it has
/// been handed to a synthesis step.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    workspace: Rect,
    crs: Vec<Region>,
    tr: Region,
    dr_width: f64,
    cell_size: f64,
    cells_x: usize,
    cells_y: usize,
    known_safe: Vec<bool>,
}

impl RegionMap {
    pub fn new(
        workspace: Rect,
        tr: Region,
        crs: Vec<Region>,
        dr_width: f64,
        cell_size: f64,
    ) -> Result<Self> {
        if !(workspace.width() > 0.0 && workspace.height() > 0.0) {
            return Err(Error::Config("workspace must have positive extent".into()));
        }
        if !(cell_size > 0.0) || !(dr_width >= 0.0) {
            return Err(Error::Config("cell size must be > 0 and dr width >= 0".into()));
        }
        for r in crs.iter().chain(std::iter::once(&tr)) {
            if !(r.radius > 0.0) {
                return Err(Error::Config(format!("region radius must be > 0, got {}", r.radius)));
            }
            if !workspace.intersects_disc(r.center, r.radius) {
                return Err(Error::Config(format!(
                    "region at ({:.2}, {:.2}) does not intersect the workspace",
                    r.center.x, r.center.y
                )));
            }
        }
        if tr.kind != RegionType::Target || crs.iter().any(|c| c.kind != RegionType::Critical) {
            return Err(Error::Config("region kinds must be CR for obstacles and TR for the target".into()));
        }
        let cells_x = (workspace.width() / cell_size).ceil() as usize;
        let cells_y = (workspace.height() / cell_size).ceil() as usize;
        Ok(Self {
            workspace,
            crs,
            tr,
            dr_width,
            cell_size,
            cells_x,
            cells_y,
            known_safe: vec![false; cells_x * cells_y],
        })
    }

    pub fn workspace(&self) -> Rect {
        self.workspace
    }

    pub fn crs(&self) -> &[Region] {
        &self.crs
    }

    pub fn tr(&self) -> Region {
        self.tr
    }

    pub fn dr_width(&self) -> f64 {
        self.dr_width
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cells(&self) -> (usize, usize) {
        (self.cells_x, self.cells_y)
    }

    /// Cell containing `p`. Points on the upper workspace edge belong to the
    /// last cell.
    pub fn cell_of(&self, p: Point) -> Result<Cell> {
        if !self.workspace.contains(p) {
            return Err(Error::OutsideWorkspace { x: p.x, y: p.y });
        }
        let cx = ((p.x - self.workspace.x_min) / self.cell_size).floor() as i32;
        let cy = ((p.y - self.workspace.y_min) / self.cell_size).floor() as i32;
        Ok(Cell::new(
            cx.min(self.cells_x as i32 - 1),
            cy.min(self.cells_y as i32 - 1),
        ))
    }

    pub fn cell_center(&self, c: Cell) -> Point {
        Point::new(
            self.workspace.x_min + (c.x as f64 + 0.5) * self.cell_size,
            self.workspace.y_min + (c.y as f64 + 0.5) * self.cell_size,
        )
    }

    fn cell_slot(&self, c: Cell) -> Option<usize> {
        if c.x < 0 || c.y < 0 || c.x as usize >= self.cells_x || c.y as usize >= self.cells_y {
            None
        } else {
            Some(c.y as usize * self.cells_x + c.x as usize)
        }
    }

    pub fn is_known_safe(&self, c: Cell) -> bool {
        self.cell_slot(c).is_some_and(|i| self.known_safe[i])
    }

    /// Classify a workspace point with priority CR > DR > TR > SR > UR.
    pub fn classify(&self, p: Point) -> Result<RegionType> {
        let cell = self.cell_of(p)?;
        if let Some(kind) = self.obstacle_kind(p) {
            return Ok(kind);
        }
        if self.tr.contains(p) {
            return Ok(RegionType::Target);
        }
        if self.is_known_safe(cell) {
            Ok(RegionType::Safe)
        } else {
            Ok(RegionType::Unknown)
        }
    }

    /// CR or DR if `p` lies in one, without the workspace check.
    pub fn obstacle_kind(&self, p: Point) -> Option<RegionType> {
        let mut in_dr = false;
        for cr in &self.crs {
            let d = cr.boundary_dist(p);
            if d <= 0.0 {
                return Some(RegionType::Critical);
            }
            if d <= self.dr_width {
                in_dr = true;
            }
        }
        in_dr.then_some(RegionType::Detection)
    }

    /// Whether `p` lies in any CR or DR. Used by collision checks, which must
    /// treat both as avoid states.
    pub fn is_blocked(&self, p: Point) -> bool {
        self.is_blocked_with(p, 0.0)
    }

    /// Like [`RegionMap::is_blocked`] with every DR widened by `extra` mm.
    pub fn is_blocked_with(&self, p: Point, extra: f64) -> bool {
        self.crs.iter().any(|cr| cr.boundary_dist(p) <= self.dr_width + extra)
    }

    /// Add a CR discovered online. Known-safe cells whose centers fall into the
    /// new CR or its DR are demoted.
    pub fn add_discovered_cr(&self, est_center: Point, assumed_radius: f64) -> Result<RegionMap> {
        if !(assumed_radius > 0.0) {
            return Err(Error::Usage(format!("assumed radius must be > 0, got {assumed_radius}")));
        }
        let mut next = self.clone();
        let cr = Region::critical(est_center, assumed_radius);
        next.crs.push(cr);
        for cy in 0..self.cells_y {
            for cx in 0..self.cells_x {
                let i = cy * self.cells_x + cx;
                if next.known_safe[i] {
                    let c = self.cell_center(Cell::new(cx as i32, cy as i32));
                    if cr.boundary_dist(c) <= self.dr_width {
                        next.known_safe[i] = false;
                    }
                }
            }
        }
        Ok(next)
    }

    /// Promote cells to known safe. Cells inside CR/DR/TR keep their class
    /// through the classification priority.
    pub fn mark_safe(&self, cells: &[Cell]) -> RegionMap {
        let mut next = self.clone();
        for &c in cells {
            if let Some(i) = next.cell_slot(c) {
                next.known_safe[i] = true;
            }
        }
        next
    }

    /// True iff the detection band is wider than one measurable step plus the
    /// worst-case sensor error, so that a CR is always sensed before contact.
    pub fn validate_margins(&self, max_step: f64, max_sensor_error: f64) -> bool {
        max_step > 0.0 && self.dr_width > max_step + max_sensor_error
    }

    /// Smallest distance from any path point to a CR boundary.
    pub fn min_clearance(&self, path: &[Point]) -> f64 {
        path.iter()
            .flat_map(|&p| self.crs.iter().map(move |cr| cr.boundary_dist(p)))
            .fold(NO_CLEARANCE_LIMIT, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_map() -> RegionMap {
        RegionMap::new(
            Rect::default(),
            Region::target(Point::new(90.0, 90.0), 4.0),
            vec![],
            5.0,
            1.0,
        )
        .unwrap()
    }

    fn in_closed_disc(c: Point, r: f64, p: Point) -> bool {
        let dx = p.x - c.x;
        let dy = p.y - c.y;
        dx * dx + dy * dy <= r * r + 1e-9
    }

    #[test]
    fn cr_center_is_cr_and_annulus_is_dr() {
        let map = empty_map().add_discovered_cr(Point::new(50.0, 50.0), 3.0).unwrap();
        assert_eq!(map.classify(Point::new(50.0, 50.0)).unwrap(), RegionType::Critical);
        assert_eq!(map.classify(Point::new(50.0 + 3.0 + 2.5, 50.0)).unwrap(), RegionType::Detection);
        assert_eq!(map.classify(Point::new(50.0 + 3.0 + 5.5, 50.0)).unwrap(), RegionType::Unknown);
    }

    #[test]
    fn boundary_is_closed() {
        let c = Point::new(40.0, 40.0);
        let map = empty_map().add_discovered_cr(c, 3.0).unwrap();
        for k in 0..64 {
            let a = k as f64 * std::f64::consts::TAU / 64.0;
            // pull a hair inwards so rounding in cos/sin stays on the closed side
            let p = Point::new(c.x + (3.0 - 1e-12) * a.cos(), c.y + (3.0 - 1e-12) * a.sin());
            assert!(in_closed_disc(c, 3.0, p));
            assert_eq!(map.classify(p).unwrap(), RegionType::Critical);
        }
        let p = Point::new(43.0, 40.0);
        assert!(in_closed_disc(c, 3.0, p));
        assert_eq!(map.classify(p).unwrap(), RegionType::Critical);
    }

    #[test]
    fn outside_workspace_is_error() {
        let map = empty_map();
        assert!(matches!(map.classify(Point::new(-1.0, 5.0)), Err(Error::OutsideWorkspace { .. })));
    }

    #[test]
    fn discovered_cr_is_classified() {
        let map = empty_map().add_discovered_cr(Point::new(10.0, 10.0), 3.0).unwrap();
        assert_eq!(map.classify(Point::new(10.0, 10.0)).unwrap(), RegionType::Critical);
    }

    #[test]
    fn discovery_overlapping_tr_keeps_map_well_formed() {
        let map = empty_map().add_discovered_cr(Point::new(90.0, 90.0), 3.0).unwrap();
        assert_eq!(map.classify(Point::new(90.0, 90.0)).unwrap(), RegionType::Critical);
        assert_eq!(map.crs().len(), 1);
    }

    #[test]
    fn duplicate_discovery_leaves_classification_unchanged() {
        let once = empty_map().add_discovered_cr(Point::new(30.0, 60.0), 4.0).unwrap();
        let twice = once.add_discovered_cr(Point::new(30.0, 60.0), 4.0).unwrap();
        assert_eq!(twice.crs().len(), 2);
        for iy in 0..=200 {
            for ix in 0..=200 {
                let p = Point::new(ix as f64 * 0.5, iy as f64 * 0.5);
                assert_eq!(once.classify(p).unwrap(), twice.classify(p).unwrap());
            }
        }
    }

    #[test]
    fn discovery_demotes_safe_cells() {
        let cells: Vec<Cell> = (0..100).map(|x| Cell::new(x, 50)).collect();
        let map = empty_map().mark_safe(&cells);
        assert!(map.is_known_safe(Cell::new(20, 50)));
        let map = map.add_discovered_cr(Point::new(20.5, 50.5), 2.0).unwrap();
        assert!(!map.is_known_safe(Cell::new(20, 50)));
        assert!(!map.is_known_safe(Cell::new(27, 50)));
        assert!(map.is_known_safe(Cell::new(28, 50)));
    }

    #[test]
    fn mark_safe_promotes_unknown_only() {
        let map = empty_map().add_discovered_cr(Point::new(50.5, 50.5), 3.0).unwrap();
        let marked = map.mark_safe(&[Cell::new(10, 10), Cell::new(50, 50)]);
        assert_eq!(marked.classify(Point::new(10.5, 10.5)).unwrap(), RegionType::Safe);
        assert_eq!(marked.classify(Point::new(50.5, 50.5)).unwrap(), RegionType::Critical);
    }

    #[test]
    fn marking_everything_leaves_no_unknown() {
        let map = empty_map();
        let (nx, ny) = map.cells();
        let all: Vec<Cell> = (0..ny as i32)
            .flat_map(|y| (0..nx as i32).map(move |x| Cell::new(x, y)))
            .collect();
        let map = map.mark_safe(&all);
        for iy in 0..=100 {
            for ix in 0..=100 {
                let p = Point::new(ix as f64, iy as f64);
                let t = map.classify(p).unwrap();
                assert_ne!(t, RegionType::Unknown, "{p:?}");
            }
        }
    }

    #[test]
    fn margin_validation() {
        let map = empty_map();
        assert!(map.validate_margins(2.0, 1.0));
        let narrow = RegionMap::new(Rect::default(), map.tr(), vec![], 2.0, 1.0).unwrap();
        assert!(!narrow.validate_margins(2.0, 1.0));
        // 150 Hz at 5 mm/s with a 3 mm worst-case tracking error against a 5 mm band
        assert!(map.validate_margins(0.03335, 3.0));
    }

    #[test]
    fn clearance() {
        let map = empty_map();
        assert_eq!(map.min_clearance(&[Point::new(1.0, 1.0)]), NO_CLEARANCE_LIMIT);
        let map = map.add_discovered_cr(Point::new(50.0, 50.0), 3.0).unwrap();
        assert!((map.min_clearance(&[Point::new(60.0, 50.0)]) - 7.0).abs() < 1e-12);
        let path = [Point::new(60.0, 50.0), Point::new(50.0, 57.0), Point::new(38.0, 50.0)];
        let brute = path
            .iter()
            .map(|p| p.dist(Point::new(50.0, 50.0)) - 3.0)
            .fold(f64::INFINITY, f64::min);
        assert!((brute - 4.0).abs() < 1e-12);
        assert!((map.min_clearance(&path) - brute).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_regions() {
        let tr = Region::target(Point::new(50.0, 50.0), 0.0);
        assert!(RegionMap::new(Rect::default(), tr, vec![], 5.0, 1.0).is_err());
        let tr = Region::target(Point::new(500.0, 50.0), 2.0);
        assert!(RegionMap::new(Rect::default(), tr, vec![], 5.0, 1.0).is_err());
        assert!(empty_map().add_discovered_cr(Point::new(1.0, 1.0), 0.0).is_err());
    }
}
