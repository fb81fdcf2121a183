use serde::{Deserialize, Serialize};

use super::PhysicalError;
use crate::geometry::{Point2, Pose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

/// Integer grid coordinate. May lie outside a particular grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i64,
    pub y: i64,
}

impl Cell {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    pub fn neighbors4(self) -> [Cell; 4] {
        [
            Cell::new(self.x + 1, self.y),
            Cell::new(self.x - 1, self.y),
            Cell::new(self.x, self.y + 1),
            Cell::new(self.x, self.y - 1),
        ]
    }
}

/// One depth return: bearing relative to the pose heading, measured range, and
/// whether the ray terminated on an obstacle (false for max-range misses).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRay {
    pub bearing: f64,
    pub range: f64,
    pub hit: bool,
}

/// 2D exploration map. Cell `(i, j)` covers
/// `[origin.x + i·res, origin.x + (i+1)·res) × [origin.y + j·res, origin.y + (j+1)·res)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    resolution: f64,
    origin: Point2,
    width: usize,
    height: usize,
    cells: Vec<CellState>,
}

pub const DEFAULT_RESOLUTION: f64 = 0.1;
// Extra room added around scan endpoints when the grid has to grow.
const GROWTH_MARGIN_M: f64 = 1.0;

impl OccupancyGrid {
    /// All-Unknown grid.
    pub fn new(
        resolution: f64,
        origin: Point2,
        width: usize,
        height: usize,
    ) -> Result<Self, PhysicalError> {
        Self::from_cells(
            resolution,
            origin,
            width,
            height,
            vec![CellState::Unknown; width * height],
        )
    }

    pub fn from_cells(
        resolution: f64,
        origin: Point2,
        width: usize,
        height: usize,
        cells: Vec<CellState>,
    ) -> Result<Self, PhysicalError> {
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(PhysicalError::InvalidGrid(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if !origin.is_finite() {
            return Err(PhysicalError::InvalidGrid("non-finite origin".into()));
        }
        if width == 0 || height == 0 {
            return Err(PhysicalError::InvalidGrid("empty grid".into()));
        }
        if cells.len() != width * height {
            return Err(PhysicalError::InvalidGrid(format!(
                "expected {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        Ok(Self {
            resolution,
            origin,
            width,
            height,
            cells,
        })
    }

    /// Square all-Unknown grid of side `2·half_extent` around `center`, with the
    /// origin snapped to a multiple of the resolution.
    pub fn centered_on(
        center: Point2,
        half_extent: f64,
        resolution: f64,
    ) -> Result<Self, PhysicalError> {
        let snap = |v: f64| ((v - half_extent) / resolution).floor() * resolution;
        let origin = Point2::new(snap(center.x), snap(center.y));
        let side = ((2.0 * half_extent) / resolution).ceil() as usize + 1;
        Self::new(resolution, origin, side, side)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }
    pub fn origin(&self) -> Point2 {
        self.origin
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    #[inline]
    pub fn index(&self, c: Cell) -> Option<usize> {
        if self.contains(c) {
            Some(c.y as usize * self.width + c.x as usize)
        } else {
            None
        }
    }

    pub fn cell_at(&self, idx: usize) -> Cell {
        Cell::new((idx % self.width) as i64, (idx / self.width) as i64)
    }

    pub fn get(&self, c: Cell) -> Option<CellState> {
        self.index(c).map(|i| self.cells[i])
    }

    pub fn set(&mut self, c: Cell, s: CellState) -> bool {
        match self.index(c) {
            Some(i) => {
                self.cells[i] = s;
                true
            }
            None => false,
        }
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.get(c) == Some(CellState::Free)
    }

    pub fn is_unknown(&self, c: Cell) -> bool {
        self.get(c) == Some(CellState::Unknown)
    }

    /// Cell containing `p`, whether or not it lies inside the grid.
    pub fn world_to_cell(&self, p: Point2) -> Cell {
        Cell::new(
            ((p.x - self.origin.x) / self.resolution).floor() as i64,
            ((p.y - self.origin.y) / self.resolution).floor() as i64,
        )
    }

    pub fn cell_center(&self, c: Cell) -> Point2 {
        Point2::new(
            self.origin.x + (c.x as f64 + 0.5) * self.resolution,
            self.origin.y + (c.y as f64 + 0.5) * self.resolution,
        )
    }

    pub fn contains_point(&self, p: Point2) -> bool {
        p.is_finite() && self.contains(self.world_to_cell(p))
    }

    pub fn count(&self, s: CellState) -> usize {
        self.cells.iter().filter(|c| **c == s).count()
    }

    pub fn known_count(&self) -> usize {
        self.cells.len() - self.count(CellState::Unknown)
    }

    /// Copy of this grid enlarged (never shrunk) so that the world-space box
    /// `[lo, hi]` fits with `margin` meters to spare. Existing cells keep their
    /// states and world positions.
    pub fn grown_to_include(&self, lo: Point2, hi: Point2, margin: f64) -> OccupancyGrid {
        let r = self.resolution;
        let lo_c = self.world_to_cell(Point2::new(lo.x - margin, lo.y - margin));
        let hi_c = self.world_to_cell(Point2::new(hi.x + margin, hi.y + margin));
        let min_x = lo_c.x.min(0);
        let min_y = lo_c.y.min(0);
        let max_x = hi_c.x.max(self.width as i64 - 1);
        let max_y = hi_c.y.max(self.height as i64 - 1);
        if min_x == 0 && min_y == 0 && max_x == self.width as i64 - 1 && max_y == self.height as i64 - 1
        {
            return self.clone();
        }
        let w = (max_x - min_x + 1) as usize;
        let h = (max_y - min_y + 1) as usize;
        let mut cells = vec![CellState::Unknown; w * h];
        for y in 0..self.height {
            let dst = (y as i64 - min_y) as usize * w + (-min_x) as usize;
            cells[dst..dst + self.width]
                .copy_from_slice(&self.cells[y * self.width..(y + 1) * self.width]);
        }
        OccupancyGrid {
            resolution: r,
            origin: Point2::new(
                self.origin.x + min_x as f64 * r,
                self.origin.y + min_y as f64 * r,
            ),
            width: w,
            height: h,
            cells,
        }
    }

    /// Integrates one depth scan taken at `pose`. Cells crossed by a ray become
    /// Free, a ray's terminal cell becomes Occupied when it reports a hit, and
    /// Occupied cells are never cleared. The grid grows when endpoints fall
    /// outside it; the pose itself must already be inside.
    pub fn integrate_depth_scan(
        &self,
        pose: &Pose,
        scan: &[ScanRay],
        max_range: f64,
    ) -> Result<OccupancyGrid, PhysicalError> {
        let start = pose.xy();
        if !pose.is_finite() || !self.contains_point(start) {
            return Err(PhysicalError::OutOfBounds {
                x: start.x,
                y: start.y,
            });
        }
        let mut lo = start;
        let mut hi = start;
        let mut endpoints = Vec::with_capacity(scan.len());
        for (i, ray) in scan.iter().enumerate() {
            if !ray.range.is_finite() || !ray.bearing.is_finite() {
                return Err(PhysicalError::InvalidScan(format!("ray {i} is not finite")));
            }
            if ray.range < 0.0 || ray.range > max_range {
                return Err(PhysicalError::InvalidScan(format!(
                    "ray {i} range {} outside [0, {max_range}]",
                    ray.range
                )));
            }
            let heading = pose.yaw + ray.bearing;
            let end = Point2::new(
                start.x + ray.range * heading.cos(),
                start.y + ray.range * heading.sin(),
            );
            lo = Point2::new(lo.x.min(end.x), lo.y.min(end.y));
            hi = Point2::new(hi.x.max(end.x), hi.y.max(end.y));
            endpoints.push((end, ray.hit));
        }

        let mut grid = if self.contains_point(lo) && self.contains_point(hi) {
            self.clone()
        } else {
            self.grown_to_include(lo, hi, GROWTH_MARGIN_M)
        };

        // 0 = untouched, 1 = seen free, 2 = seen occupied; occupied wins.
        let mut marks = vec![0u8; grid.cells.len()];
        let self_cell = grid.world_to_cell(start);
        if let Some(i) = grid.index(self_cell) {
            marks[i] = 1;
        }
        let mut visited = Vec::new();
        for (end, hit) in &endpoints {
            visited.clear();
            grid.trace(start, *end, &mut visited);
            let terminal = grid.world_to_cell(*end);
            for c in &visited {
                if *c == terminal {
                    continue;
                }
                if let Some(i) = grid.index(*c) {
                    marks[i] = marks[i].max(1);
                }
            }
            if let Some(i) = grid.index(terminal) {
                marks[i] = marks[i].max(if *hit { 2 } else { 1 });
            }
        }
        for (cell, mark) in grid.cells.iter_mut().zip(&marks) {
            match mark {
                2 => *cell = CellState::Occupied,
                1 if *cell != CellState::Occupied => *cell = CellState::Free,
                _ => {}
            }
        }
        Ok(grid)
    }

    /// Cells crossed by the segment `a`→`b`, in order (grid traversal).
    pub fn trace(&self, a: Point2, b: Point2, out: &mut Vec<Cell>) {
        let r = self.resolution;
        let (x0, y0) = ((a.x - self.origin.x) / r, (a.y - self.origin.y) / r);
        let (x1, y1) = ((b.x - self.origin.x) / r, (b.y - self.origin.y) / r);
        let mut cx = x0.floor() as i64;
        let mut cy = y0.floor() as i64;
        let ex = x1.floor() as i64;
        let ey = y1.floor() as i64;
        let dx = x1 - x0;
        let dy = y1 - y0;
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        let delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
        let delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
        let mut t_x = if dx > 0.0 {
            (cx as f64 + 1.0 - x0) * delta_x
        } else if dx < 0.0 {
            (x0 - cx as f64) * delta_x
        } else {
            f64::INFINITY
        };
        let mut t_y = if dy > 0.0 {
            (cy as f64 + 1.0 - y0) * delta_y
        } else if dy < 0.0 {
            (y0 - cy as f64) * delta_y
        } else {
            f64::INFINITY
        };
        let steps = (ex - cx).abs() + (ey - cy).abs();
        out.push(Cell::new(cx, cy));
        for _ in 0..steps {
            if t_x < t_y {
                if cx == ex {
                    cy += step_y;
                    t_y += delta_y;
                } else {
                    cx += step_x;
                    t_x += delta_x;
                }
            } else if cy == ey {
                cx += step_x;
                t_x += delta_x;
            } else {
                cy += step_y;
                t_y += delta_y;
            }
            out.push(Cell::new(cx, cy));
        }
    }
}
