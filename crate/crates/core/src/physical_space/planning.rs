//! Shortest paths on the occupancy grid (8-connected, diagonal cost √2, no
//! corner cutting through non-free cells).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::grid::{Cell, CellState, OccupancyGrid};
use super::PhysicalError;
use crate::geometry::{Point2, Pose};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// A planned path: cell-center waypoints from the start cell to the goal cell.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPath {
    pub waypoints: Vec<Point2>,
    /// Meters.
    pub length: f64,
}

/// The eight moves with their cost in cells.
pub const MOVES: [(i64, i64, f64); 8] = [
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, SQRT2),
    (1, -1, SQRT2),
    (-1, 1, SQRT2),
    (-1, -1, SQRT2),
];

/// Successors of `c` under `passable`, honoring the no-corner-cutting rule.
pub fn successors<F: Fn(Cell) -> bool>(c: Cell, passable: &F) -> impl Iterator<Item = (Cell, f64)> + '_ {
    MOVES.iter().filter_map(move |&(dx, dy, cost)| {
        let n = Cell::new(c.x + dx, c.y + dy);
        if !passable(n) {
            return None;
        }
        if dx != 0 && dy != 0 && !(passable(Cell::new(c.x + dx, c.y)) && passable(Cell::new(c.x, c.y + dy))) {
            return None;
        }
        Some((n, cost))
    })
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    g: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn octile(a: Cell, b: Cell) -> f64 {
    let dx = (a.x - b.x).abs() as f64;
    let dy = (a.y - b.y).abs() as f64;
    dx.max(dy) + (SQRT2 - 1.0) * dx.min(dy)
}

/// Minimum-cost path through Free cells from the pose's cell to the cell
/// containing `to`. `Ok(None)` means unreachable (including a non-Free target).
/// The start cell itself need not be Free.
pub fn shortest_path(
    grid: &OccupancyGrid,
    from: &Pose,
    to: Point2,
) -> Result<Option<GridPath>, PhysicalError> {
    let start_pt = from.xy();
    if !grid.contains_point(start_pt) {
        return Err(PhysicalError::OutOfBounds {
            x: start_pt.x,
            y: start_pt.y,
        });
    }
    let start = grid.world_to_cell(start_pt);
    let goal = grid.world_to_cell(to);
    if start == goal {
        return Ok(Some(GridPath {
            waypoints: vec![grid.cell_center(start)],
            length: 0.0,
        }));
    }
    if !grid.is_free(goal) {
        return Ok(None);
    }
    let passable = |c: Cell| c == start || grid.is_free(c);
    let n = grid.cells().len();
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let si = grid.index(start).expect("start inside");
    let gi = grid.index(goal).expect("goal is free, hence inside");
    g[si] = 0.0;
    let mut open = BinaryHeap::new();
    open.push(Open {
        f: octile(start, goal),
        g: 0.0,
        idx: si,
    });
    while let Some(Open { g: gc, idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if idx == gi {
            break;
        }
        let c = grid.cell_at(idx);
        for (nb, cost) in successors(c, &passable) {
            let j = grid.index(nb).expect("passable cells are inside");
            let cand = gc + cost;
            if cand < g[j] {
                g[j] = cand;
                parent[j] = idx;
                open.push(Open {
                    f: cand + octile(nb, goal),
                    g: cand,
                    idx: j,
                });
            }
        }
    }
    if !g[gi].is_finite() {
        return Ok(None);
    }
    Ok(Some(reconstruct(grid, &parent, si, gi, g[gi])))
}

fn reconstruct(grid: &OccupancyGrid, parent: &[usize], si: usize, gi: usize, cost: f64) -> GridPath {
    let mut cells = vec![gi];
    let mut cur = gi;
    while cur != si {
        cur = parent[cur];
        cells.push(cur);
    }
    cells.reverse();
    GridPath {
        waypoints: cells
            .into_iter()
            .map(|i| grid.cell_center(grid.cell_at(i)))
            .collect(),
        length: cost * grid.resolution(),
    }
}

/// Free cells within `radius_cells` (Euclidean, in cells) of an Occupied cell.
pub fn inflation_mask(grid: &OccupancyGrid, radius_cells: f64) -> Vec<bool> {
    let mut mask = vec![false; grid.cells().len()];
    if radius_cells <= 0.0 {
        return mask;
    }
    let r = radius_cells.ceil() as i64;
    for (i, s) in grid.cells().iter().enumerate() {
        if *s != CellState::Occupied {
            continue;
        }
        let c = grid.cell_at(i);
        for dy in -r..=r {
            for dx in -r..=r {
                if ((dx * dx + dy * dy) as f64).sqrt() > radius_cells {
                    continue;
                }
                if let Some(j) = grid.index(Cell::new(c.x + dx, c.y + dy)) {
                    mask[j] = true;
                }
            }
        }
    }
    mask
}

/// Single-source shortest-path costs over a caller-defined passable set.
#[derive(Clone, Debug)]
pub struct DistanceField {
    start: usize,
    /// Cells (not meters); ∞ for unreachable.
    cost: Vec<f64>,
    parent: Vec<usize>,
    resolution: f64,
}

impl DistanceField {
    pub fn compute<F: Fn(Cell) -> bool>(grid: &OccupancyGrid, start: Cell, passable: F) -> Option<Self> {
        let si = grid.index(start)?;
        let n = grid.cells().len();
        let mut cost = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut closed = vec![false; n];
        cost[si] = 0.0;
        let mut open = BinaryHeap::new();
        open.push(Open {
            f: 0.0,
            g: 0.0,
            idx: si,
        });
        let passable = |c: Cell| c == start || (grid.contains(c) && passable(c));
        while let Some(Open { g: gc, idx, .. }) = open.pop() {
            if closed[idx] {
                continue;
            }
            closed[idx] = true;
            for (nb, step) in successors(grid.cell_at(idx), &passable) {
                let j = grid.index(nb).expect("inside");
                let cand = gc + step;
                if cand < cost[j] {
                    cost[j] = cand;
                    parent[j] = idx;
                    open.push(Open {
                        f: cand,
                        g: cand,
                        idx: j,
                    });
                }
            }
        }
        Some(Self {
            start: si,
            cost,
            parent,
            resolution: grid.resolution(),
        })
    }

    /// Path length in meters, if reachable.
    pub fn distance(&self, grid: &OccupancyGrid, c: Cell) -> Option<f64> {
        let i = grid.index(c)?;
        let d = self.cost[i];
        d.is_finite().then_some(d * self.resolution)
    }

    pub fn path_to(&self, grid: &OccupancyGrid, c: Cell) -> Option<GridPath> {
        let i = grid.index(c)?;
        if !self.cost[i].is_finite() {
            return None;
        }
        Some(reconstruct(grid, &self.parent, self.start, i, self.cost[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor() -> OccupancyGrid {
        let mut g = OccupancyGrid::new(0.5, Point2::new(0.0, 0.0), 5, 1).unwrap();
        for x in 0..5 {
            g.set(Cell::new(x, 0), CellState::Free);
        }
        g
    }

    #[test]
    fn identity_path() {
        let g = corridor();
        let p = shortest_path(&g, &Pose::planar(1.1, 0.2, 0.0), Point2::new(1.2, 0.3))
            .unwrap()
            .unwrap();
        assert_eq!(p.length, 0.0);
        assert_eq!(p.waypoints.len(), 1);
    }

    #[test]
    fn straight_corridor() {
        let g = corridor();
        let p = shortest_path(&g, &Pose::planar(0.25, 0.25, 0.0), Point2::new(2.25, 0.25))
            .unwrap()
            .unwrap();
        assert!((p.length - 2.0).abs() < 1e-12);
        assert_eq!(p.waypoints.len(), 5);
    }

    #[test]
    fn occupied_target_is_unreachable() {
        let mut g = corridor();
        g.set(Cell::new(4, 0), CellState::Occupied);
        assert!(shortest_path(&g, &Pose::planar(0.25, 0.25, 0.0), Point2::new(2.25, 0.25))
            .unwrap()
            .is_none());
        assert!(shortest_path(&g, &Pose::planar(9.0, 0.25, 0.0), Point2::new(0.25, 0.25)).is_err());
    }

    #[test]
    fn no_corner_cutting() {
        // . #
        // . .   diagonal (0,0)->(1,1) blocked by (1,0)? no: (1,1) is '#'.
        let mut g = OccupancyGrid::new(1.0, Point2::new(0.0, 0.0), 2, 2).unwrap();
        g.set(Cell::new(0, 0), CellState::Free);
        g.set(Cell::new(1, 1), CellState::Free);
        g.set(Cell::new(1, 0), CellState::Occupied);
        g.set(Cell::new(0, 1), CellState::Occupied);
        assert!(shortest_path(&g, &Pose::planar(0.5, 0.5, 0.0), Point2::new(1.5, 1.5))
            .unwrap()
            .is_none());
    }

    #[test]
    fn distance_field_agrees_with_astar() {
        let mut g = OccupancyGrid::new(0.1, Point2::new(0.0, 0.0), 6, 6).unwrap();
        for i in 0..36 {
            let c = g.cell_at(i);
            g.set(c, if c.x == 3 && c.y < 5 { CellState::Occupied } else { CellState::Free });
        }
        let start = Cell::new(0, 0);
        let field = DistanceField::compute(&g, start, |c| g.is_free(c)).unwrap();
        let goal = Cell::new(5, 0);
        let p = shortest_path(&g, &Pose::planar(0.05, 0.05, 0.0), g.cell_center(goal))
            .unwrap()
            .unwrap();
        assert!((field.distance(&g, goal).unwrap() - p.length).abs() < 1e-9);
        assert_eq!(field.path_to(&g, goal).unwrap().length, field.distance(&g, goal).unwrap());
    }

    #[test]
    fn inflation_marks_neighbors() {
        let mut g = OccupancyGrid::new(1.0, Point2::new(0.0, 0.0), 5, 5).unwrap();
        g.set(Cell::new(2, 2), CellState::Occupied);
        let m = inflation_mask(&g, 1.0);
        assert_eq!(m.iter().filter(|b| **b).count(), 5);
        let m = inflation_mask(&g, 1.5);
        assert_eq!(m.iter().filter(|b| **b).count(), 9);
    }
}
