use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::grid::{Cell, CellState, OccupancyGrid};
use crate::geometry::{Point2, Pose};
use crate::par::{self, Execution};

/// A maximal 4-connected group of Free cells that border Unknown space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    /// Member cells in row-major order.
    pub cells: Vec<Cell>,
    pub centroid: Point2,
    pub size: usize,
    /// Whether the frontier opens onto a sizeable unexplored region.
    pub rho: bool,
    /// Distance from the centroid to the nearest retrieved pose; ∞ without poses.
    pub dist_to_retrieved: f64,
}

impl Frontier {
    /// Member cell whose center is closest to the centroid.
    pub fn anchor_cell(&self, grid: &OccupancyGrid) -> Cell {
        *self
            .cells
            .iter()
            .min_by(|a, b| {
                grid.cell_center(**a)
                    .distance(self.centroid)
                    .total_cmp(&grid.cell_center(**b).distance(self.centroid))
            })
            .expect("frontier has at least one cell")
    }
}

pub const DEFAULT_MIN_UNKNOWN_AREA: usize = 10;

/// The exploration map handed to frontier pruning: grid, landmarks from
/// retrieved observations, and annotated frontiers.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedExplorationMap {
    pub grid: OccupancyGrid,
    pub retrieved_poses: Vec<Pose>,
    pub frontiers: Vec<Frontier>,
    pub agent_pose: Pose,
}

pub fn is_frontier_cell(grid: &OccupancyGrid, c: Cell) -> bool {
    grid.is_free(c) && c.neighbors4().iter().any(|n| grid.is_unknown(*n))
}

/// Frontier components with centroid and `rho` populated, ordered by their
/// first cell in row-major order. `dist_to_retrieved` starts at ∞.
pub fn extract_frontiers(grid: &OccupancyGrid, min_unknown_area: usize) -> Vec<Frontier> {
    let n = grid.cells().len();
    let mut qualifies = vec![false; n];
    for (i, q) in qualifies.iter_mut().enumerate() {
        *q = is_frontier_cell(grid, grid.cell_at(i));
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !qualifies[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            let c = grid.cell_at(i);
            members.push(c);
            for nb in c.neighbors4() {
                if let Some(j) = grid.index(nb) {
                    if qualifies[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        members.sort_by_key(|c| (c.y, c.x));
        let (sx, sy) = members.iter().fold((0.0, 0.0), |(sx, sy), c| {
            let p = grid.cell_center(*c);
            (sx + p.x, sy + p.y)
        });
        let size = members.len();
        let mut f = Frontier {
            centroid: Point2::new(sx / size as f64, sy / size as f64),
            size,
            cells: members,
            rho: false,
            dist_to_retrieved: f64::INFINITY,
        };
        f.rho = compute_rho(grid, &f, min_unknown_area);
        out.push(f);
    }
    out
}

/// True iff the Unknown region reachable (4-connected) from the frontier's
/// Unknown neighbors holds at least `min_unknown_area` cells.
pub fn compute_rho(grid: &OccupancyGrid, frontier: &Frontier, min_unknown_area: usize) -> bool {
    if min_unknown_area == 0 {
        return true;
    }
    let mut seen = vec![false; grid.cells().len()];
    let mut queue = VecDeque::new();
    let mut count = 0usize;
    for c in &frontier.cells {
        for nb in c.neighbors4() {
            if let Some(j) = grid.index(nb) {
                if grid.cells()[j] == CellState::Unknown && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        count += 1;
        if count >= min_unknown_area {
            return true;
        }
        for nb in grid.cell_at(i).neighbors4() {
            if let Some(j) = grid.index(nb) {
                if grid.cells()[j] == CellState::Unknown && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    false
}

/// Composes the annotated map and fills each frontier's distance to the
/// nearest retrieved pose (planar Euclidean, from the centroid).
pub fn render_retrieved_poses(
    grid: OccupancyGrid,
    poses: Vec<Pose>,
    agent: Pose,
    frontiers: Vec<Frontier>,
) -> AnnotatedExplorationMap {
    render_retrieved_poses_with(grid, poses, agent, frontiers, Execution::default())
}

pub fn render_retrieved_poses_with(
    grid: OccupancyGrid,
    poses: Vec<Pose>,
    agent: Pose,
    frontiers: Vec<Frontier>,
    exec: Execution,
) -> AnnotatedExplorationMap {
    let points: Vec<Point2> = poses.iter().map(Pose::xy).collect();
    let frontiers = par::map_slice(&frontiers, exec, |f| {
        let d = points
            .iter()
            .map(|p| f.centroid.distance(*p))
            .fold(f64::INFINITY, f64::min);
        Frontier {
            dist_to_retrieved: d,
            ..f.clone()
        }
    });
    AnnotatedExplorationMap {
        grid,
        retrieved_poses: poses,
        frontiers,
        agent_pose: agent,
    }
}

/// Frontier pruning: with exploration required keep frontiers that lead to
/// unexplored space, otherwise keep those farther than `d_min` from every
/// retrieved landmark. Order is preserved.
pub fn prune_frontiers(map: &AnnotatedExplorationMap, explore: bool, d_min: f64) -> Vec<Frontier> {
    map.frontiers
        .iter()
        .filter(|f| {
            if explore {
                f.rho
            } else {
                f.dist_to_retrieved > d_min
            }
        })
        .cloned()
        .collect()
}
