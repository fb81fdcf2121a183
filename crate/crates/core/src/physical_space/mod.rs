//! Physical space: the 2D occupancy exploration map, frontier extraction and
//! pruning, path planning and path-efficiency metrics.

mod export;
mod frontier;
mod grid;
mod planning;

pub use export::{
    decode_rle, encode_rle, gray_level, to_pgm, FrontierRecord, MapSnapshot, PgmFormat,
    MAP_SNAPSHOT_VERSION,
};
pub use frontier::{
    compute_rho, extract_frontiers, is_frontier_cell, prune_frontiers, render_retrieved_poses,
    render_retrieved_poses_with, AnnotatedExplorationMap, Frontier, DEFAULT_MIN_UNKNOWN_AREA,
};
pub use grid::{Cell, CellState, OccupancyGrid, ScanRay, DEFAULT_RESOLUTION};
pub use planning::{inflation_mask, shortest_path, successors, DistanceField, GridPath, MOVES};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicalError {
    #[error("point ({x:.3}, {y:.3}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error("invalid scan: {0}")]
    InvalidScan(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Success weighted by path length for one episode.
///
/// Zero on failure; otherwise `shortest / max(actual, shortest)`. A successful
/// episode with both lengths zero scores 1.
pub fn compute_spl(success: bool, shortest_len: f64, actual_len: f64) -> f64 {
    if !success {
        return 0.0;
    }
    let denom = actual_len.max(shortest_len);
    if denom <= 0.0 || !denom.is_finite() {
        return if denom == 0.0 { 1.0 } else { 0.0 };
    }
    (shortest_len / denom).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::compute_spl;

    #[test]
    fn spl_examples() {
        assert_eq!(compute_spl(true, 10.0, 10.0), 1.0);
        assert_eq!(compute_spl(false, 10.0, 10.0), 0.0);
        assert_eq!(compute_spl(true, 5.0, 10.0), 0.5);
        assert_eq!(compute_spl(true, 0.0, 0.0), 1.0);
        assert_eq!(compute_spl(true, 4.0, 2.0), 1.0);
    }
}
