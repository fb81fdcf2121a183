//! Map export: portable graymap images and the versioned text snapshot.

use serde::{Deserialize, Serialize};

use super::frontier::{AnnotatedExplorationMap, Frontier};
use super::grid::{CellState, OccupancyGrid};
use super::PhysicalError;
use crate::geometry::{Point2, Pose};

pub const MAP_SNAPSHOT_VERSION: u32 = 1;

pub fn gray_level(s: CellState) -> u8 {
    match s {
        CellState::Unknown => 128,
        CellState::Free => 255,
        CellState::Occupied => 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmFormat {
    /// ASCII `P2`.
    Plain,
    /// Binary `P5`.
    Raw,
}

/// Renders the grid as a PGM with the top image row at the highest y.
pub fn to_pgm(grid: &OccupancyGrid, format: PgmFormat) -> Vec<u8> {
    let (w, h) = (grid.width(), grid.height());
    let magic = match format {
        PgmFormat::Plain => "P2",
        PgmFormat::Raw => "P5",
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for y in (0..h).rev() {
        let row = &grid.cells()[y * w..(y + 1) * w];
        match format {
            PgmFormat::Raw => out.extend(row.iter().map(|s| gray_level(*s))),
            PgmFormat::Plain => {
                let line: Vec<String> = row.iter().map(|s| gray_level(*s).to_string()).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
    }
    out
}

/// Run-length encoding: `U12F3O1` = 12 Unknown, 3 Free, 1 Occupied (row-major).
pub fn encode_rle(cells: &[CellState]) -> String {
    let mut out = String::new();
    let mut iter = cells.iter().peekable();
    while let Some(s) = iter.next() {
        let mut n = 1usize;
        while iter.peek() == Some(&s) {
            iter.next();
            n += 1;
        }
        out.push(match s {
            CellState::Unknown => 'U',
            CellState::Free => 'F',
            CellState::Occupied => 'O',
        });
        out.push_str(&n.to_string());
    }
    out
}

pub fn decode_rle(s: &str) -> Result<Vec<CellState>, PhysicalError> {
    let bad = |m: &str| PhysicalError::InvalidGrid(format!("bad run-length data: {m}"));
    let mut out = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let state = match bytes[i] {
            b'U' => CellState::Unknown,
            b'F' => CellState::Free,
            b'O' => CellState::Occupied,
            other => return Err(bad(&format!("unexpected byte {other:#x}"))),
        };
        i += 1;
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let n: usize = s[start..i].parse().map_err(|_| bad("missing run length"))?;
        if n == 0 {
            return Err(bad("zero-length run"));
        }
        out.extend(std::iter::repeat_n(state, n));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierRecord {
    pub centroid: Point2,
    pub size: usize,
    pub rho: bool,
    /// `None` encodes ∞.
    pub dist_to_retrieved: Option<f64>,
    pub cells: Vec<[i64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSnapshot {
    pub version: u32,
    pub resolution: f64,
    pub origin: Point2,
    pub width: usize,
    pub height: usize,
    pub cells: String,
    #[serde(default)]
    pub agent_pose: Option<Pose>,
    #[serde(default)]
    pub retrieved_poses: Vec<Pose>,
    #[serde(default)]
    pub frontiers: Vec<FrontierRecord>,
}

impl MapSnapshot {
    pub fn from_grid(grid: &OccupancyGrid) -> Self {
        Self {
            version: MAP_SNAPSHOT_VERSION,
            resolution: grid.resolution(),
            origin: grid.origin(),
            width: grid.width(),
            height: grid.height(),
            cells: encode_rle(grid.cells()),
            agent_pose: None,
            retrieved_poses: Vec::new(),
            frontiers: Vec::new(),
        }
    }

    pub fn from_annotated(map: &AnnotatedExplorationMap) -> Self {
        let mut snap = Self::from_grid(&map.grid);
        snap.agent_pose = Some(map.agent_pose);
        snap.retrieved_poses = map.retrieved_poses.clone();
        snap.frontiers = map
            .frontiers
            .iter()
            .map(|f| FrontierRecord {
                centroid: f.centroid,
                size: f.size,
                rho: f.rho,
                dist_to_retrieved: f.dist_to_retrieved.is_finite().then_some(f.dist_to_retrieved),
                cells: f.cells.iter().map(|c| [c.x, c.y]).collect(),
            })
            .collect();
        snap
    }

    pub fn to_grid(&self) -> Result<OccupancyGrid, PhysicalError> {
        if self.version != MAP_SNAPSHOT_VERSION {
            return Err(PhysicalError::InvalidGrid(format!(
                "unsupported map snapshot version {}",
                self.version
            )));
        }
        OccupancyGrid::from_cells(
            self.resolution,
            self.origin,
            self.width,
            self.height,
            decode_rle(&self.cells)?,
        )
    }

    pub fn frontiers(&self) -> Vec<Frontier> {
        self.frontiers
            .iter()
            .map(|r| Frontier {
                cells: r.cells.iter().map(|c| super::Cell::new(c[0], c[1])).collect(),
                centroid: r.centroid,
                size: r.size,
                rho: r.rho,
                dist_to_retrieved: r.dist_to_retrieved.unwrap_or(f64::INFINITY),
            })
            .collect()
    }
}
