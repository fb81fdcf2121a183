use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SimError, Vocabulary};
use crate::geometry::{Point2, Pose, Segment};
use crate::physical_space::{CellState, OccupancyGrid};

pub const SCENE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point2,
    pub max: Point2,
}

impl Bounds {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn contains_strictly(&self, p: Point2) -> bool {
        p.x > self.min.x && p.x < self.max.x && p.y > self.min.y && p.y < self.max.y
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaSpec {
    pub name: String,
    pub min: Point2,
    pub max: Point2,
}

impl AreaSpec {
    pub fn contains(&self, p: Point2) -> bool {
        Bounds {
            min: self.min,
            max: self.max,
        }
        .contains(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: String,
    pub position: [f64; 3],
    pub extents: [f64; 3],
    pub area: String,
    /// Color, the attribute questions ask about.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
}

impl SceneObject {
    pub fn xy(&self) -> Point2 {
        Point2::new(self.position[0], self.position[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub bounds: Bounds,
    pub walls: Vec<Segment>,
    pub areas: Vec<AreaSpec>,
    pub objects: Vec<SceneObject>,
    pub spawns: Vec<Pose>,
}

// Spawns must keep at least this much clearance from walls.
const SPAWN_CLEARANCE: f64 = 0.2;

impl SceneSpec {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), SimError> {
        let err = |r: String| SimError::scene(&self.name, r);
        if self.version != SCENE_VERSION {
            return Err(err(format!("unsupported version {}", self.version)));
        }
        if self.name.is_empty() || self.name.contains(['/', ',']) {
            return Err(err("name must be non-empty without '/' or ','".into()));
        }
        let b = self.bounds;
        if !(b.min.is_finite() && b.max.is_finite() && b.min.x < b.max.x && b.min.y < b.max.y) {
            return Err(err("bounds must be a non-empty finite rectangle".into()));
        }
        for (i, w) in self.walls.iter().enumerate() {
            if !(w.a.x == w.b.x || w.a.y == w.b.y) || w.length() == 0.0 {
                return Err(err(format!("wall {i} is not a non-degenerate axis-aligned segment")));
            }
            if !(b.contains(w.a) && b.contains(w.b)) {
                return Err(err(format!("wall {i} leaves the bounds")));
            }
        }
        for a in &self.areas {
            if vocab.kind_of(&a.name) != Some(super::TermKind::Area) {
                return Err(err(format!("area {:?} is not in the vocabulary", a.name)));
            }
            if !(b.contains(a.min) && b.contains(a.max) && a.min.x < a.max.x && a.min.y < a.max.y) {
                return Err(err(format!("area {:?} is not a rectangle inside the bounds", a.name)));
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            if vocab.kind_of(&o.category) != Some(super::TermKind::Category) {
                return Err(err(format!("object {i}: category {:?} is not in the vocabulary", o.category)));
            }
            if let Some(c) = &o.attribute {
                if vocab.kind_of(c) != Some(super::TermKind::Color) {
                    return Err(err(format!("object {i}: attribute {c:?} is not a vocabulary color")));
                }
            }
            if !o.position.iter().chain(&o.extents).all(|v| v.is_finite()) || o.extents.iter().any(|e| *e < 0.0) {
                return Err(err(format!("object {i}: non-finite position or negative extents")));
            }
            if !b.contains_strictly(o.xy()) {
                return Err(err(format!("object {i} lies outside the walls")));
            }
            if !self.areas.iter().any(|a| a.name == o.area && a.contains(o.xy())) {
                return Err(err(format!("object {i} is not inside its area {:?}", o.area)));
            }
        }
        if self.spawns.is_empty() {
            return Err(err("no spawn poses".into()));
        }
        for (i, s) in self.spawns.iter().enumerate() {
            if !s.is_finite() || !b.contains_strictly(s.xy()) {
                return Err(err(format!("spawn {i} outside the bounds")));
            }
            if self.walls.iter().any(|w| w.distance_to(s.xy()) < SPAWN_CLEARANCE) {
                return Err(err(format!("spawn {i} is too close to a wall")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, vocab: &Vocabulary) -> Result<Self, SimError> {
        let s: SceneSpec = serde_json::from_str(text).map_err(|e| SimError::scene("?", e.to_string()))?;
        s.validate(vocab)?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.bounds.contains_strictly(p)
    }

    pub fn area_at(&self, p: Point2) -> Option<&str> {
        self.areas.iter().find(|a| a.contains(p)).map(|a| a.name.as_str())
    }

    /// Indices of the objects of `category`.
    pub fn instances<'a>(&'a self, category: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.objects
            .iter()
            .enumerate()
            .filter(move |(_, o)| o.category == category)
            .map(|(i, _)| i)
    }

    /// Fraction along `a`→`b` where it first meets a wall.
    pub fn first_wall_hit(&self, a: Point2, b: Point2) -> Option<f64> {
        let s = Segment::new(a, b);
        self.walls
            .iter()
            .filter_map(|w| s.intersect(w))
            .min_by(f64::total_cmp)
    }

    pub fn line_of_sight(&self, a: Point2, b: Point2) -> bool {
        self.first_wall_hit(a, b).is_none()
    }

    /// The true map: every cell touching a wall is Occupied, the rest Free.
    pub fn raster(&self, resolution: f64) -> OccupancyGrid {
        let o = self.bounds.min;
        let w = ((self.bounds.max.x - o.x) / resolution).ceil() as usize;
        let h = ((self.bounds.max.y - o.y) / resolution).ceil() as usize;
        let mut cells = vec![CellState::Free; w * h];
        const EPS: f64 = 1e-9;
        let span = |lo: f64, hi: f64, origin: f64, n: usize| {
            let a = ((lo - origin) / resolution - EPS).ceil() as i64 - 1;
            let b = ((hi - origin) / resolution + EPS).floor() as i64;
            (a.max(0), b.min(n as i64 - 1))
        };
        for wall in &self.walls {
            let (x0, x1) = span(wall.a.x.min(wall.b.x), wall.a.x.max(wall.b.x), o.x, w);
            let (y0, y1) = span(wall.a.y.min(wall.b.y), wall.a.y.max(wall.b.y), o.y, h);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    cells[y as usize * w + x as usize] = CellState::Occupied;
                }
            }
        }
        OccupancyGrid::from_cells(resolution, o, w, h, cells).expect("bounds are non-empty")
    }
}
