use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{SceneSpec, SimError, SyntheticEmbedder};
use crate::cognitive_controller::{MoveResult, Sensed};
use crate::geometry::{normalize_angle, Point2, Pose};
use crate::physical_space::ScanRay;
use crate::semantic_space::{Box3, Observation, RegionEntry};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub rays: usize,
    /// Field of view, radians, centered on the heading.
    pub fov: f64,
    pub max_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            rays: 720,
            fov: TAU,
            max_range: 5.0,
        }
    }
}

impl SensorConfig {
    pub fn bearing(&self, i: usize) -> f64 {
        -self.fov / 2.0 + self.fov * (i as f64 + 0.5) / self.rays as f64
    }

    pub fn in_fov(&self, pose: &Pose, p: Point2) -> bool {
        if self.fov >= TAU {
            return true;
        }
        let d = p - pose.xy();
        normalize_angle(d.y.atan2(d.x) - pose.yaw).abs() <= self.fov / 2.0
    }
}

pub fn format_image_ref(scene: &str, pose: &Pose) -> String {
    format!("sim://{scene}/{},{},{}", pose.position[0], pose.position[1], pose.yaw)
}

pub fn parse_image_ref(s: &str) -> Option<(String, Pose)> {
    let (scene, rest) = s.strip_prefix("sim://")?.split_once('/')?;
    let mut it = rest.split(',').map(|v| v.parse::<f64>());
    let (x, y, yaw) = (it.next()?.ok()?, it.next()?.ok()?, it.next()?.ok()?);
    if it.next().is_some() {
        return None;
    }
    Some((scene.to_string(), Pose::planar(x, y, yaw)))
}

pub fn cast_scan(scene: &SceneSpec, pose: &Pose, cfg: &SensorConfig) -> Vec<ScanRay> {
    let p = pose.xy();
    (0..cfg.rays)
        .map(|i| {
            let bearing = cfg.bearing(i);
            let h = pose.yaw + bearing;
            let end = p + Point2::new(h.cos(), h.sin()) * cfg.max_range;
            match scene.first_wall_hit(p, end) {
                Some(t) => ScanRay {
                    bearing,
                    range: t * cfg.max_range,
                    hit: true,
                },
                None => ScanRay {
                    bearing,
                    range: cfg.max_range,
                    hit: false,
                },
            }
        })
        .collect()
}

/// Objects in range, in the field of view and not behind a wall.
pub fn visible_objects(scene: &SceneSpec, pose: &Pose, cfg: &SensorConfig) -> Vec<usize> {
    let p = pose.xy();
    scene
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| {
            let q = o.xy();
            p.distance(q) <= cfg.max_range && cfg.in_fov(pose, q) && scene.line_of_sight(p, q)
        })
        .map(|(i, _)| i)
        .collect()
}

pub fn observe(
    scene: &SceneSpec,
    pose: &Pose,
    cfg: &SensorConfig,
    embedder: &SyntheticEmbedder,
    episode_id: &str,
    timestep: u64,
) -> Result<Sensed, SimError> {
    let p = pose.xy();
    if !pose.is_finite() || !scene.contains(p) {
        return Err(SimError::OutsideScene {
            scene: scene.name.clone(),
            x: p.x,
            y: p.y,
        });
    }
    let image_ref = format_image_ref(&scene.name, pose);
    let regions: Vec<RegionEntry> = visible_objects(scene, pose, cfg)
        .into_iter()
        .map(|i| {
            let o = &scene.objects[i];
            Ok(RegionEntry {
                embedding: embedder.region_embedding(&o.category, &o.area, &image_ref, i)?,
                box3d: Box3 {
                    center: o.position,
                    extents: o.extents,
                },
                label: Some(o.category.clone()),
            })
        })
        .collect::<Result<_, SimError>>()?;
    let global_embedding = embedder.global_embedding(&regions, scene.area_at(p), scene)?;
    Ok(Sensed {
        observation: Observation {
            id: format!("{episode_id}/{timestep}"),
            episode_id: episode_id.to_string(),
            timestep,
            pose: *pose,
            global_embedding,
            regions,
            image_ref,
        },
        scan: cast_scan(scene, pose, cfg),
        max_range: cfg.max_range,
    })
}

// Motion stops this far short of a wall it would cross.
const WALL_BACKOFF: f64 = 0.05;

/// Walks `path` from `pose`; a segment crossing a wall is cut short of it.
pub fn execute_move(scene: &SceneSpec, pose: &Pose, path: &[Point2]) -> MoveResult {
    let mut here = pose.xy();
    let mut yaw = pose.yaw;
    let mut distance = 0.0;
    for &next in path {
        let seg = here.distance(next);
        if seg == 0.0 {
            continue;
        }
        let heading = (next.y - here.y).atan2(next.x - here.x);
        if let Some(t) = scene.first_wall_hit(here, next) {
            let travel = (t * seg - WALL_BACKOFF).max(0.0);
            let stop = here.lerp(next, travel / seg);
            return MoveResult {
                pose: Pose::new([stop.x, stop.y, pose.position[2]], heading),
                distance: distance + travel,
                collided: true,
                blocked_at: Some(here.lerp(next, t)),
            };
        }
        distance += seg;
        here = next;
        yaw = heading;
    }
    MoveResult {
        pose: Pose::new([here.x, here.y, pose.position[2]], yaw),
        distance,
        collided: false,
        blocked_at: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Segment;
    use crate::simulator::{AreaSpec, Bounds, SceneObject, Vocabulary, SCENE_VERSION};
    use crate::topk::cosine;

    fn corridor() -> SceneSpec {
        let p = Point2::new;
        SceneSpec {
            version: SCENE_VERSION,
            name: "corridor".into(),
            seed: 1,
            bounds: Bounds {
                min: p(0.0, 0.0),
                max: p(6.0, 2.0),
            },
            walls: vec![
                Segment::new(p(0.0, 0.0), p(6.0, 0.0)),
                Segment::new(p(6.0, 0.0), p(6.0, 2.0)),
                Segment::new(p(6.0, 2.0), p(0.0, 2.0)),
                Segment::new(p(0.0, 2.0), p(0.0, 0.0)),
                Segment::new(p(3.0, 0.0), p(3.0, 1.2)),
            ],
            areas: vec![AreaSpec {
                name: "hallway".into(),
                min: p(0.0, 0.0),
                max: p(6.0, 2.0),
            }],
            objects: vec![SceneObject {
                category: "refrigerator".into(),
                position: [1.5, 1.0, 0.9],
                extents: [0.8, 0.7, 1.8],
                area: "hallway".into(),
                attribute: Some("white".into()),
            }],
            spawns: vec![Pose::planar(0.5, 1.0, 0.0)],
        }
    }

    #[test]
    fn bare_wall_at_half_a_meter() {
        let s = corridor();
        let cfg = SensorConfig {
            rays: 9,
            fov: 0.2,
            max_range: 5.0,
        };
        let pose = Pose::planar(2.5, 0.6, 0.0);
        let scan = cast_scan(&s, &pose, &cfg);
        for r in &scan {
            assert!(r.hit);
            assert!((r.range - 0.5).abs() < 0.01, "{}", r.range);
        }
        let e = SyntheticEmbedder::new(Vocabulary::builtin(), 64, 0, 0.05).unwrap();
        let sensed = observe(&s, &pose, &cfg, &e, "ep", 0).unwrap();
        assert!(sensed.observation.regions.is_empty());
    }

    #[test]
    fn facing_one_object() {
        let s = corridor();
        let e = SyntheticEmbedder::new(Vocabulary::builtin(), 128, 0, 0.05).unwrap();
        let cfg = SensorConfig::default();
        let a = observe(&s, &s.spawns[0], &cfg, &e, "ep", 0).unwrap();
        assert_eq!(a.observation.regions.len(), 1);
        let base = e.base("refrigerator").unwrap();
        assert!(cosine(&a.observation.regions[0].embedding, &base) >= 0.9);
        let b = observe(&s, &s.spawns[0], &cfg, &e, "ep", 0).unwrap();
        assert_eq!(a, b);
        assert!(observe(&s, &Pose::planar(7.0, 1.0, 0.0), &cfg, &e, "ep", 0).is_err());
    }

    #[test]
    fn occluded_objects_are_not_sensed() {
        let s = corridor();
        let e = SyntheticEmbedder::new(Vocabulary::builtin(), 64, 0, 0.05).unwrap();
        let sensed = observe(&s, &Pose::planar(4.5, 0.3, 0.0), &SensorConfig::default(), &e, "ep", 1).unwrap();
        assert!(sensed.observation.regions.is_empty());
    }

    #[test]
    fn image_refs_round_trip() {
        let pose = Pose::planar(1.0 / 3.0, -2.25, 0.1);
        let r = format_image_ref("three-rooms", &pose);
        assert_eq!(parse_image_ref(&r), Some(("three-rooms".to_string(), pose)));
        assert_eq!(parse_image_ref("file:///x.png"), None);
    }

    #[test]
    fn moves() {
        let s = corridor();
        let start = Pose::planar(0.5, 1.6, 0.0);
        let r = execute_move(&s, &start, &[start.xy()]);
        assert_eq!(r.distance, 0.0);
        assert!(!r.collided);
        let r = execute_move(&s, &start, &[Point2::new(3.5, 1.6)]);
        assert!((r.distance - 3.0).abs() < 1e-9);
        let r = execute_move(&s, &Pose::planar(2.0, 0.5, 0.0), &[Point2::new(4.0, 0.5)]);
        assert!(r.collided);
        assert!((r.pose.position[0] - 2.95).abs() < 1e-9);
        assert_eq!(r.blocked_at, Some(Point2::new(3.0, 0.5)));
    }
}
