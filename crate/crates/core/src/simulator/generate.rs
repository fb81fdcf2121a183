use std::sync::LazyLock;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    visible_objects, AreaSpec, Bounds, EpisodeScript, Modality, SceneObject, SceneSpec, SensorConfig, SimError,
    Vocabulary, SCENE_VERSION,
};
use crate::cognitive_controller::TaskKind;
use crate::geometry::{Point2, Pose, Segment};

const REFERENCE_JSON: &str = include_str!("../../scenes/three_rooms.json");

static REFERENCE: LazyLock<SceneSpec> =
    LazyLock::new(|| SceneSpec::from_json(REFERENCE_JSON, Vocabulary::builtin()).expect("reference scene is valid"));

static REFERENCE_EPISODE: LazyLock<EpisodeScript> = LazyLock::new(|| {
    let s = reference_scene();
    let vase = s.instances("vase").next().expect("reference scene has a vase");
    EpisodeScript::plan(
        s,
        "three-rooms-vase",
        "What color is the vase?",
        TaskKind::Qa,
        vase,
        "green",
        s.spawns[0],
        Modality::Category,
    )
    .expect("reference episode is valid")
});

/// Three rooms in a row joined by doors, with the target out of sight of the spawn.
pub fn reference_scene() -> &'static SceneSpec {
    &REFERENCE
}

pub fn reference_episode() -> EpisodeScript {
    REFERENCE_EPISODE.clone()
}

fn tenth(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn seg(ax: f64, ay: f64, bx: f64, by: f64) -> Segment {
    Segment::new(Point2::new(ax, ay), Point2::new(bx, by))
}

fn outer(w: f64, h: f64) -> Vec<Segment> {
    vec![
        seg(0.0, 0.0, w, 0.0),
        seg(w, 0.0, w, h),
        seg(w, h, 0.0, h),
        seg(0.0, h, 0.0, 0.0),
    ]
}

/// A wall from `lo` to `hi` along one axis with a door `[d0, d1]` cut out.
fn wall_with_door(vertical: bool, at: f64, lo: f64, hi: f64, d0: f64, d1: f64) -> Vec<Segment> {
    let mk = |a: f64, b: f64| if vertical { seg(at, a, at, b) } else { seg(a, at, b, at) };
    let mut out = Vec::new();
    if d0 > lo {
        out.push(mk(lo, d0));
    }
    if d1 < hi {
        out.push(mk(d1, hi));
    }
    out
}

fn object(category: &str, x: f64, y: f64, area: &str, color: &str) -> SceneObject {
    SceneObject {
        category: category.to_string(),
        position: [x, y, 0.5],
        extents: [0.4, 0.4, 0.4],
        area: area.to_string(),
        attribute: Some(color.to_string()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneGenConfig {
    pub min_cols: usize,
    pub max_cols: usize,
    pub min_rows: usize,
    pub max_rows: usize,
    /// Room side range, meters.
    pub min_room: f64,
    pub max_room: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub door_width: f64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            min_cols: 2,
            max_cols: 3,
            min_rows: 1,
            max_rows: 2,
            min_room: 3.0,
            max_room: 5.0,
            min_objects: 1,
            max_objects: 3,
            door_width: 1.2,
        }
    }
}

/// A random grid of rooms, every neighbouring pair joined by a door. Each
/// room is its own area; categories are distinct within a scene.
pub fn generate_scene(name: &str, seed: u64, cfg: &SceneGenConfig, vocab: &Vocabulary) -> Result<SceneSpec, SimError> {
    let bad = |r: &str| SimError::scene(name, r);
    if cfg.min_cols == 0 || cfg.min_rows == 0 || cfg.min_cols > cfg.max_cols || cfg.min_rows > cfg.max_rows {
        return Err(bad("room counts must be positive ranges"));
    }
    if !(cfg.min_room >= cfg.door_width + 1.0 && cfg.min_room <= cfg.max_room && cfg.door_width > 0.0) {
        return Err(bad("rooms must be at least a door plus 1 m wide"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = rng.random_range(cfg.min_cols..=cfg.max_cols);
    let rows = rng.random_range(cfg.min_rows..=cfg.max_rows);
    if cols * rows > vocab.areas.len() {
        return Err(bad("more rooms than vocabulary areas"));
    }
    let side = |rng: &mut ChaCha8Rng| tenth(rng.random_range(cfg.min_room..=cfg.max_room));
    let mut xs = vec![0.0];
    for _ in 0..cols {
        let w = side(&mut rng);
        xs.push(tenth(xs.last().unwrap() + w));
    }
    let mut ys = vec![0.0];
    for _ in 0..rows {
        let h = side(&mut rng);
        ys.push(tenth(ys.last().unwrap() + h));
    }
    let (w, h) = (xs[cols], ys[rows]);
    let mut walls = outer(w, h);
    let half = cfg.door_width / 2.0;
    let door = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        let c = tenth(rng.random_range(lo + half + 0.4..=hi - half - 0.4));
        (c - half, c + half)
    };
    for i in 1..cols {
        for j in 0..rows {
            let (d0, d1) = door(&mut rng, ys[j], ys[j + 1]);
            walls.extend(wall_with_door(true, xs[i], ys[j], ys[j + 1], d0, d1));
        }
    }
    for j in 1..rows {
        for i in 0..cols {
            let (d0, d1) = door(&mut rng, xs[i], xs[i + 1]);
            walls.extend(wall_with_door(false, ys[j], xs[i], xs[i + 1], d0, d1));
        }
    }
    let mut areas_pool = vocab.areas.clone();
    areas_pool.shuffle(&mut rng);
    let mut cats = vocab.categories.clone();
    cats.shuffle(&mut rng);
    let mut cats = cats.into_iter();
    let mut areas = Vec::new();
    let mut objects = Vec::new();
    let mut spawns = Vec::new();
    for j in 0..rows {
        for i in 0..cols {
            let name = areas_pool[j * cols + i].clone();
            let (x0, x1, y0, y1) = (xs[i], xs[i + 1], ys[j], ys[j + 1]);
            let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
            for _ in 0..n {
                let Some(cat) = cats.next() else { break };
                let x = (rng.random_range(x0 + 0.5..=x1 - 0.5) * 20.0).round() / 20.0;
                let y = (rng.random_range(y0 + 0.5..=y1 - 0.5) * 20.0).round() / 20.0;
                let color = vocab.colors.choose(&mut rng).expect("colors");
                objects.push(object(&cat, x, y, &name, color));
            }
            spawns.push(Pose::planar(tenth((x0 + x1) / 2.0), tenth((y0 + y1) / 2.0), 0.0));
            areas.push(AreaSpec {
                name,
                min: Point2::new(x0, y0),
                max: Point2::new(x1, y1),
            });
        }
    }
    let scene = SceneSpec {
        version: SCENE_VERSION,
        name: name.to_string(),
        seed,
        bounds: Bounds {
            min: Point2::new(0.0, 0.0),
            max: Point2::new(w, h),
        },
        walls,
        areas,
        objects,
        spawns,
    };
    scene.validate(vocab)?;
    Ok(scene)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Layout built so that nearest-first exploration takes the wrong wing.
    ConstructedCoverage,
    General,
    RuleSensitive,
}

/// Two episodes from the same spawn in the same scene asking about the same
/// object: the first visit builds memory the second can recall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisitPair {
    pub kind: ScenarioKind,
    pub scene: SceneSpec,
    pub first: EpisodeScript,
    pub second: EpisodeScript,
}

const SMALL_OBJECTS: &[&str] = &["vase", "mug", "lamp", "clock", "backpack", "umbrella", "kettle", "plant", "laptop", "towel"];

fn pick_distinct<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str], n: usize) -> Vec<&'a str> {
    let mut v = pool.to_vec();
    v.shuffle(rng);
    v.truncate(n);
    v
}

/// West wing with an inner partition, a central hall and an east room. The
/// spawn sits next to the west door while the target hides in the far corner
/// of the east room behind a door on the opposite side.
pub fn constructed_coverage_scene(seed: u64, vocab: &Vocabulary) -> Result<(SceneSpec, usize), SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0c07_ea9e);
    let west = tenth(rng.random_range(5.6..=6.4));
    let hall = tenth(rng.random_range(3.6..=4.4));
    let east = tenth(rng.random_range(5.6..=6.4));
    let h = tenth(rng.random_range(5.6..=6.4));
    let flip = rng.random_bool(0.5);
    let (x1, x2, x3) = (west, tenth(west + hall), tenth(west + hall + east));
    let fy = |y: f64| if flip { tenth(h - y) } else { y };
    let mut walls = outer(x3, h);
    let mid = tenth(h / 2.0);
    walls.extend(wall_with_door(true, x1, 0.0, h, mid - 0.6, mid + 0.6));
    let part = tenth(x1 / 2.0);
    let (p0, p1) = if flip { (1.5, h) } else { (0.0, h - 1.5) };
    walls.push(seg(part, p0, part, p1));
    let (d0, d1) = if flip { (h - 1.5, h - 0.3) } else { (0.3, 1.5) };
    walls.extend(wall_with_door(true, x2, 0.0, h, d0, d1));

    let names = pick_distinct(&mut rng, &["bedroom", "study", "office", "dining room", "laundry room"], 3);
    let (wa, wb, ea) = (names[0], names[1], names[2]);
    let areas = vec![
        AreaSpec {
            name: wa.into(),
            min: Point2::new(0.0, 0.0),
            max: Point2::new(part, h),
        },
        AreaSpec {
            name: wb.into(),
            min: Point2::new(part, 0.0),
            max: Point2::new(x1, h),
        },
        AreaSpec {
            name: "hallway".into(),
            min: Point2::new(x1, 0.0),
            max: Point2::new(x2, h),
        },
        AreaSpec {
            name: ea.into(),
            min: Point2::new(x2, 0.0),
            max: Point2::new(x3, h),
        },
    ];
    let cats = pick_distinct(&mut rng, SMALL_OBJECTS, 5);
    let colors: Vec<&String> = vocab.colors.choose_multiple(&mut rng, 5).collect();
    let objects = vec![
        object(cats[1], tenth(part / 2.0), fy(1.0), wa, colors[1]),
        object(cats[2], tenth(part + 0.8), fy(h - 0.8), wb, colors[2]),
        object(cats[3], tenth(x1 + hall / 2.0), fy(0.6), "hallway", colors[3]),
        object(cats[4], tenth(x2 + 1.0), fy(0.8), ea, colors[4]),
        object(cats[0], tenth(x3 - 0.6), fy(h - 0.6), ea, colors[0]),
    ];
    let scene = SceneSpec {
        version: SCENE_VERSION,
        name: format!("coverage-{seed}"),
        seed,
        bounds: Bounds {
            min: Point2::new(0.0, 0.0),
            max: Point2::new(x3, h),
        },
        walls,
        areas,
        objects,
        spawns: vec![Pose::planar(tenth(x1 + 1.2), mid, 0.0)],
    };
    scene.validate(vocab)?;
    Ok((scene, 4))
}

fn pair(kind: ScenarioKind, scene: SceneSpec, target: usize) -> Result<RevisitPair, SimError> {
    let o = &scene.objects[target];
    let color = o.attribute.clone().unwrap_or_else(|| "unknown".into());
    let spawn = scene.spawns[0];
    let first = EpisodeScript::plan(
        &scene,
        &format!("{}-a", scene.name),
        &format!("Find the {}.", o.category),
        TaskKind::Navigation,
        target,
        &o.category,
        spawn,
        Modality::Category,
    )?;
    let second = EpisodeScript::plan(
        &scene,
        &format!("{}-b", scene.name),
        &format!("What color is the {}?", o.category),
        TaskKind::Qa,
        target,
        &color,
        spawn,
        Modality::Description,
    )?;
    Ok(RevisitPair {
        kind,
        scene,
        first,
        second,
    })
}

/// The object a general scenario asks about: the farthest one hidden from
/// the first spawn, or the farthest overall when everything is in view.
fn general_target(scene: &SceneSpec, sensor: &SensorConfig) -> usize {
    let spawn = scene.spawns[0];
    let seen = visible_objects(scene, &spawn, sensor);
    let far = |i: &usize| scene.objects[*i].xy().distance(spawn.xy());
    let hidden: Vec<usize> = (0..scene.objects.len()).filter(|i| !seen.contains(i)).collect();
    let pool: Vec<usize> = if hidden.is_empty() { (0..scene.objects.len()).collect() } else { hidden };
    pool.into_iter()
        .max_by(|a, b| far(a).total_cmp(&far(b)).then(b.cmp(a)))
        .expect("generated scenes have objects")
}

/// `n_constructed` coverage scenarios followed by `n_general` random ones.
pub fn paired_revisit_suite(
    seed: u64,
    n_constructed: usize,
    n_general: usize,
    vocab: &Vocabulary,
) -> Result<Vec<RevisitPair>, SimError> {
    let mut out = Vec::with_capacity(n_constructed + n_general);
    for i in 0..n_constructed as u64 {
        let (scene, target) = constructed_coverage_scene(seed.wrapping_mul(1000).wrapping_add(i), vocab)?;
        out.push(pair(ScenarioKind::ConstructedCoverage, scene, target)?);
    }
    let cfg = SceneGenConfig::default();
    let sensor = SensorConfig::default();
    for i in 0..n_general as u64 {
        let s = seed.wrapping_mul(1000).wrapping_add(500 + i);
        let scene = generate_scene(&format!("general-{s}"), s, &cfg, vocab)?;
        let target = general_target(&scene, &sensor);
        out.push(pair(ScenarioKind::General, scene, target)?);
    }
    Ok(out)
}

/// Two rooms: a same-category decoy sits in view of the spawn, while the
/// instance the question names waits in the other room.
pub fn rule_sensitive_scene(seed: u64, vocab: &Vocabulary) -> Result<(SceneSpec, EpisodeScript), SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x000d_ec01);
    let w = tenth(rng.random_range(4.6..=5.4));
    let w2 = tenth(rng.random_range(4.6..=5.4));
    let h = tenth(rng.random_range(4.6..=5.4));
    let flip = rng.random_bool(0.5);
    let fy = |y: f64| if flip { tenth(h - y) } else { y };
    let x2 = tenth(w + w2);
    let mut walls = outer(x2, h);
    let (d0, d1) = if flip { (h - 1.6, h - 0.4) } else { (0.4, 1.6) };
    walls.extend(wall_with_door(true, w, 0.0, h, d0, d1));
    let names = pick_distinct(
        &mut rng,
        &["kitchen", "living room", "bedroom", "bathroom", "office", "study", "garage"],
        2,
    );
    let (home, there) = (names[0], names[1]);
    let cat = *SMALL_OBJECTS.choose(&mut rng).expect("objects");
    let other = *SMALL_OBJECTS.iter().filter(|c| **c != cat).collect::<Vec<_>>().choose(&mut rng).expect("objects");
    let colors: Vec<&String> = vocab.colors.choose_multiple(&mut rng, 3).collect();
    let decoy_x = tenth(rng.random_range(0.6..=1.2));
    let objects = vec![
        object(cat, decoy_x, fy(h - 0.7), home, colors[0]),
        object(other, tenth(w - 0.8), fy(h - 0.6), home, colors[2]),
        object(cat, tenth(x2 - 0.6), fy(h - 0.6), there, colors[1]),
    ];
    let scene = SceneSpec {
        version: SCENE_VERSION,
        name: format!("decoy-{seed}"),
        seed,
        bounds: Bounds {
            min: Point2::new(0.0, 0.0),
            max: Point2::new(x2, h),
        },
        walls,
        areas: vec![
            AreaSpec {
                name: home.into(),
                min: Point2::new(0.0, 0.0),
                max: Point2::new(w, h),
            },
            AreaSpec {
                name: there.into(),
                min: Point2::new(w, 0.0),
                max: Point2::new(x2, h),
            },
        ],
        objects,
        spawns: vec![Pose::planar(tenth(w / 2.0), tenth(h / 2.0), 0.0)],
    };
    scene.validate(vocab)?;
    let script = EpisodeScript::plan(
        &scene,
        &format!("{}-q", scene.name),
        &format!("What color is the {cat} in the {there}?"),
        TaskKind::Qa,
        2,
        colors[1],
        scene.spawns[0],
        Modality::Description,
    )?;
    Ok((scene, script))
}

pub fn rule_sensitive_suite(seed: u64, n: usize, vocab: &Vocabulary) -> Result<Vec<(SceneSpec, EpisodeScript)>, SimError> {
    (0..n as u64)
        .map(|i| rule_sensitive_scene(seed.wrapping_mul(1000).wrapping_add(i), vocab))
        .collect()
}
