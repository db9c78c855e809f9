//! Room data model, JSON persistence, validation and the seeded procedural
//! room generator.
//!
//! Coordinates are y-up scene units. The indoor area of a generated room has
//! its lower-left corner at the origin; walls are 10-unit strips just outside
//! it, doors straddle the boundary and windows sit inside the wall band.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::geometry::{intersection_area, Rect, Vec2};

pub const SCHEMA_VERSION: u32 = 1;
pub const WALL_THICKNESS: f64 = 10.0;
/// Half-width of the band around the indoor boundary that walls, doors and
/// windows must touch.
pub const BOUNDARY_BAND: f64 = 2.0 * WALL_THICKNESS;
pub const GOAL_ATTEMPTS: usize = 1000;
const STATIC_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Wall,
    Door,
    Window,
    Furniture,
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ElementKind::Wall => "wall",
            ElementKind::Door => "door",
            ElementKind::Window => "window",
            ElementKind::Furniture => "furniture",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Element {
    pub id: String,
    pub kind: ElementKind,
    pub rect: Rect,
    #[serde(default)]
    pub category: String,
}

impl Element {
    pub fn new(id: impl Into<String>, kind: ElementKind, rect: Rect, category: impl Into<String>) -> Self {
        Self { id: id.into(), kind, rect, category: category.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomType {
    Bathroom,
    Bedroom,
    Study,
    Tatami,
    LivingRoom,
    DiningRoom,
    Kitchen,
    Balcony,
}

impl RoomType {
    pub const ALL: [RoomType; 8] = [
        RoomType::Bathroom,
        RoomType::Bedroom,
        RoomType::Study,
        RoomType::Tatami,
        RoomType::LivingRoom,
        RoomType::DiningRoom,
        RoomType::Kitchen,
        RoomType::Balcony,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RoomType::Bathroom => "bathroom",
            RoomType::Bedroom => "bedroom",
            RoomType::Study => "study",
            RoomType::Tatami => "tatami",
            RoomType::LivingRoom => "living_room",
            RoomType::DiningRoom => "dining_room",
            RoomType::Kitchen => "kitchen",
            RoomType::Balcony => "balcony",
        }
    }

    fn index(&self) -> u64 {
        RoomType::ALL.iter().position(|r| r == self).unwrap() as u64
    }

    pub fn template(&self) -> &'static RoomTemplate {
        &TEMPLATES[self.index() as usize]
    }
}

impl fmt::Display for RoomType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoomType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        RoomType::ALL.iter().copied().find(|r| r.as_str() == norm).ok_or_else(|| {
            let valid: Vec<_> = RoomType::ALL.iter().map(|r| r.as_str()).collect();
            format!("unknown room type `{s}`; valid types: {}", valid.join(", "))
        })
    }
}

/// A furniture category with its size range `(min, max)` per axis.
#[derive(Debug)]
pub struct FurnitureKind {
    pub category: &'static str,
    pub width: (f64, f64),
    pub height: (f64, f64),
}

const fn fk(category: &'static str, width: (f64, f64), height: (f64, f64)) -> FurnitureKind {
    FurnitureKind { category, width, height }
}

#[derive(Debug)]
pub struct RoomTemplate {
    pub movable: FurnitureKind,
    pub statics: &'static [FurnitureKind],
}

static TEMPLATES: [RoomTemplate; 8] = [
    RoomTemplate {
        movable: fk("shower", (80.0, 120.0), (80.0, 120.0)),
        statics: &[
            fk("toilet", (40.0, 50.0), (60.0, 75.0)),
            fk("cabinet", (60.0, 100.0), (40.0, 60.0)),
            fk("sink", (50.0, 80.0), (40.0, 55.0)),
        ],
    },
    RoomTemplate {
        movable: fk("bed", (150.0, 200.0), (190.0, 210.0)),
        statics: &[
            fk("cabinet", (60.0, 120.0), (40.0, 60.0)),
            fk("nightstand", (40.0, 55.0), (40.0, 55.0)),
            fk("wardrobe", (100.0, 160.0), (55.0, 65.0)),
        ],
    },
    RoomTemplate {
        movable: fk("desk", (100.0, 160.0), (60.0, 80.0)),
        statics: &[
            fk("bookcase", (80.0, 120.0), (30.0, 40.0)),
            fk("chair", (45.0, 60.0), (45.0, 60.0)),
            fk("cabinet", (60.0, 100.0), (40.0, 60.0)),
        ],
    },
    RoomTemplate {
        movable: fk("tatami", (180.0, 200.0), (90.0, 180.0)),
        statics: &[fk("desk", (80.0, 120.0), (50.0, 70.0)), fk("cabinet", (60.0, 100.0), (40.0, 60.0))],
    },
    RoomTemplate {
        movable: fk("sofa", (180.0, 240.0), (80.0, 100.0)),
        statics: &[
            fk("tv_stand", (120.0, 180.0), (35.0, 50.0)),
            fk("coffee_table", (80.0, 120.0), (50.0, 70.0)),
            fk("cabinet", (60.0, 100.0), (40.0, 60.0)),
        ],
    },
    RoomTemplate {
        movable: fk("dining_table", (120.0, 180.0), (80.0, 100.0)),
        statics: &[fk("cabinet", (60.0, 100.0), (40.0, 60.0)), fk("sideboard", (120.0, 160.0), (40.0, 50.0))],
    },
    RoomTemplate {
        movable: fk("sink", (60.0, 100.0), (50.0, 60.0)),
        statics: &[
            fk("cook_top", (60.0, 90.0), (50.0, 60.0)),
            fk("fridge", (60.0, 80.0), (60.0, 75.0)),
            fk("cabinet", (60.0, 120.0), (50.0, 60.0)),
        ],
    },
    RoomTemplate {
        movable: fk("washer", (60.0, 70.0), (55.0, 65.0)),
        statics: &[fk("cabinet", (60.0, 100.0), (35.0, 50.0)), fk("plant", (30.0, 50.0), (30.0, 50.0))],
    },
];

/// A single room: static layout plus the one movable furniture and its goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub schema: u32,
    pub room_type: RoomType,
    pub indoor_area: Rect,
    /// Reserved for rectilinear rooms; ignored by every operation in this
    /// version, which only uses `indoor_area`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indoor_polygon: Option<Vec<Vec2>>,
    pub walls: Vec<Element>,
    pub doors: Vec<Element>,
    pub windows: Vec<Element>,
    pub static_furniture: Vec<Element>,
    pub movable: Element,
    pub goal: Rect,
}

/// One violated scene invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnsupportedSchema(u32),
    DuplicateId(String),
    WrongKind { id: String, expected: ElementKind, found: ElementKind },
    MovableSizeMismatch { id: String },
    OffBoundary { id: String },
    GoalNotContained,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnsupportedSchema(v) => write!(f, "unsupported schema version {v}"),
            Violation::DuplicateId(id) => write!(f, "duplicate id `{id}`"),
            Violation::WrongKind { id, expected, found } => {
                write!(f, "element `{id}` has kind {found}, expected {expected}")
            }
            Violation::MovableSizeMismatch { id } => {
                write!(f, "movable `{id}` size differs from goal size")
            }
            Violation::OffBoundary { id } => {
                write!(f, "element `{id}` does not touch the indoor boundary band")
            }
            Violation::GoalNotContained => write!(f, "goal not contained in indoor area"),
        }
    }
}

impl Scene {
    /// Static elements in reward order: furniture, walls, doors, windows.
    pub fn obstacles(&self) -> impl Iterator<Item = &Element> {
        self.static_furniture.iter().chain(&self.walls).chain(&self.doors).chain(&self.windows)
    }

    pub fn all_elements(&self) -> impl Iterator<Item = &Element> {
        self.obstacles().chain(std::iter::once(&self.movable))
    }

    /// Axis-aligned bounding box of every element, the goal and the room.
    pub fn bounds(&self) -> Rect {
        let mut min_x = self.indoor_area.min_x();
        let mut min_y = self.indoor_area.min_y();
        let mut max_x = self.indoor_area.max_x();
        let mut max_y = self.indoor_area.max_y();
        for r in self.obstacles().map(|e| &e.rect).chain(std::iter::once(&self.goal)) {
            min_x = min_x.min(r.min_x());
            min_y = min_y.min(r.min_y());
            max_x = max_x.max(r.max_x());
            max_y = max_y.max(r.max_y());
        }
        Rect::from_extents(min_x, min_y, max_x, max_y).expect("indoor area has positive size")
    }

    /// The movable rect re-centered at `center`.
    pub fn movable_at(&self, center: Vec2) -> Rect {
        self.movable.rect.with_center(center)
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let violations = validate(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }
}

/// Every violated invariant of `scene`; empty when the scene is well formed.
pub fn validate(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    if scene.schema != SCHEMA_VERSION {
        out.push(Violation::UnsupportedSchema(scene.schema));
    }

    let mut seen = HashSet::new();
    for e in scene.all_elements() {
        if !seen.insert(e.id.as_str()) {
            out.push(Violation::DuplicateId(e.id.clone()));
        }
    }

    let lists = [
        (&scene.walls, ElementKind::Wall),
        (&scene.doors, ElementKind::Door),
        (&scene.windows, ElementKind::Window),
        (&scene.static_furniture, ElementKind::Furniture),
    ];
    for (list, expected) in lists {
        for e in list.iter() {
            if e.kind != expected {
                out.push(Violation::WrongKind { id: e.id.clone(), expected, found: e.kind });
            }
        }
    }
    if scene.movable.kind != ElementKind::Furniture {
        out.push(Violation::WrongKind {
            id: scene.movable.id.clone(),
            expected: ElementKind::Furniture,
            found: scene.movable.kind,
        });
    }
    if scene.movable.rect.width() != scene.goal.width() || scene.movable.rect.height() != scene.goal.height() {
        out.push(Violation::MovableSizeMismatch { id: scene.movable.id.clone() });
    }

    let room = &scene.indoor_area;
    let outer = Rect::new(room.center(), room.width() + 2.0 * BOUNDARY_BAND, room.height() + 2.0 * BOUNDARY_BAND)
        .expect("expanded room is valid");
    let inner = (room.width() > 2.0 * BOUNDARY_BAND && room.height() > 2.0 * BOUNDARY_BAND).then(|| {
        Rect::new(room.center(), room.width() - 2.0 * BOUNDARY_BAND, room.height() - 2.0 * BOUNDARY_BAND)
            .expect("shrunk room is valid")
    });
    for e in scene.walls.iter().chain(&scene.doors).chain(&scene.windows) {
        let touches_outer = intersection_area(&e.rect, &outer) > 0.0;
        let deep_inside = inner.is_some_and(|i| e.rect.is_within(&i));
        if !touches_outer || deep_inside {
            out.push(Violation::OffBoundary { id: e.id.clone() });
        }
    }

    if !scene.goal.is_within(room) {
        out.push(Violation::GoalNotContained);
    }
    out
}

pub fn to_json(scene: &Scene) -> String {
    let mut s = serde_json::to_string_pretty(scene).expect("scene serializes");
    s.push('\n');
    s
}

/// Parses and validates a scene from JSON text. `context` labels errors.
pub fn from_json(text: &str, context: &str) -> Result<Scene> {
    let scene: Scene = serde_json::from_str(text)
        .map_err(|e| Error::Parse { context: context.to_string(), message: e.to_string() })?;
    scene.validate().map_err(Error::Validation)?;
    Ok(scene)
}

pub fn save(scene: &Scene, path: &Path) -> Result<()> {
    fsutil::atomic_write(path, to_json(scene).as_bytes())
}

pub fn load(path: &Path) -> Result<Scene> {
    let text = fsutil::read_to_string(path)?;
    from_json(&text, &path.display().to_string())
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

fn sample_size(rng: &mut ChaCha8Rng, kind: &FurnitureKind) -> (f64, f64) {
    let w = uniform(rng, kind.width).round();
    let h = uniform(rng, kind.height).round();
    // random 90 degree orientation at generation time; the episode never rotates
    if rng.gen_bool(0.5) {
        (h, w)
    } else {
        (w, h)
    }
}

/// Random placement of a `w x h` rect inside `room`; flush against a wall
/// with probability 0.6.
fn sample_placement(rng: &mut ChaCha8Rng, room: &Rect, w: f64, h: f64) -> Option<Rect> {
    if w > room.width() || h > room.height() {
        return None;
    }
    let mut min_x = uniform(rng, (room.min_x(), room.max_x() - w)).round();
    let mut min_y = uniform(rng, (room.min_y(), room.max_y() - h)).round();
    if rng.gen_bool(0.6) {
        match rng.gen_range(0..4) {
            0 => min_x = room.min_x(),
            1 => min_x = room.max_x() - w,
            2 => min_y = room.min_y(),
            _ => min_y = room.max_y() - h,
        }
    }
    min_x = min_x.clamp(room.min_x(), room.max_x() - w);
    min_y = min_y.clamp(room.min_y(), room.max_y() - h);
    Rect::from_extents(min_x, min_y, min_x + w, min_y + h).ok()
}

#[derive(Clone, Copy)]
enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Rect along wall `side` at fractional position `t`, `length` long and
/// spanning `[inset, outset]` relative to the boundary (negative = inside).
fn wall_strip(room: &Rect, side: Side, t: f64, length: f64, inset: f64, outset: f64) -> Rect {
    let (x0, x1, y0, y1) = (room.min_x(), room.max_x(), room.min_y(), room.max_y());
    let along = |lo: f64, hi: f64| {
        let start = (lo + t * (hi - lo - length)).round();
        (start, start + length)
    };
    let (a, b, c, d) = match side {
        Side::Left => {
            let (s, e) = along(y0, y1);
            (x0 - outset, x0 - inset, s, e)
        }
        Side::Right => {
            let (s, e) = along(y0, y1);
            (x1 + inset, x1 + outset, s, e)
        }
        Side::Bottom => {
            let (s, e) = along(x0, x1);
            (s, e, y0 - outset, y0 - inset)
        }
        Side::Top => {
            let (s, e) = along(x0, x1);
            (s, e, y1 + inset, y1 + outset)
        }
    };
    Rect::from_extents(a, c, b, d).expect("wall strip has positive size")
}

fn rng_for(room_type: RoomType, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (room_type.index() + 1))
}

/// Deterministic procedural room for `(room_type, seed)`.
pub fn generate(room_type: RoomType, seed: u64) -> Result<Scene> {
    let mut rng = rng_for(room_type, seed);
    let template = room_type.template();

    let width = rng.gen_range(300.0..=600.0f64).round();
    let height = rng.gen_range(300.0..=600.0f64).round();
    let room = Rect::from_extents(0.0, 0.0, width, height)?;
    let t = WALL_THICKNESS;

    let walls = vec![
        Element::new("wall_left", ElementKind::Wall, Rect::from_extents(-t, -t, 0.0, height + t)?, "wall"),
        Element::new("wall_right", ElementKind::Wall, Rect::from_extents(width, -t, width + t, height + t)?, "wall"),
        Element::new("wall_bottom", ElementKind::Wall, Rect::from_extents(0.0, -t, width, 0.0)?, "wall"),
        Element::new("wall_top", ElementKind::Wall, Rect::from_extents(0.0, height, width, height + t)?, "wall"),
    ];

    let sides = [Side::Left, Side::Right, Side::Bottom, Side::Top];
    let door_side = rng.gen_range(0..4);
    let door_len = rng.gen_range(80.0..=100.0f64).round();
    // the door leaf swings into the room, so it reaches one wall thickness inside
    let door = wall_strip(&room, sides[door_side], rng.gen_range(0.1..0.9), door_len, -t, t);
    let doors = vec![Element::new("door_0", ElementKind::Door, door, "door")];

    let n_windows = rng.gen_range(1..=2);
    let mut windows = Vec::new();
    for i in 0..n_windows {
        let side = (door_side + 1 + i + rng.gen_range(0..2)) % 4;
        let len = rng.gen_range(80.0..=160.0f64).round();
        let rect = wall_strip(&room, sides[side], rng.gen_range(0.1..0.9), len, 0.0, t);
        if windows.iter().all(|w: &Element| intersection_area(&w.rect, &rect) == 0.0) {
            windows.push(Element::new(format!("window_{i}"), ElementKind::Window, rect, "window"));
        }
    }

    let (gw, gh) = sample_size(&mut rng, &template.movable);
    let mut goal = None;
    for _ in 0..GOAL_ATTEMPTS {
        let Some(candidate) = sample_placement(&mut rng, &room, gw, gh) else { break };
        if intersection_area(&candidate, &door) == 0.0 {
            goal = Some(candidate);
            break;
        }
    }
    let goal = goal.ok_or(Error::Generator { room_type: room_type.to_string(), attempts: GOAL_ATTEMPTS })?;

    let n_static = rng.gen_range(1..=3);
    let mut static_furniture: Vec<Element> = Vec::new();
    for i in 0..n_static {
        let kind = &template.statics[rng.gen_range(0..template.statics.len())];
        let (w, h) = sample_size(&mut rng, kind);
        for _ in 0..STATIC_ATTEMPTS {
            let Some(candidate) = sample_placement(&mut rng, &room, w, h) else { break };
            let clear = intersection_area(&candidate, &goal) == 0.0
                && intersection_area(&candidate, &door) == 0.0
                && static_furniture.iter().all(|e| intersection_area(&e.rect, &candidate) == 0.0);
            if clear {
                static_furniture.push(Element::new(
                    format!("furniture_{i}"),
                    ElementKind::Furniture,
                    candidate,
                    kind.category,
                ));
                break;
            }
        }
    }
    if static_furniture.is_empty() {
        return Err(Error::Generator { room_type: room_type.to_string(), attempts: STATIC_ATTEMPTS });
    }

    let scene = Scene {
        schema: SCHEMA_VERSION,
        room_type,
        indoor_area: room,
        indoor_polygon: None,
        walls,
        doors,
        windows,
        static_furniture,
        movable: Element::new("movable", ElementKind::Furniture, goal, template.movable.category),
        goal,
    };
    debug_assert!(validate(&scene).is_empty(), "{:?}", validate(&scene));
    Ok(scene)
}

/// Interval of movable center coordinates along one axis that keep the
/// movable inside the room.
fn feasible_interval(room_min: f64, room_max: f64, size: f64) -> Option<(f64, f64)> {
    let lo = room_min + 0.5 * size;
    let hi = room_max - 0.5 * size;
    (lo <= hi).then_some((lo, hi))
}

fn feasible_region(scene: &Scene) -> Result<((f64, f64), (f64, f64))> {
    let room = &scene.indoor_area;
    let m = &scene.movable.rect;
    let xs = feasible_interval(room.min_x(), room.max_x(), m.width());
    let ys = feasible_interval(room.min_y(), room.max_y(), m.height());
    match (xs, ys) {
        (Some(x), Some(y)) => Ok((x, y)),
        _ => Err(Error::Infeasible(format!(
            "movable {}x{} does not fit in indoor area {}x{}",
            m.width(),
            m.height(),
            room.width(),
            room.height()
        ))),
    }
}

/// Uniform random movable center over the region where the movable lies
/// fully inside the indoor area.
pub fn random_start(scene: &Scene, seed: u64) -> Result<Vec2> {
    let ((x0, x1), (y0, y1)) = feasible_region(scene)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = if x1 > x0 { rng.gen_range(x0..=x1) } else { x0 };
    let y = if y1 > y0 { rng.gen_range(y0..=y1) } else { y0 };
    Ok(Vec2::new(x, y))
}

/// Lattice offsets `k` such that `anchor + k * step` lies in `[lo, hi]`.
pub fn lattice_range(anchor: f64, step: f64, lo: f64, hi: f64) -> (i64, i64) {
    let kmin = ((lo - anchor) / step).ceil() as i64;
    let kmax = ((hi - anchor) / step).floor() as i64;
    // guard against rounding pushing a boundary point outside
    let fix_lo = if anchor + kmin as f64 * step < lo { kmin + 1 } else { kmin };
    let fix_hi = if anchor + kmax as f64 * step > hi { kmax - 1 } else { kmax };
    (fix_lo, fix_hi)
}

/// Uniform random start restricted to the `step`-lattice anchored at the goal
/// center, so the goal is reachable exactly by unit moves.
pub fn random_lattice_start(scene: &Scene, step: f64, seed: u64) -> Result<Vec2> {
    let ((x0, x1), (y0, y1)) = feasible_region(scene)?;
    let g = scene.goal.center();
    let (ix0, ix1) = lattice_range(g.x, step, x0, x1);
    let (iy0, iy1) = lattice_range(g.y, step, y0, y1);
    if ix0 > ix1 || iy0 > iy1 {
        return Err(Error::Infeasible("no lattice point inside the feasible region".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let i = rng.gen_range(ix0..=ix1);
    let j = rng.gen_range(iy0..=iy1);
    Ok(Vec2::new(g.x + i as f64 * step, g.y + j as f64 * step))
}
