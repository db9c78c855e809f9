//! The layout simulator: one movable furniture translated in a static room,
//! IoU-shaped rewards and the train/test boundary rules.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{containment, iou, Rect, Vec2};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Left = 0,
    Right = 1,
    Up = 2,
    Down = 3,
}

pub const NUM_ACTIONS: usize = 4;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Left, Action::Right, Action::Up, Action::Down];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// Unit displacement in a y-up frame.
    pub fn direction(self) -> Vec2 {
        match self {
            Action::Left => Vec2::new(-1.0, 0.0),
            Action::Right => Vec2::new(1.0, 0.0),
            Action::Up => Vec2::new(0.0, 1.0),
            Action::Down => Vec2::new(0.0, -1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Left => "left",
            Action::Right => "right",
            Action::Up => "up",
            Action::Down => "down",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Out-of-room moves are dropped and flagged as not replay-eligible.
    Train,
    /// Out-of-room moves are cancelled; the episode continues.
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum R3Mode {
    /// `theta3 * (1 - iou(movable, indoor_area))`
    Iou,
    /// `theta3 * (1 - containment(movable, indoor_area))`
    Containment,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Mode::Train),
            "test" => Ok(Mode::Test),
            _ => Err(format!("unknown mode `{s}` (train|test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub step_size: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub gamma: f64,
    pub max_steps: u32,
    pub success_iou: f64,
    pub mode: Mode,
    pub r3_mode: R3Mode,
    pub reward_clamp: [f64; 2],
    /// Value targets stop bootstrapping at success. Off by default: the
    /// per-step reward near the goal is positive, so a terminal goal would
    /// be worth less than hovering beside it.
    pub success_terminal: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            step_size: 10.0,
            theta1: 100.0,
            theta2: -100.0,
            theta3: -100.0,
            gamma: 0.95,
            max_steps: 200,
            success_iou: 0.95,
            mode: Mode::Train,
            r3_mode: R3Mode::Containment,
            reward_clamp: [-200.0, 100.0],
            success_terminal: false,
        }
    }
}

impl EnvConfig {
    pub fn test_mode(&self) -> Self {
        Self { mode: Mode::Test, ..self.clone() }
    }

    /// Checks sign and range constraints; keys are reported relative to
    /// `prefix` (e.g. `"env"`).
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(self.step_size) {
            return Err(Error::config(key("step_size"), "must be a positive number"));
        }
        if !finite_pos(self.theta1) {
            return Err(Error::config(key("theta1"), "must be positive"));
        }
        if !(self.theta2.is_finite() && self.theta2 < 0.0) {
            return Err(Error::config(key("theta2"), "must be negative"));
        }
        if !(self.theta3.is_finite() && self.theta3 < 0.0) {
            return Err(Error::config(key("theta3"), "must be negative"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(key("gamma"), "must lie in [0, 1)"));
        }
        if self.max_steps == 0 {
            return Err(Error::config(key("max_steps"), "must be positive"));
        }
        if !(self.success_iou > 0.0 && self.success_iou <= 1.0) {
            return Err(Error::config(key("success_iou"), "must lie in (0, 1]"));
        }
        let [lo, hi] = self.reward_clamp;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::config(key("reward_clamp"), "needs finite lo < hi"));
        }
        Ok(())
    }
}

/// Reward terms for one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reward {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub scene: Arc<Scene>,
    pub movable_center: Vec2,
    pub step_count: u32,
    pub done: bool,
}

impl EnvState {
    pub fn movable_rect(&self) -> Rect {
        self.scene.movable_at(self.movable_center)
    }

    pub fn goal_iou(&self) -> f64 {
        iou(&self.movable_rect(), &self.scene.goal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub total: f64,
    /// The move would have left the room and was not applied.
    pub rejected: bool,
    pub done: bool,
    pub success: bool,
    pub replay_eligible: bool,
}

/// Reward for the movable placed at `movable` in `scene`.
pub fn reward(scene: &Scene, movable: &Rect, cfg: &EnvConfig) -> Reward {
    let r1 = cfg.theta1 * iou(&scene.goal, movable);
    let overlap: f64 = scene.obstacles().map(|e| iou(movable, &e.rect)).sum();
    let r2 = cfg.theta2 * overlap;
    let inside = match cfg.r3_mode {
        R3Mode::Iou => iou(movable, &scene.indoor_area),
        R3Mode::Containment => containment(movable, &scene.indoor_area),
    };
    let r3 = cfg.theta3 * (1.0 - inside);
    let [lo, hi] = cfg.reward_clamp;
    let total = (r1 + r2 + r3).clamp(lo, hi);
    Reward { r1, r2, r3, total }
}

#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate("env")?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn reward(&self, state: &EnvState) -> Reward {
        reward(&state.scene, &state.movable_rect(), &self.cfg)
    }

    pub fn is_success(&self, scene: &Scene, center: Vec2) -> bool {
        iou(&scene.movable_at(center), &scene.goal) >= self.cfg.success_iou
    }

    /// Starts an episode with the movable at `start`. A start that already
    /// satisfies the success threshold yields a finished state.
    pub fn reset(&self, scene: Arc<Scene>, start: Vec2) -> Result<EnvState> {
        if !start.is_finite() {
            return Err(Error::InvalidStart(format!("({}, {}) is not finite", start.x, start.y)));
        }
        let rect = scene.movable_at(start);
        if !rect.is_within(&scene.indoor_area) {
            return Err(Error::InvalidStart(format!(
                "movable at ({}, {}) is not inside the indoor area",
                start.x, start.y
            )));
        }
        let done = self.is_success(&scene, start);
        Ok(EnvState { scene, movable_center: start, step_count: 0, done })
    }

    pub fn step(&self, state: &EnvState, action: Action) -> Result<(EnvState, StepOutcome)> {
        if state.done || state.step_count >= self.cfg.max_steps {
            return Err(Error::EpisodeFinished { steps: state.step_count });
        }
        let scene = &state.scene;
        let d = action.direction();
        let candidate = Vec2::new(
            state.movable_center.x + d.x * self.cfg.step_size,
            state.movable_center.y + d.y * self.cfg.step_size,
        );
        let inside = scene.movable_at(candidate).is_within(&scene.indoor_area);
        // both modes keep the movable where it was; they differ only in how
        // the caller treats the transition
        let center = if inside { candidate } else { state.movable_center };
        let rejected = !inside;

        let r = reward(scene, &scene.movable_at(center), &self.cfg);
        let success = self.is_success(scene, center);
        let step_count = state.step_count + 1;
        let done = success || step_count == self.cfg.max_steps;
        let next = EnvState { scene: Arc::clone(scene), movable_center: center, step_count, done };
        let outcome = StepOutcome {
            r1: r.r1,
            r2: r.r2,
            r3: r.r3,
            total: r.total,
            rejected,
            done,
            success,
            replay_eligible: !rejected,
        };
        Ok((next, outcome))
    }
}

/// One applied step of a rollout: the state acted in, the action and its
/// outcome.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub state: EnvState,
    pub action: Action,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub final_state: EnvState,
    /// `iou(final movable, goal)`.
    pub final_iou: f64,
}

impl Trajectory {
    pub fn success(&self) -> bool {
        self.steps.last().map_or(self.final_state.done, |s| s.outcome.success)
    }
}

/// Runs `policy` from `start` until the episode ends.
pub fn rollout<P>(env: &Env, scene: Arc<Scene>, start: Vec2, mut policy: P) -> Result<Trajectory>
where
    P: FnMut(&EnvState) -> Action,
{
    let mut state = env.reset(scene, start)?;
    let mut steps = Vec::new();
    while !state.done {
        let action = policy(&state);
        let (next, outcome) = env.step(&state, action)?;
        steps.push(TrajectoryStep { state, action, outcome });
        state = next;
    }
    let final_iou = state.goal_iou();
    Ok(Trajectory { steps, final_state: state, final_iou })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use crate::scene::{generate, Element, ElementKind, RoomType, SCHEMA_VERSION};
    use approx::assert_abs_diff_eq;

    /// 400x300 room with walls only, movable 100x60, goal centered at
    /// (200, 150).
    fn empty_room() -> Arc<Scene> {
        let room = Rect::from_extents(0.0, 0.0, 400.0, 300.0).unwrap();
        let goal = Rect::new(Vec2::new(200.0, 150.0), 100.0, 60.0).unwrap();
        let walls = vec![
            Element::new("wl", ElementKind::Wall, Rect::from_extents(-10.0, -10.0, 0.0, 310.0).unwrap(), "wall"),
            Element::new("wr", ElementKind::Wall, Rect::from_extents(400.0, -10.0, 410.0, 310.0).unwrap(), "wall"),
            Element::new("wb", ElementKind::Wall, Rect::from_extents(0.0, -10.0, 400.0, 0.0).unwrap(), "wall"),
            Element::new("wt", ElementKind::Wall, Rect::from_extents(0.0, 300.0, 400.0, 310.0).unwrap(), "wall"),
        ];
        Arc::new(Scene {
            schema: SCHEMA_VERSION,
            room_type: RoomType::Bedroom,
            indoor_area: room,
            indoor_polygon: None,
            walls,
            doors: vec![],
            windows: vec![],
            static_furniture: vec![],
            movable: Element::new("m", ElementKind::Furniture, goal, "bed"),
            goal,
        })
    }

    fn env(mode: Mode) -> Env {
        Env::new(EnvConfig { mode, ..EnvConfig::default() }).unwrap()
    }

    #[test]
    fn config_validation_names_keys() {
        let bad = EnvConfig { theta2: 1.0, ..EnvConfig::default() };
        let err = bad.validate("env").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "env.theta2"), "{err}");
        let bad = EnvConfig { reward_clamp: [5.0, 5.0], ..EnvConfig::default() };
        assert!(bad.validate("").is_err());
        let bad = EnvConfig { gamma: 1.0, ..EnvConfig::default() };
        assert!(bad.validate("").is_err());
    }

    #[test]
    fn reset_at_goal_is_perfect() {
        let s = empty_room();
        let st = env(Mode::Train).reset(s.clone(), s.goal.center()).unwrap();
        assert_eq!(st.goal_iou(), 1.0);
        assert_eq!(st.step_count, 0);
        assert!(st.done);
    }

    #[test]
    fn reset_rejects_start_outside() {
        let s = empty_room();
        let e = env(Mode::Train);
        assert!(matches!(e.reset(s.clone(), Vec2::new(10.0, 150.0)), Err(Error::InvalidStart(_))));
        assert!(matches!(e.reset(s, Vec2::new(f64::NAN, 1.0)), Err(Error::InvalidStart(_))));
    }

    #[test]
    fn step_moves_by_delta() {
        let s = empty_room();
        let e = env(Mode::Train);
        let st = e.reset(s, Vec2::new(100.0, 100.0)).unwrap();
        let (next, out) = e.step(&st, Action::Left).unwrap();
        assert_eq!(next.movable_center, Vec2::new(90.0, 100.0));
        assert!(!out.rejected && out.replay_eligible);
        assert_eq!(next.step_count, 1);
        let (up, _) = e.step(&st, Action::Up).unwrap();
        assert_eq!(up.movable_center, Vec2::new(100.0, 110.0));
    }

    #[test]
    fn train_mode_drops_out_of_room_moves() {
        let s = empty_room();
        let e = env(Mode::Train);
        // right edge flush: 400 - 50
        let st = e.reset(s, Vec2::new(350.0, 100.0)).unwrap();
        let (next, out) = e.step(&st, Action::Right).unwrap();
        assert!(out.rejected);
        assert!(!out.replay_eligible);
        assert_eq!(next.movable_center, st.movable_center);
        assert_eq!(next.step_count, 1);
        assert!(!next.done);
    }

    #[test]
    fn test_mode_cancels_and_continues() {
        let s = empty_room();
        let e = env(Mode::Test);
        let st = e.reset(s, Vec2::new(350.0, 100.0)).unwrap();
        let (next, out) = e.step(&st, Action::Right).unwrap();
        assert!(out.rejected && !out.done);
        assert_eq!(next.movable_center, st.movable_center);
        let (after, _) = e.step(&next, Action::Left).unwrap();
        assert_eq!(after.movable_center, Vec2::new(340.0, 100.0));
    }

    #[test]
    fn arriving_at_goal_succeeds() {
        let s = empty_room();
        let e = env(Mode::Train);
        let st = e.reset(s.clone(), Vec2::new(190.0, 150.0)).unwrap();
        let (next, out) = e.step(&st, Action::Right).unwrap();
        assert!(out.success && out.done);
        assert_eq!(out.total, 100.0);
        assert!(matches!(e.step(&next, Action::Left), Err(Error::EpisodeFinished { .. })));
    }

    #[test]
    fn episode_ends_at_max_steps() {
        let s = empty_room();
        let e = Env::new(EnvConfig { max_steps: 3, ..EnvConfig::default() }).unwrap();
        let mut st = e.reset(s, Vec2::new(100.0, 100.0)).unwrap();
        for i in 0..3 {
            let (n, out) = e.step(&st, Action::Down).unwrap();
            assert_eq!(out.done, i == 2);
            st = n;
        }
        assert!(e.step(&st, Action::Down).is_err());
    }

    #[test]
    fn at_goal_reward_is_theta1() {
        let s = generate(RoomType::Bedroom, 11).unwrap();
        let r = reward(&s, &s.goal, &EnvConfig::default());
        assert_eq!((r.r1, r.r2, r.r3, r.total), (100.0, 0.0, 0.0, 100.0));
    }

    #[test]
    fn half_outside_containment_penalty() {
        let s = empty_room();
        let cfg = EnvConfig::default();
        // 100 wide, centered on the right boundary
        let r = reward(&s, &s.movable_at(Vec2::new(400.0, 150.0)), &cfg);
        assert_abs_diff_eq!(r.r3, -50.0, epsilon = 1e-12);
    }

    #[test]
    fn literal_iou_mode_penalises_inside_furniture() {
        let s = empty_room();
        let cfg = EnvConfig { r3_mode: R3Mode::Iou, ..EnvConfig::default() };
        let r = reward(&s, &s.goal, &cfg);
        // iou with the room = 6000 / 120000
        assert_abs_diff_eq!(r.r3, -100.0 * (1.0 - 0.05), epsilon = 1e-12);
    }

    #[test]
    fn wall_overlap_uses_iou() {
        let s = empty_room();
        let cfg = EnvConfig::default();
        // straddle the left wall: movable [-20, 80] x [120, 180]
        let m = s.movable_at(Vec2::new(30.0, 150.0));
        let r = reward(&s, &m, &cfg);
        let expected: f64 = s.walls.iter().map(|w| iou(&m, &w.rect)).sum::<f64>() * -100.0;
        assert!(expected < 0.0);
        assert_abs_diff_eq!(r.r2, expected, epsilon = 1e-12);
    }

    #[test]
    fn alternating_policy_ends_where_it_started() {
        let s = empty_room();
        let e = Env::new(EnvConfig { max_steps: 20, mode: Mode::Test, ..EnvConfig::default() }).unwrap();
        let start = Vec2::new(100.0, 60.0);
        let mut flip = false;
        let t = rollout(&e, s.clone(), start, |_| {
            flip = !flip;
            if flip {
                Action::Left
            } else {
                Action::Right
            }
        })
        .unwrap();
        assert_eq!(t.steps.len(), 20);
        assert_eq!(t.final_state.movable_center, start);
        assert_eq!(t.final_iou, iou(&s.movable_at(start), &s.goal));
    }

    #[test]
    fn oracle_like_policy_reaches_goal() {
        let s = empty_room();
        let e = env(Mode::Test);
        let g = s.goal.center();
        let t = rollout(&e, s.clone(), Vec2::new(60.0, 40.0), |st| {
            let c = st.movable_center;
            if c.x < g.x {
                Action::Right
            } else if c.x > g.x {
                Action::Left
            } else if c.y < g.y {
                Action::Up
            } else {
                Action::Down
            }
        })
        .unwrap();
        assert_eq!(t.final_iou, 1.0);
        assert!(t.success());
        assert_eq!(t.steps.len(), 14 + 11);
    }

    #[test]
    fn greedy_on_r1_never_decreases_iou() {
        let s = empty_room();
        let e = env(Mode::Test);
        let cfg = e.config().clone();
        let mut starts = 0;
        for i in 0..=30 {
            for j in 0..=24 {
                let start = Vec2::new(50.0 + 10.0 * i as f64, 30.0 + 10.0 * j as f64);
                let greedy = |st: &EnvState| {
                    let mut best = (f64::NEG_INFINITY, Action::Left);
                    for a in Action::ALL {
                        let c = st.movable_center;
                        let d = a.direction();
                        let next = s.movable_at(Vec2::new(c.x + 10.0 * d.x, c.y + 10.0 * d.y));
                        if !next.is_within(&s.indoor_area) {
                            continue;
                        }
                        let r1 = reward(&s, &next, &cfg).r1;
                        if r1 > best.0 {
                            best = (r1, a);
                        }
                    }
                    best.1
                };
                let t = rollout(&e, s.clone(), start, greedy).unwrap();
                let mut last = iou(&s.movable_at(start), &s.goal);
                for step in &t.steps {
                    let now = step.outcome.r1 / 100.0;
                    assert!(now >= last - 1e-12, "start {start:?}");
                    last = now;
                }
                starts += 1;
            }
        }
        assert_eq!(starts, 31 * 25);
    }

    #[test]
    fn stepping_is_deterministic_and_static_scene_unchanged() {
        let s = Arc::new(generate(RoomType::Kitchen, 4).unwrap());
        let e = env(Mode::Train);
        let before = (*s).clone();
        let st = e.reset(s.clone(), crate::scene::random_lattice_start(&s, 10.0, 1).unwrap()).unwrap();
        for a in Action::ALL {
            let (n1, o1) = e.step(&st, a).unwrap();
            let (n2, o2) = e.step(&st, a).unwrap();
            assert_eq!(n1, n2);
            assert_eq!(o1, o2);
            assert_eq!(*n1.scene, before);
            let moved = n1.movable_center - st.movable_center;
            let dist = (moved.x.abs(), moved.y.abs());
            assert!(dist == (0.0, 0.0) || dist == (10.0, 0.0) || dist == (0.0, 10.0));
        }
    }
}
