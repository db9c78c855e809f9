//! Exact dynamic programming over the lattice of movable positions.
//!
//! The lattice is anchored at the goal center with spacing equal to the step
//! size, so the goal is one of its states. A move that would leave the room
//! loops back to the same state, as in test mode.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{reward, Action, EnvConfig, EnvState, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::geometry::{iou, Vec2};
use crate::nn::{argmax, Network, Optimizer, OptimizerKind};
use crate::raster::{rasterize, PackedImage};
use crate::scene::{lattice_range, Scene};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
/// Action values closer than this count as a tie.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Finite deterministic MDP. `reward[s][a]` is the reward of arriving in
/// `next[s][a]`; values do not bootstrap through `terminal` states.
/// `success` marks states where an episode stops; the agent never acts there.
#[derive(Debug, Clone)]
pub struct GridMDP {
    pub next: Vec<[usize; NUM_ACTIONS]>,
    pub reward: Vec<[f64; NUM_ACTIONS]>,
    pub terminal: Vec<bool>,
    pub success: Vec<bool>,
    pub gamma: f64,
    /// Movable center of every state (empty for hand-built tables).
    pub centers: Vec<Vec2>,
    pub scene: Option<Arc<Scene>>,
    /// Lattice extents as `(columns, rows)`; state `j * cols + i`.
    pub dims: (usize, usize),
    pub goal_state: Option<usize>,
}

impl GridMDP {
    pub fn from_tables(
        next: Vec<[usize; NUM_ACTIONS]>,
        reward: Vec<[f64; NUM_ACTIONS]>,
        terminal: Vec<bool>,
        gamma: f64,
    ) -> Result<Self> {
        let n = next.len();
        if reward.len() != n || terminal.len() != n {
            return Err(Error::Shape("transition, reward and terminal tables differ in length".into()));
        }
        if next.iter().flatten().any(|&s| s >= n) {
            return Err(Error::Shape("transition leaves the state set".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config("gamma", "must lie in [0, 1)"));
        }
        Ok(Self { next, reward, success: terminal.clone(), terminal, gamma, centers: Vec::new(), scene: None, dims: (n, 1), goal_state: None })
    }

    pub fn len(&self) -> usize {
        self.next.len()
    }

    pub fn is_empty(&self) -> bool {
        self.next.is_empty()
    }

    /// State whose center is `c`, if `c` lies on the lattice.
    pub fn state_at(&self, c: Vec2) -> Option<usize> {
        self.centers.iter().position(|&p| p == c)
    }
}

/// Discretizes `scene` on the goal-anchored `cfg.step_size` lattice.
pub fn build_grid(scene: Arc<Scene>, cfg: &EnvConfig) -> Result<GridMDP> {
    let room = &scene.indoor_area;
    let m = &scene.movable.rect;
    let g = scene.goal.center();
    let step = cfg.step_size;
    let (x0, x1) = (room.min_x() + 0.5 * m.width(), room.max_x() - 0.5 * m.width());
    let (y0, y1) = (room.min_y() + 0.5 * m.height(), room.max_y() - 0.5 * m.height());
    let (i0, i1) = lattice_range(g.x, step, x0, x1);
    let (j0, j1) = lattice_range(g.y, step, y0, y1);
    if x0 > x1 || y0 > y1 || i0 > i1 || j0 > j1 {
        return Err(Error::Infeasible("movable admits no lattice position inside the room".into()));
    }
    let cols = (i1 - i0 + 1) as usize;
    let rows = (j1 - j0 + 1) as usize;
    let centers: Vec<Vec2> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (c, r)))
        .map(|(c, r)| Vec2::new(g.x + (i0 + c as i64) as f64 * step, g.y + (j0 + r as i64) as f64 * step))
        .collect();
    if let Some(c) = centers.iter().find(|&&c| !scene.movable_at(c).is_within(room)) {
        return Err(Error::Infeasible(format!("lattice point ({}, {}) leaves the room", c.x, c.y)));
    }

    let arrival: Vec<f64> = centers.iter().map(|&c| reward(&scene, &scene.movable_at(c), cfg).total).collect();
    let success: Vec<bool> = centers.iter().map(|&c| iou(&scene.movable_at(c), &scene.goal) >= cfg.success_iou).collect();
    let terminal = success.iter().map(|&s| s && cfg.success_terminal).collect();
    let mut next = Vec::with_capacity(centers.len());
    let mut rewards = Vec::with_capacity(centers.len());
    for s in 0..centers.len() {
        let (c, r) = (s % cols, s / cols);
        let mut row = [s; NUM_ACTIONS];
        for a in Action::ALL {
            let d = a.direction();
            let (nc, nr) = (c as i64 + d.x as i64, r as i64 + d.y as i64);
            if (0..cols as i64).contains(&nc) && (0..rows as i64).contains(&nr) {
                row[a.index()] = nr as usize * cols + nc as usize;
            }
        }
        rewards.push(row.map(|t| arrival[t]));
        next.push(row);
    }
    let goal_state = Some((-j0) as usize * cols + (-i0) as usize);
    Ok(GridMDP { next, reward: rewards, terminal, success, gamma: cfg.gamma, centers, scene: Some(scene), dims: (cols, rows), goal_state })
}

#[derive(Debug, Clone)]
pub struct ValueTable {
    pub v: Vec<f64>,
    pub q: Vec<[f64; NUM_ACTIONS]>,
    pub policy: Vec<Action>,
    /// Sup-norm change of every sweep.
    pub deltas: Vec<f64>,
}

impl ValueTable {
    /// The best action value is shared by another action within
    /// [`TIE_TOLERANCE`].
    pub fn is_tie(&self, s: usize) -> bool {
        let best = self.q[s][self.policy[s].index()];
        self.q[s].iter().enumerate().any(|(a, &v)| a != self.policy[s].index() && (best - v).abs() <= TIE_TOLERANCE)
    }

    /// Every action within [`TIE_TOLERANCE`] of the best.
    pub fn optimal_actions(&self, s: usize) -> Vec<Action> {
        let best = self.q[s][self.policy[s].index()];
        Action::ALL.into_iter().filter(|a| (best - self.q[s][a.index()]).abs() <= TIE_TOLERANCE).collect()
    }
}

fn backup(m: &GridMDP, v: &[f64], s: usize) -> [f64; NUM_ACTIONS] {
    let mut q = [0.0; NUM_ACTIONS];
    for (a, qa) in q.iter_mut().enumerate() {
        let t = m.next[s][a];
        let cont = if m.terminal[t] { 0.0 } else { m.gamma * v[t] };
        *qa = m.reward[s][a] + cont;
    }
    q
}

/// Bellman residual `max_s |max_a Q(s, a) - V(s)|` of `v`.
pub fn bellman_residual(m: &GridMDP, v: &[f64]) -> f64 {
    (0..m.len())
        .map(|s| {
            let q = backup(m, v, s);
            (q.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v[s]).abs()
        })
        .fold(0.0, f64::max)
}

/// Synchronous value iteration until the sup-norm change drops below `tol`.
pub fn value_iteration(m: &GridMDP, tol: f64) -> ValueTable {
    let n = m.len();
    let mut v = vec![0.0; n];
    let mut deltas = Vec::new();
    loop {
        let mut delta = 0.0f64;
        let new: Vec<f64> = (0..n)
            .map(|s| {
                let q = backup(m, &v, s);
                let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                delta = delta.max((best - v[s]).abs());
                best
            })
            .collect();
        v = new;
        deltas.push(delta);
        if delta < tol {
            break;
        }
    }
    let q: Vec<[f64; NUM_ACTIONS]> = (0..n).map(|s| backup(m, &v, s)).collect();
    let policy = q.iter().map(|qs| Action::ALL[argmax(qs)]).collect();
    ValueTable { v, q, policy, deltas }
}

/// Fraction of non-success, non-tie lattice states on which `choose`
/// matches the oracle action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub agree: usize,
    pub counted: usize,
    pub ties: usize,
    pub terminal: usize,
}

impl Agreement {
    pub fn fraction(&self) -> f64 {
        if self.counted == 0 {
            1.0
        } else {
            self.agree as f64 / self.counted as f64
        }
    }
}

pub fn agreement_with(m: &GridMDP, values: &ValueTable, mut choose: impl FnMut(usize) -> Result<Action>) -> Result<Agreement> {
    let mut out = Agreement { agree: 0, counted: 0, ties: 0, terminal: 0 };
    for s in 0..m.len() {
        if m.success[s] {
            out.terminal += 1;
        } else if values.is_tie(s) {
            out.ties += 1;
        } else {
            out.counted += 1;
            if choose(s)? == values.policy[s] {
                out.agree += 1;
            }
        }
    }
    Ok(out)
}

/// Observation of the lattice state `s`.
pub fn observe(m: &GridMDP, s: usize, height: usize, width: usize) -> Result<PackedImage> {
    let scene = m.scene.as_ref().ok_or_else(|| Error::Shape("grid has no scene to rasterize".into()))?;
    let state = EnvState { scene: Arc::clone(scene), movable_center: m.centers[s], step_count: 0, done: false };
    Ok(rasterize(&state, height, width).pack())
}

/// Agreement between the greedy policy of `qnet` and the oracle.
pub fn policy_agreement(qnet: &Network<f32>, m: &GridMDP, values: &ValueTable) -> Result<Agreement> {
    let [_, h, w] = qnet.spec().input;
    agreement_with(m, values, |s| {
        let obs: Vec<f32> = {
            let p = observe(m, s, h, w)?;
            let mut buf = vec![0.0; p.len()];
            p.unpack_into(&mut buf);
            buf
        };
        Ok(Action::ALL[argmax(&qnet.forward_slice(&obs, 1)?)])
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { max_epochs: 300, batch_size: 16, lr: 1e-3, seed: 0 }
    }
}

/// Regresses `qnet` onto one-hot oracle actions for every lattice state
/// outside the success set until its greedy policy matches the oracle everywhere.
/// Returns the number of epochs used.
pub fn distill(qnet: &mut Network<f32>, m: &GridMDP, values: &ValueTable, cfg: &DistillConfig) -> Result<usize> {
    let [_, h, w] = qnet.spec().input;
    let states: Vec<usize> = (0..m.len()).filter(|&s| !m.success[s]).collect();
    let obs: Vec<PackedImage> = states.iter().map(|&s| observe(m, s, h, w)).collect::<Result<_>>()?;
    let len = qnet.spec().input_len();
    let mut opt = Optimizer::new(OptimizerKind::default(), qnet);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..states.len()).collect();
    let greedy_ok = |net: &Network<f32>| -> Result<bool> {
        for (k, &s) in states.iter().enumerate() {
            let mut x = vec![0.0f32; len];
            obs[k].unpack_into(&mut x);
            if Action::ALL[argmax(&net.forward_slice(&x, 1)?)] != values.policy[s] {
                return Ok(false);
            }
        }
        Ok(true)
    };
    for epoch in 0..cfg.max_epochs {
        if greedy_ok(qnet)? {
            return Ok(epoch);
        }
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut x = vec![0.0f32; b * len];
            for (dst, &k) in x.chunks_mut(len).zip(chunk) {
                obs[k].unpack_into(dst);
            }
            let cache = qnet.forward_cached(&x, b)?;
            let q = cache.output();
            let mut grad = vec![0.0f32; b * NUM_ACTIONS];
            for (i, &k) in chunk.iter().enumerate() {
                let best = values.policy[states[k]].index();
                for a in 0..NUM_ACTIONS {
                    let y = if a == best { 1.0 } else { 0.0 };
                    grad[i * NUM_ACTIONS + a] = 2.0 * (q[i * NUM_ACTIONS + a] - y) / b as f32;
                }
            }
            let grads = qnet.backward(&cache, &grad)?;
            opt.step(qnet, &grads, cfg.lr)?;
        }
    }
    if greedy_ok(qnet)? {
        Ok(cfg.max_epochs)
    } else {
        Err(Error::config("distill.max_epochs", "policy did not converge to the oracle"))
    }
}
