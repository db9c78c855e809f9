//! Deep Q-learning: epsilon-greedy behavior, replay memory, Bellman targets
//! against a periodically synchronized target network, and the training
//! loop with checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{Action, Env, EnvConfig, EnvState, Mode, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::geometry::Vec2;
use crate::nn::{self, argmax, Network, NetworkSpec, Optimizer, OptimizerKind};
use crate::raster::{rasterize, PackedImage};
use crate::scene::{random_lattice_start, Scene};

/// Linear decay from `start` to `end` over `decay_steps`, constant after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub gamma: f64,
    pub lr: f64,
    pub epsilon: EpsilonSchedule,
    pub target_sync_period: u64,
    pub replay_capacity: usize,
    pub warmup_steps: u64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 50_000,
            batch_size: 32,
            gamma: 0.95,
            lr: 2.5e-4,
            epsilon: EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 50_000 },
            target_sync_period: 1_000,
            replay_capacity: 50_000,
            warmup_steps: 1_000,
            seed: 0,
            optimizer: OptimizerKind::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        if self.total_steps == 0 {
            return Err(Error::config(key("total_steps"), "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config(key("batch_size"), "must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(key("gamma"), "must lie in [0, 1)"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(key("lr"), "must be positive"));
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) {
            return Err(Error::config(key("epsilon.start"), "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&e.end) {
            return Err(Error::config(key("epsilon.end"), "must lie in [0, 1]"));
        }
        if e.end > e.start {
            return Err(Error::config(key("epsilon.end"), "must not exceed epsilon.start"));
        }
        if e.decay_steps == 0 {
            return Err(Error::config(key("epsilon.decay_steps"), "must be positive"));
        }
        if self.target_sync_period == 0 {
            return Err(Error::config(key("target_sync_period"), "must be positive"));
        }
        if self.replay_capacity < self.batch_size {
            return Err(Error::config(key("replay_capacity"), "must hold at least one batch"));
        }
        if self.warmup_steps == 0 {
            return Err(Error::config(key("warmup_steps"), "must be positive"));
        }
        Ok(())
    }
}

/// One stored experience. `from`/`to` are the movable centers, kept so the
/// memory can be audited independently of the images.
#[derive(Debug, Clone)]
pub struct Transition {
    pub s: Arc<PackedImage>,
    pub action: Action,
    pub reward: f32,
    pub s_next: Arc<PackedImage>,
    /// No bootstrapping from the next state. Set on success only when the
    /// environment treats success as terminal; time-limit ends never are.
    pub done: bool,
    pub scene: Arc<Scene>,
    pub from: Vec2,
    pub to: Vec2,
}

/// Fixed-capacity ring buffer; the oldest transition is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    buf: Vec<Transition>,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, buf: Vec::with_capacity(capacity.min(4096)), next: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() < self.capacity {
            self.buf.push(t);
        } else {
            self.buf[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.buf[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buf.iter()
    }

    /// Number of stored transitions whose move did not actually happen or
    /// left the room. Zero for a memory filled by [`Trainer`].
    pub fn audit_out_of_room(&self, step_size: f64) -> usize {
        self.buf
            .iter()
            .filter(|t| {
                let d = t.to - t.from;
                let expected = t.action.direction();
                let moved = d.x == expected.x * step_size && d.y == expected.y * step_size;
                let inside = t.scene.movable_at(t.to).is_within(&t.scene.indoor_area);
                !(moved && inside)
            })
            .count()
    }
}

/// Epsilon-greedy: uniform action with probability `epsilon`, otherwise the
/// argmax of the Q-values with the lowest index winning ties.
pub fn select_action(net: &Network<f32>, obs: &[f32], epsilon: f64, rng: &mut impl Rng) -> Result<Action> {
    if rng.gen::<f64>() < epsilon {
        return Ok(Action::ALL[rng.gen_range(0..NUM_ACTIONS)]);
    }
    let q = net.forward_slice(obs, 1)?;
    Ok(Action::ALL[argmax(&q)])
}

/// `r + gamma * max_next_q`, dropping the bootstrap term on terminal steps.
pub fn bellman_target(reward: f64, done: bool, max_next_q: f64, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * max_next_q
    }
}

fn unpack_batch(images: impl Iterator<Item = Arc<PackedImage>>, n: usize, len: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * len];
    for (chunk, img) in out.chunks_mut(len).zip(images) {
        img.unpack_into(chunk);
    }
    out
}

/// Bellman targets for `batch` using `target_net` on the next states.
pub fn bellman_targets(batch: &[&Transition], target_net: &Network<f32>, gamma: f64) -> Result<Vec<f32>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let len = target_net.spec().input_len();
    let next = unpack_batch(batch.iter().map(|t| Arc::clone(&t.s_next)), batch.len(), len);
    let q_next = target_net.forward_slice(&next, batch.len())?;
    Ok(batch
        .iter()
        .zip(q_next.chunks(NUM_ACTIONS))
        .map(|(t, q)| {
            let max = q.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            bellman_target(t.reward as f64, t.done, max, gamma) as f32
        })
        .collect())
}

/// Samples a batch without replacement and takes one optimizer step on
/// `qnet` toward the Bellman targets. Returns the mean squared error before
/// the update.
pub fn train_step(
    qnet: &mut Network<f32>,
    target_net: &Network<f32>,
    opt: &mut Optimizer<f32>,
    memory: &ReplayMemory,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    let b = cfg.batch_size;
    if memory.len() < b {
        return Err(Error::InsufficientMemory { have: memory.len(), need: b });
    }
    let picks = index::sample(rng, memory.len(), b);
    let batch: Vec<&Transition> = picks.iter().map(|i| memory.get(i)).collect();
    let targets = bellman_targets(&batch, target_net, cfg.gamma)?;

    let len = qnet.spec().input_len();
    let states = unpack_batch(batch.iter().map(|t| Arc::clone(&t.s)), b, len);
    let cache = qnet.forward_cached(&states, b)?;
    let q = cache.output();
    let mut grad = vec![0.0f32; b * NUM_ACTIONS];
    let mut loss = 0.0f64;
    for (i, (t, y)) in batch.iter().zip(&targets).enumerate() {
        let k = i * NUM_ACTIONS + t.action.index();
        let err = q[k] - y;
        loss += (err as f64) * (err as f64);
        grad[k] = 2.0 * err / b as f32;
    }
    let grads = qnet.backward(&cache, &grad)?;
    opt.step(qnet, &grads, cfg.lr)?;
    Ok(loss / b as f64)
}

pub fn sync_target(qnet: &Network<f32>, target_net: &mut Network<f32>) -> Result<()> {
    target_net.copy_from(qnet)
}

/// Per-episode training log row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: u64,
    pub steps: u32,
    pub ret: f64,
    pub final_iou: f64,
    pub epsilon: f64,
}

pub const METRICS_HEADER: &str = "episode,steps,return,final_iou,epsilon";

pub fn metrics_csv(rows: &[EpisodeMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.episode, r.steps, r.ret, r.final_iou, r.epsilon);
    }
    s
}

fn parse_metrics_csv(text: &str) -> Result<Vec<EpisodeMetrics>> {
    let bad = |line: usize| Error::Parse { context: "metrics csv".into(), message: format!("bad row at line {line}") };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(n + 1));
        }
        out.push(EpisodeMetrics {
            episode: f[0].parse().map_err(|_| bad(n + 1))?,
            steps: f[1].parse().map_err(|_| bad(n + 1))?,
            ret: f[2].parse().map_err(|_| bad(n + 1))?,
            final_iou: f[3].parse().map_err(|_| bad(n + 1))?,
            epsilon: f[4].parse().map_err(|_| bad(n + 1))?,
        });
    }
    Ok(out)
}

/// Checkpoint sidecar contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format: u32,
    pub network: NetworkSpec,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub episode: u64,
    pub optimizer_t: u64,
    pub rng: ChaCha8Rng,
    pub config_hash: String,
}

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Paths of the files that make up a checkpoint rooted at `base`.
#[derive(Debug, Clone)]
pub struct CheckpointPaths {
    pub weights: PathBuf,
    pub sidecar: PathBuf,
    pub target: PathBuf,
    pub adam_m: PathBuf,
    pub adam_v: PathBuf,
    pub metrics: PathBuf,
}

impl CheckpointPaths {
    pub fn new(base: &Path) -> Self {
        let with = |ext: &str| {
            let mut s = base.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        Self {
            weights: base.to_path_buf(),
            sidecar: with(".json"),
            target: with(".target"),
            adam_m: with(".adam_m"),
            adam_v: with(".adam_v"),
            metrics: with(".metrics.csv"),
        }
    }
}

pub fn config_hash(env: &EnvConfig, train: &TrainConfig, spec: &NetworkSpec) -> String {
    let json = serde_json::to_vec(&(env, train, spec)).expect("configs serialize");
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a checkpoint's sidecar and Q-network.
pub fn load_checkpoint(base: &Path) -> Result<(CheckpointMeta, Network<f32>)> {
    let paths = CheckpointPaths::new(base);
    let text = fsutil::read_to_string(&paths.sidecar)?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { context: paths.sidecar.display().to_string(), message: e.to_string() })?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(Error::WeightFormat(format!("unsupported checkpoint format {}", meta.format)));
    }
    let net = nn::load_weights_expecting(&paths.weights, &meta.network)?;
    Ok((meta, net))
}

struct Episode {
    state: EnvState,
    obs: Arc<PackedImage>,
    ret: f64,
}

/// Owns every piece of training state; single-threaded and deterministic for
/// a fixed seed.
pub struct Trainer {
    env: Env,
    cfg: TrainConfig,
    scenes: Vec<Arc<Scene>>,
    pub qnet: Network<f32>,
    pub target: Network<f32>,
    opt: Optimizer<f32>,
    pub memory: ReplayMemory,
    rng: ChaCha8Rng,
    step: u64,
    episode: u64,
    current: Option<Episode>,
    pub metrics: Vec<EpisodeMetrics>,
    pub last_loss: Option<f64>,
}

impl Trainer {
    pub fn new(scenes: Vec<Arc<Scene>>, env_cfg: EnvConfig, cfg: TrainConfig, spec: NetworkSpec) -> Result<Self> {
        env_cfg.validate("env")?;
        cfg.validate("train")?;
        if env_cfg.mode != Mode::Train {
            return Err(Error::config("env.mode", "training requires train mode"));
        }
        if scenes.is_empty() {
            return Err(Error::config("paths.scenes", "no training scenes"));
        }
        spec.validate()?;
        if spec.input[0] != crate::raster::CHANNELS {
            return Err(Error::Shape(format!("network expects {} channels", spec.input[0])));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let qnet = Network::new(spec, rng.gen())?;
        let target = qnet.clone();
        let opt = Optimizer::new(cfg.optimizer, &qnet);
        Ok(Self {
            env: Env::new(env_cfg)?,
            memory: ReplayMemory::new(cfg.replay_capacity),
            cfg,
            scenes,
            qnet,
            target,
            opt,
            rng,
            step: 0,
            episode: 0,
            current: None,
            metrics: Vec::new(),
            last_loss: None,
        })
    }

    /// Restores a checkpoint written by [`Trainer::save_checkpoint`]. The
    /// replay memory is not persisted and refills after resuming.
    pub fn resume(scenes: Vec<Arc<Scene>>, base: &Path, total_steps: Option<u64>) -> Result<Self> {
        let (meta, qnet) = load_checkpoint(base)?;
        let paths = CheckpointPaths::new(base);
        let mut train = meta.train.clone();
        if let Some(t) = total_steps {
            train.total_steps = t;
        }
        let mut t = Trainer::new(scenes, meta.env.clone(), train, meta.network.clone())?;
        t.qnet = qnet;
        t.target = nn::load_weights_expecting(&paths.target, &meta.network)?;
        if let OptimizerKind::Adam { .. } = t.cfg.optimizer {
            t.opt.m = nn::load_params(&paths.adam_m, Some(&meta.network))?.1;
            t.opt.v = nn::load_params(&paths.adam_v, Some(&meta.network))?.1;
        }
        t.opt.t = meta.optimizer_t;
        t.rng = meta.rng;
        t.step = meta.step;
        t.episode = meta.episode;
        if paths.metrics.exists() {
            t.metrics = parse_metrics_csv(&fsutil::read_to_string(&paths.metrics)?)?;
        }
        Ok(t)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn episode_count(&self) -> u64 {
        self.episode
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon.value(self.step)
    }

    fn observe(&self, state: &EnvState) -> Arc<PackedImage> {
        let [_, h, w] = self.qnet.spec().input;
        Arc::new(rasterize(state, h, w).pack())
    }

    fn begin_episode(&mut self) -> Result<Episode> {
        let step = self.env.config().step_size;
        loop {
            let scene = Arc::clone(&self.scenes[self.rng.gen_range(0..self.scenes.len())]);
            let start = random_lattice_start(&scene, step, self.rng.gen())?;
            let state = self.env.reset(scene, start)?;
            if !state.done {
                let obs = self.observe(&state);
                return Ok(Episode { state, obs, ret: 0.0 });
            }
        }
    }

    /// One environment step plus, after warmup, one gradient step.
    pub fn step_once(&mut self) -> Result<()> {
        let mut ep = match self.current.take() {
            Some(ep) => ep,
            None => self.begin_episode()?,
        };
        let epsilon = self.epsilon();
        let mut obs = vec![0.0f32; ep.obs.len()];
        ep.obs.unpack_into(&mut obs);
        let action = select_action(&self.qnet, &obs, epsilon, &mut self.rng)?;
        let (next, outcome) = self.env.step(&ep.state, action)?;
        let next_obs = self.observe(&next);
        if outcome.replay_eligible {
            self.memory.push(Transition {
                s: Arc::clone(&ep.obs),
                action,
                reward: outcome.total as f32,
                s_next: Arc::clone(&next_obs),
                done: outcome.success && self.env.config().success_terminal,
                scene: Arc::clone(&next.scene),
                from: ep.state.movable_center,
                to: next.movable_center,
            });
        }
        self.step += 1;
        if self.step > self.cfg.warmup_steps && self.memory.len() >= self.cfg.batch_size {
            let loss = train_step(&mut self.qnet, &self.target, &mut self.opt, &self.memory, &self.cfg, &mut self.rng)?;
            self.last_loss = Some(loss);
        }
        if self.step % self.cfg.target_sync_period == 0 {
            sync_target(&self.qnet, &mut self.target)?;
        }
        ep.ret += outcome.total;
        if outcome.done {
            self.episode += 1;
            self.metrics.push(EpisodeMetrics {
                episode: self.episode,
                steps: next.step_count,
                ret: ep.ret,
                final_iou: next.goal_iou(),
                epsilon,
            });
        } else {
            self.current = Some(Episode { state: next, obs: next_obs, ret: ep.ret });
        }
        Ok(())
    }

    /// Runs until `total_steps`, writing a checkpoint at `checkpoint` every
    /// `checkpoint_every` steps and at the end when a path is given.
    pub fn run(&mut self, checkpoint: Option<&Path>) -> Result<()> {
        while self.step < self.cfg.total_steps {
            self.step_once()?;
            if let Some(path) = checkpoint {
                if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 {
                    self.save_checkpoint(path)?;
                }
            }
        }
        if let Some(path) = checkpoint {
            self.save_checkpoint(path)?;
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, base: &Path) -> Result<()> {
        let paths = CheckpointPaths::new(base);
        let spec = self.qnet.spec();
        nn::save_weights(&self.qnet, &paths.weights)?;
        nn::save_weights(&self.target, &paths.target)?;
        if let OptimizerKind::Adam { .. } = self.cfg.optimizer {
            nn::save_params(spec, &self.opt.m, &paths.adam_m)?;
            nn::save_params(spec, &self.opt.v, &paths.adam_v)?;
        }
        fsutil::atomic_write(&paths.metrics, metrics_csv(&self.metrics).as_bytes())?;
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT,
            network: spec.clone(),
            env: self.env.config().clone(),
            train: self.cfg.clone(),
            step: self.step,
            episode: self.episode,
            optimizer_t: self.opt.t,
            rng: self.rng.clone(),
            config_hash: config_hash(self.env.config(), &self.cfg, spec),
        };
        let mut json = serde_json::to_string_pretty(&meta).expect("meta serializes");
        json.push('\n');
        fsutil::atomic_write(&paths.sidecar, json.as_bytes())
    }
}
