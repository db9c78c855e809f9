//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::agent::{load_checkpoint, EpsilonSchedule, TrainConfig, Trainer};
use crate::env::{rollout, EnvConfig, EnvState, Mode};
use crate::error::Error;
use crate::eval::{evaluate, greedy_policy, NamedScene, DEFAULT_STARTS_PER_ROOM};
use crate::fsutil;
use crate::geometry::Vec2;
use crate::nn::{desk_spec, gradcheck, paper_spec, NetworkSpec};
use crate::oracle::{build_grid, distill, policy_agreement, value_iteration, DistillConfig, DEFAULT_TOLERANCE};
use crate::raster::{render_png, Preset};
use crate::scene::{self, RoomType, Scene};

pub const AGREEMENT_THRESHOLD: f64 = 0.9;
pub const DEFAULT_RENDER_SIDE: usize = 480;

pub fn preset_spec(p: Preset) -> NetworkSpec {
    match p {
        Preset::Paper => paper_spec(),
        Preset::Desk => desk_spec(),
    }
}

/// The preset whose architecture is `spec`, if any.
pub fn spec_preset(spec: &NetworkSpec) -> Option<Preset> {
    [Preset::Paper, Preset::Desk].into_iter().find(|&p| &preset_spec(p) == spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    pub preset: Preset,
    /// Must equal the preset's resolution when given.
    pub resolution: Option<[usize; 2]>,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self { preset: Preset::Desk, resolution: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory of scene JSON files, or a single scene file.
    pub scenes: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Everything `train` needs. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub raster: RasterConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn validate(&self) -> crate::Result<()> {
        self.env.validate("env")?;
        self.train.validate("train")?;
        if let Some([h, w]) = self.raster.resolution {
            let (ph, pw) = self.raster.preset.resolution();
            if (h, w) != (ph, pw) {
                return Err(Error::config("raster.resolution", format!("preset needs {ph}x{pw}, got {h}x{w}")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = fsutil::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { context: path.display().to_string(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.scenes, &mut cfg.paths.out_dir, &mut cfg.paths.checkpoint].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Configuration used for the single-bedroom desk-scale acceptance run.
    pub fn desk_single_room() -> Self {
        let train = TrainConfig {
            total_steps: 10_000,
            epsilon: EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 10_000 },
            ..TrainConfig::default()
        };
        Self { train, ..Self::default() }
    }
}

/// Loads every `*.json` scene in `path` (sorted by file name), or `path`
/// itself when it is a file. Ids are file stems.
pub fn load_scenes(path: &Path) -> crate::Result<Vec<NamedScene>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::config("scenes", format!("no scene files in {}", path.display())));
    }
    files
        .into_iter()
        .map(|f| {
            let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(NamedScene { id, scene: Arc::new(scene::load(&f)?) })
        })
        .collect()
}

/// Seed of the `index`-th scene of a `gen` batch.
pub fn scene_seed(seed: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(index))
}

fn parse_point(s: &str) -> Result<Vec2, String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected \"x,y\", got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok(Vec2::new(p(x)?, p(y)?))
}

#[derive(Debug, Parser)]
#[command(name = "roomdqn", version, about = "Single-furniture layout MDP: generate scenes, train and evaluate a DQN, verify against an exact oracle")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scene JSON files.
    Gen {
        #[arg(long)]
        room_type: RoomType,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a Q-network; resumes when the checkpoint already exists and
    /// --resume is given.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
        /// Override train.total_steps.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Greedy random-start evaluation.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        /// Starts per scene (default: enough for ~2000 per room type).
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        starts: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-rollout CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail unless the checkpoint uses this preset.
        #[arg(long)]
        preset: Option<Preset>,
    },
    /// Greedy rollout from one start, writing PNG frames and a trajectory CSV.
    Rollout {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        start: Vec2,
        #[arg(long)]
        render: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RENDER_SIDE)]
        max_side: usize,
    },
    /// Render a scene to PNG.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// Movable center (default: the goal).
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        start: Option<Vec2>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RENDER_SIDE)]
        max_side: usize,
    },
    /// Fit a fresh network to the exact oracle policy of one scene.
    Distill {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "desk")]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DistillConfig::default().max_epochs)]
        epochs: usize,
    },
    /// Agreement of the greedy policy with value iteration; fails below 0.9.
    OracleCheck {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = AGREEMENT_THRESHOLD)]
        threshold: f64,
    },
    /// Finite-difference gradient verification; fails above 1e-4.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
}

/// Parses arguments, runs the command and maps failures to exit codes:
/// 0 success, 1 failed check or runtime error, 2 usage error.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Returns whether the command's check passed.
pub fn run(cmd: Command) -> anyhow::Result<bool> {
    match cmd {
        Command::Gen { room_type, count, seed, out } => {
            fsutil::create_dir_all(&out)?;
            for i in 0..count {
                let s = scene::generate(room_type, scene_seed(seed, i))?;
                let path = out.join(format!("{}_{:04}.json", room_type.as_str(), i));
                scene::save(&s, &path)?;
            }
            println!("wrote {count} {} scenes to {}", room_type.as_str(), out.display());
            Ok(true)
        }
        Command::Train { config, out, resume, steps } => {
            let cfg = RunConfig::load(&config)?;
            let ckpt = out.or(cfg.paths.checkpoint.clone()).context("no checkpoint path (--out or paths.checkpoint)")?;
            let scenes_path = cfg.paths.scenes.clone().context("paths.scenes is not set")?;
            let scenes: Vec<Arc<Scene>> = load_scenes(&scenes_path)?.into_iter().map(|s| s.scene).collect();
            if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
                fsutil::create_dir_all(dir)?;
            }
            let total = steps.unwrap_or(cfg.train.total_steps);
            let mut trainer = if resume && ckpt.exists() {
                let t = Trainer::resume(scenes, &ckpt, Some(total))?;
                println!("resumed at step {} (episode {})", t.step_count(), t.episode_count());
                t
            } else {
                let train = TrainConfig { total_steps: total, ..cfg.train.clone() };
                Trainer::new(scenes, cfg.env.clone(), train, preset_spec(cfg.raster.preset))?
            };
            trainer.run(Some(&ckpt))?;
            print!("trained to step {} over {} episodes", trainer.step_count(), trainer.episode_count());
            let recent = &trainer.metrics[trainer.metrics.len().saturating_sub(100)..];
            if recent.is_empty() {
                println!();
            } else {
                let mean = recent.iter().map(|m| m.final_iou).sum::<f64>() / recent.len() as f64;
                println!("; mean final IoU of last {} episodes {mean:.3}", recent.len());
            }
            println!("checkpoint {}", ckpt.display());
            Ok(true)
        }
        Command::Eval { ckpt, scenes, starts, seed, out, preset } => {
            let (meta, net) = load_checkpoint(&ckpt)?;
            if let Some(p) = preset {
                if spec_preset(&meta.network) != Some(p) {
                    bail!("checkpoint network does not match preset {p:?}");
                }
            }
            let scenes = load_scenes(&scenes)?;
            let starts = match starts {
                Some(k) => k as usize,
                None => {
                    let per_room = scenes.iter().filter(|s| s.scene.room_type == scenes[0].scene.room_type).count();
                    DEFAULT_STARTS_PER_ROOM.div_ceil(per_room)
                }
            };
            let report = evaluate(&net, &scenes, starts, seed, &meta.env)?;
            if let Some(path) = out {
                fsutil::atomic_write(&path, report.to_csv().as_bytes())?;
            }
            print!("{}", report.format_table());
            Ok(true)
        }
        Command::Rollout { ckpt, scene, start, render, max_side } => {
            let (meta, net) = load_checkpoint(&ckpt)?;
            let scene = Arc::new(scene::load(&scene)?);
            let env = crate::env::Env::new(EnvConfig { mode: Mode::Test, ..meta.env })?;
            let traj = rollout(&env, Arc::clone(&scene), start, greedy_policy(&net))?;
            fsutil::create_dir_all(&render)?;
            let mut csv = String::from("step,action,r1,r2,r3,total,iou\n");
            let frame = |i: usize, state: &EnvState| render_png(state, &render.join(format!("frame_{i:04}.png")), max_side);
            for (i, st) in traj.steps.iter().enumerate() {
                frame(i, &st.state)?;
            }
            frame(traj.steps.len(), &traj.final_state)?;
            let mut states = traj.steps.iter().skip(1).map(|s| &s.state).chain(std::iter::once(&traj.final_state));
            for (i, st) in traj.steps.iter().enumerate() {
                let after = states.next().expect("one state per step");
                let o = &st.outcome;
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    i + 1,
                    st.action.as_str(),
                    o.r1,
                    o.r2,
                    o.r3,
                    o.total,
                    after.goal_iou()
                ));
            }
            fsutil::atomic_write(&render.join("trajectory.csv"), csv.as_bytes())?;
            println!(
                "{} steps, final IoU {:.4}, {}",
                traj.steps.len(),
                traj.final_iou,
                if traj.success() { "success" } else { "no success" }
            );
            Ok(true)
        }
        Command::Render { scene, start, out, max_side } => {
            let scene = Arc::new(scene::load(&scene)?);
            let center = start.unwrap_or(scene.goal.center());
            let state = EnvState { scene, movable_center: center, step_count: 0, done: false };
            render_png(&state, &out, max_side)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Distill { scene, out, preset, seed, epochs } => {
            let scene = Arc::new(scene::load(&scene)?);
            let env = EnvConfig::default();
            let grid = build_grid(Arc::clone(&scene), &env)?;
            let values = value_iteration(&grid, DEFAULT_TOLERANCE);
            let train = TrainConfig { seed, ..TrainConfig::default() };
            let mut trainer = Trainer::new(vec![scene], env, train, preset_spec(preset))?;
            let cfg = DistillConfig { max_epochs: epochs, seed, ..DistillConfig::default() };
            let used = distill(&mut trainer.qnet, &grid, &values, &cfg)?;
            let q = trainer.qnet.clone();
            crate::agent::sync_target(&q, &mut trainer.target)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fsutil::create_dir_all(dir)?;
            }
            trainer.save_checkpoint(&out)?;
            println!("distilled {} lattice states in {used} epochs; checkpoint {}", grid.len(), out.display());
            Ok(true)
        }
        Command::OracleCheck { ckpt, scene, threshold } => {
            let (meta, net) = load_checkpoint(&ckpt)?;
            let scene = Arc::new(scene::load(&scene)?);
            let grid = build_grid(scene, &meta.env)?;
            let values = value_iteration(&grid, DEFAULT_TOLERANCE);
            let a = policy_agreement(&net, &grid, &values)?;
            println!(
                "agreement {:.4} ({} of {} states; {} ties and {} goal states excluded)",
                a.fraction(),
                a.agree,
                a.counted,
                a.ties,
                a.terminal
            );
            Ok(a.fraction() >= threshold)
        }
        Command::Gradcheck { seed, count } => {
            let r = gradcheck::run(seed, count)?;
            println!(
                "max relative error {:.3e} over {} parameters in {} networks ({} kink probes skipped)",
                r.max_rel_error, r.params_checked, r.nets, r.kinks_skipped
            );
            Ok(r.passed())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_specs() {
        assert_eq!(spec_preset(&preset_spec(Preset::Paper)), Some(Preset::Paper));
        assert_eq!(spec_preset(&preset_spec(Preset::Desk)), Some(Preset::Desk));
    }

    #[test]
    fn config_errors_name_keys() {
        let mut c = RunConfig::default();
        c.raster.resolution = Some([64, 64]);
        let e = c.validate().unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "raster.resolution"));
        let e: Result<RunConfig, _> = serde_json::from_str(r#"{"env": {"thetaX": 1}}"#);
        assert!(e.unwrap_err().to_string().contains("thetaX"));
    }

    #[test]
    fn points_parse() {
        assert_eq!(parse_point("1.5, -2").unwrap(), Vec2::new(1.5, -2.0));
        assert!(parse_point("3").is_err());
    }

    #[test]
    fn scene_seeds_differ() {
        assert_ne!(scene_seed(1, 0), scene_seed(1, 1));
        assert_ne!(scene_seed(1, 0), scene_seed(2, 0));
        assert_eq!(scene_seed(5, 9), scene_seed(5, 9));
    }
}
