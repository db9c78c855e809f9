//! Greedy random-start evaluation and the average-IoU report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{rollout, Action, Env, EnvConfig, Mode};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::nn::{argmax, Network};
use crate::raster::rasterize;
use crate::scene::{random_lattice_start, RoomType, Scene};

/// Published per-room results: (room, ours mean, ours std, baseline mean,
/// baseline std) for fixed starts, then (room, mean, std) for random starts.
pub const REFERENCE_FIXED: [(RoomType, f64, f64, f64, f64); 8] = [
    (RoomType::Bathroom, 0.961, 0.014, 0.623, 0.008),
    (RoomType::Bedroom, 0.952, 0.026, 0.647, 0.009),
    (RoomType::Study, 0.957, 0.018, 0.619, 0.006),
    (RoomType::Tatami, 0.948, 0.049, 0.637, 0.006),
    (RoomType::LivingRoom, 0.953, 0.037, 0.603, 0.006),
    (RoomType::DiningRoom, 0.949, 0.029, 0.611, 0.006),
    (RoomType::Kitchen, 0.953, 0.041, 0.636, 0.006),
    (RoomType::Balcony, 0.951, 0.035, 0.651, 0.006),
];

pub const REFERENCE_RANDOM: [(RoomType, f64, f64); 8] = [
    (RoomType::Bathroom, 0.953, 0.012),
    (RoomType::Bedroom, 0.959, 0.017),
    (RoomType::Study, 0.946, 0.014),
    (RoomType::Tatami, 0.949, 0.009),
    (RoomType::LivingRoom, 0.956, 0.018),
    (RoomType::DiningRoom, 0.962, 0.005),
    (RoomType::Kitchen, 0.957, 0.015),
    (RoomType::Balcony, 0.961, 0.007),
];

pub const REFERENCE_LABEL: &str = "reference, not reproduced";

/// Total random starts per room type when no count is given.
pub const DEFAULT_STARTS_PER_ROOM: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub scene_id: String,
    pub room_type: RoomType,
    pub start_index: usize,
    pub start: Vec2,
    pub final_iou: f64,
    pub steps: u32,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomSummary {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn summary(&self) -> BTreeMap<RoomType, RoomSummary> {
        let mut by_room: BTreeMap<RoomType, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            by_room.entry(r.room_type).or_default().push(r.final_iou);
        }
        by_room
            .into_iter()
            .map(|(k, v)| {
                let (mean, std) = mean_std(&v);
                (k, RoomSummary { n: v.len(), mean, std })
            })
            .collect()
    }

    pub fn mean_iou(&self) -> f64 {
        mean_std(&self.rows.iter().map(|r| r.final_iou).collect::<Vec<_>>()).0
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scene_id,room_type,start_index,start_x,start_y,final_iou,steps,success\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.scene_id,
                r.room_type.as_str(),
                r.start_index,
                r.start.x,
                r.start.y,
                r.final_iou,
                r.steps,
                r.success
            );
        }
        s
    }

    /// Mean ± std per room type followed by the published rows.
    pub fn format_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14} {:>6}  {:<17}", "room type", "n", "IoU_average");
        for (room, sum) in self.summary() {
            let _ = writeln!(s, "{:<14} {:>6}  {:.3} ± {:.3}", room.as_str(), sum.n, sum.mean, sum.std);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "published values ({REFERENCE_LABEL}):");
        let _ = writeln!(s, "{:<14} {:<15} {:<15} {:<15}", "room type", "fixed starts", "baseline", "random starts");
        for ((room, m, sd, bm, bsd), (_, rm, rsd)) in REFERENCE_FIXED.iter().zip(REFERENCE_RANDOM.iter()) {
            let _ = writeln!(s, "{:<14} {:.3} ± {:.3}   {:.3} ± {:.3}   {:.3} ± {:.3}", room.as_str(), m, sd, bm, bsd, rm, rsd);
        }
        s
    }
}

/// A scene under evaluation with its identifier (usually the file stem).
#[derive(Debug, Clone)]
pub struct NamedScene {
    pub id: String,
    pub scene: Arc<Scene>,
}

/// Greedy policy of `net` on the rasterized state.
pub fn greedy_policy(net: &Network<f32>) -> impl FnMut(&crate::env::EnvState) -> Action + '_ {
    let [_, h, w] = net.spec().input;
    move |state| {
        let x = rasterize(state, h, w).data;
        let q = net.forward_slice(&x, 1).expect("observation matches the network input");
        Action::ALL[argmax(&q)]
    }
}

/// Runs `starts` greedy test-mode rollouts on every scene. Start positions
/// are drawn from one stream seeded by `seed`, scenes in the given order.
pub fn evaluate(net: &Network<f32>, scenes: &[NamedScene], starts: usize, seed: u64, env_cfg: &EnvConfig) -> Result<EvalReport> {
    if starts == 0 {
        return Err(Error::config("starts", "must be positive"));
    }
    let cfg = EnvConfig { mode: Mode::Test, ..env_cfg.clone() };
    let env = Env::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(scenes.len() * starts);
    for ns in scenes {
        for k in 0..starts {
            let start = random_lattice_start(&ns.scene, env.config().step_size, rng.gen())?;
            let traj = rollout(&env, Arc::clone(&ns.scene), start, greedy_policy(net))?;
            rows.push(EvalRow {
                scene_id: ns.id.clone(),
                room_type: ns.scene.room_type,
                start_index: k,
                start,
                final_iou: traj.final_iou,
                steps: traj.final_state.step_count,
                success: env.is_success(&ns.scene, traj.final_state.movable_center),
            });
        }
    }
    Ok(EvalReport { rows })
}
