//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to see
//! the report; criterion 7 is `#[ignore]`d because of its runtime.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roomdqn::agent::{CheckpointPaths, EpsilonSchedule, TrainConfig, Trainer};
use roomdqn::cli::{scene_seed, RunConfig};
use roomdqn::env::{reward, EnvConfig};
use roomdqn::eval::{evaluate, EvalReport, NamedScene, REFERENCE_FIXED, REFERENCE_LABEL, REFERENCE_RANDOM};
use roomdqn::geometry::{intersection_area, iou, Rect, Vec2};
use roomdqn::nn::{desk_spec, gradcheck, paper_spec, Network};
use roomdqn::oracle::{build_grid, policy_agreement, value_iteration, DEFAULT_TOLERANCE};
use roomdqn::scene::{generate, random_start, RoomType, Scene};

const IOU_PIXEL_TOL: f64 = 0.01;
const IOU_RUNTIME: Duration = Duration::from_secs(10);
const GRAD_TOL: f64 = 1e-4;
const GRAD_RUNTIME: Duration = Duration::from_secs(120);
const AGREEMENT_MIN: f64 = 0.90;
const DESK_IOU_MIN: f64 = 0.90;
const DESK_RUNTIME: Duration = Duration::from_secs(30 * 60);
const MULTI_IOU_MIN: f64 = 0.85;
const MULTI_RUNTIME: Duration = Duration::from_secs(2 * 60 * 60);

/// Bedroom used for the single-scene run and its held-out evaluation seed.
const DESK_SCENE_SEED: u64 = 7;
const DESK_EVAL_SEED: u64 = 0x5eed_e7a1;

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {n} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

/// Area fractions by sampling pixel centers of a 512x512 grid over the union
/// bounding box.
fn pixel_iou(a: &Rect, b: &Rect) -> f64 {
    const N: usize = 512;
    let (x0, x1) = (a.min_x().min(b.min_x()), a.max_x().max(b.max_x()));
    let (y0, y1) = (a.min_y().min(b.min_y()), a.max_y().max(b.max_y()));
    let inside = |r: &Rect, x: f64, y: f64| x >= r.min_x() && x < r.max_x() && y >= r.min_y() && y < r.max_y();
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..N {
        let y = y0 + (i as f64 + 0.5) * (y1 - y0) / N as f64;
        for j in 0..N {
            let x = x0 + (j as f64 + 0.5) * (x1 - x0) / N as f64;
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[test]
fn c1_iou_matches_pixel_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let a = Rect::new(Vec2::new(rng.gen_range(0.0..200.0), rng.gen_range(0.0..200.0)), rng.gen_range(1.0..120.0), rng.gen_range(1.0..120.0)).unwrap();
        // every other pair is placed near the first so most pairs overlap
        let c = if k % 2 == 0 {
            a.center() + Vec2::new(rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0))
        } else {
            Vec2::new(rng.gen_range(0.0..200.0), rng.gen_range(0.0..200.0))
        };
        let b = Rect::new(c, rng.gen_range(1.0..120.0), rng.gen_range(1.0..120.0)).unwrap();
        worst = worst.max((iou(&a, &b) - pixel_iou(&a, &b)).abs());
    }
    let dt = t0.elapsed();
    let pass = worst <= IOU_PIXEL_TOL && dt < IOU_RUNTIME;
    report(1, "geometry vs pixel sampling", pass, &format!("max |diff| {worst:.5} (tol {IOU_PIXEL_TOL}), {:.2}s", dt.as_secs_f64()));
    assert!(pass);
}

#[test]
fn c2_gradient_check() {
    let t0 = Instant::now();
    let r = gradcheck::run(20, 20).unwrap();
    let dt = t0.elapsed();
    let pass = r.nets == 20 && r.max_rel_error <= GRAD_TOL && r.params_checked > 0 && dt < GRAD_RUNTIME;
    report(
        2,
        "gradient verification",
        pass,
        &format!("{} nets, {} params, max rel err {:.3e} (tol {GRAD_TOL:e}), {:.1}s", r.nets, r.params_checked, r.max_rel_error, dt.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn c3_architecture_contract() {
    let spec = paper_spec();
    let flatten = spec.flatten_width().unwrap();
    let net = Network::<f32>::new(spec.clone(), 0).unwrap();
    let batch = 3;
    let x: Vec<f32> = (0..batch * spec.input_len()).map(|i| (i % 2) as f32).collect();
    let y = net.forward(&roomdqn::nn::Tensor::new(vec![batch, 6, 132, 132], x).unwrap()).unwrap();
    let pass = flatten == 7200 && spec.fc == [7200, 512, 512] && spec.output == 4 && spec.input == [6, 132, 132] && y.shape == [batch, 4];
    report(3, "architecture contract", pass, &format!("flatten {flatten}, fc {:?}, output {}, forward {:?}", spec.fc, spec.output, y.shape));
    assert!(pass);
}

#[test]
fn c4_reward_range() {
    let cfg = EnvConfig::default();
    let scenes: Vec<Scene> = RoomType::ALL.iter().flat_map(|&r| (0..25).map(move |s| generate(r, s).unwrap())).collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..10_000u64 {
        let s = &scenes[(i as usize * 7919) % scenes.len()];
        let c = random_start(s, i).unwrap();
        let t = reward(s, &s.movable_at(c), &cfg).total;
        lo = lo.min(t);
        hi = hi.max(t);
    }
    let mut goal_ok = 0;
    for s in &scenes {
        let clear = s.obstacles().all(|o| intersection_area(&o.rect, &s.goal) == 0.0);
        let t = reward(s, &s.goal, &cfg).total;
        if clear && t == cfg.theta1 {
            goal_ok += 1;
        }
    }
    let pass = lo >= -200.0 && hi <= 100.0 && goal_ok == scenes.len();
    report(4, "reward range", pass, &format!("10000 states in [{lo:.2}, {hi:.2}]; {goal_ok}/{} goal states score {}", scenes.len(), cfg.theta1));
    assert!(pass);
}

fn bedroom() -> Arc<Scene> {
    Arc::new(generate(RoomType::Bedroom, DESK_SCENE_SEED).unwrap())
}

#[test]
fn c5_replay_exclusion() {
    let cfg = TrainConfig {
        total_steps: 1500,
        batch_size: 16,
        warmup_steps: 200,
        target_sync_period: 250,
        epsilon: EpsilonSchedule { start: 1.0, end: 0.1, decay_steps: 1000 },
        seed: 5,
        ..TrainConfig::default()
    };
    let env = EnvConfig::default();
    let mut t = Trainer::new(vec![bedroom(), Arc::new(generate(RoomType::Kitchen, 2).unwrap())], env.clone(), cfg, desk_spec()).unwrap();
    t.run(None).unwrap();
    let bad = t.memory.audit_out_of_room(env.step_size);
    let stored = t.memory.len();
    let pass = bad == 0 && stored > 0;
    report(5, "replay exclusion", pass, &format!("{bad} out-of-room transitions among {stored} stored after {} steps", t.step_count()));
    assert!(pass);
}

#[test]
fn c6_oracle_agreement_desk_scale() {
    let run = RunConfig::desk_single_room();
    let scene = bedroom();
    let t0 = Instant::now();
    let mut t = Trainer::new(vec![Arc::clone(&scene)], run.env.clone(), run.train.clone(), desk_spec()).unwrap();
    t.run(None).unwrap();
    let train_time = t0.elapsed();

    let m = build_grid(Arc::clone(&scene), &run.env).unwrap();
    let v = value_iteration(&m, DEFAULT_TOLERANCE);
    let ag = policy_agreement(&t.qnet, &m, &v).unwrap();
    let named = [NamedScene { id: "bedroom".into(), scene }];
    let rep = evaluate(&t.qnet, &named, 100, DESK_EVAL_SEED, &run.env).unwrap();
    let mean = rep.mean_iou();
    let bad = t.memory.audit_out_of_room(run.env.step_size);
    let pass = ag.fraction() >= AGREEMENT_MIN && mean >= DESK_IOU_MIN && train_time <= DESK_RUNTIME && bad == 0;
    report(
        6,
        "oracle agreement (desk scale)",
        pass,
        &format!(
            "{} steps, agreement {:.3} over {} non-tie states ({} ties), mean final IoU {mean:.3} over 100 held-out starts, {:.0}s",
            t.step_count(),
            ag.fraction(),
            ag.counted,
            ag.ties,
            train_time.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "multi-hour CPU run; reported, non-gating"]
fn c7_multi_scene_soft_target() {
    let gen = |base: u64, n: u64| -> Vec<Arc<Scene>> { (0..n).map(|i| Arc::new(generate(RoomType::Bedroom, scene_seed(base, i)).unwrap())).collect() };
    let train_scenes = gen(1000, 50);
    let held_out: Vec<NamedScene> = gen(2000, 20).into_iter().enumerate().map(|(i, scene)| NamedScene { id: format!("held_{i:02}"), scene }).collect();
    let env = EnvConfig::default();
    let cfg = TrainConfig { total_steps: 50_000, epsilon: EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 25_000 }, ..TrainConfig::default() };
    let t0 = Instant::now();
    let mut t = Trainer::new(train_scenes, env.clone(), cfg, desk_spec()).unwrap();
    t.run(None).unwrap();
    let rep = evaluate(&t.qnet, &held_out, 20, DESK_EVAL_SEED, &env).unwrap();
    let dt = t0.elapsed();
    let mean = rep.mean_iou();
    let pass = mean >= MULTI_IOU_MIN && dt <= MULTI_RUNTIME;
    report(7, "multi-scene soft target", pass, &format!("mean final IoU {mean:.3} over {} held-out episodes, {:.0}s", rep.rows.len(), dt.as_secs_f64()));
}

#[test]
fn c8_reference_rows_are_labeled() {
    let table = EvalReport { rows: Vec::new() }.format_table();
    let mut missing = 0;
    for ((room, m, sd, bm, bsd), (_, rm, rsd)) in REFERENCE_FIXED.iter().zip(REFERENCE_RANDOM.iter()) {
        let line = format!("{:<14} {m:.3} ± {sd:.3}   {bm:.3} ± {bsd:.3}   {rm:.3} ± {rsd:.3}", room.as_str());
        if !table.contains(&line) {
            missing += 1;
        }
    }
    let pass = table.contains(REFERENCE_LABEL) && missing == 0;
    report(8, "unreproducible values printed as reference rows", pass, &format!("{} rows labeled \"{REFERENCE_LABEL}\", {missing} missing", REFERENCE_FIXED.len()));
    print!("{table}");
    assert!(pass);
}

fn train_cli(dir: &Path, scene: &Path) -> Vec<u8> {
    let cfg = dir.join("run.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{ "train": {{ "total_steps": 1000, "warmup_steps": 200, "target_sync_period": 250, "seed": 9,
                 "epsilon": {{ "start": 1.0, "end": 0.1, "decay_steps": 800 }} }},
               "paths": {{ "scenes": "{}" }} }}"#,
            scene.display()
        ),
    )
    .unwrap();
    let ckpt = dir.join("model.ckpt");
    let o = Command::new(env!("CARGO_BIN_EXE_roomdqn")).args(["train", "--config"]).arg(&cfg).arg("--out").arg(&ckpt).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::read(CheckpointPaths::new(&ckpt).metrics).unwrap()
}

#[test]
fn c9_training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("bedroom.json");
    roomdqn::scene::save(&bedroom(), &scene).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    let (ma, mb) = (train_cli(&a, &scene), train_cli(&b, &scene));
    let episodes = ma.iter().filter(|&&c| c == b'\n').count().saturating_sub(1);
    let pass = ma == mb && episodes > 0;
    report(9, "determinism", pass, &format!("metrics CSVs of two 1000-step runs identical: {} ({episodes} episodes, {} bytes)", ma == mb, ma.len()));
    assert!(pass);
}
