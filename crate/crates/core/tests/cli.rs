use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use roomdqn::agent::load_checkpoint;
use roomdqn::scene;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_roomdqn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One generated bedroom plus a network distilled from its oracle, shared by
/// the tests below.
struct Fixture {
    _dir: tempfile::TempDir,
    scene: PathBuf,
    distilled: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let scenes = dir.path().join("scenes");
        let o = run(&["gen", "--room-type", "bedroom", "--count", "1", "--seed", "3", "--out", s(&scenes)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let scene = scenes.join("bedroom_0000.json");
        let distilled = dir.path().join("distilled.ckpt");
        let o = run(&["distill", "--scene", s(&scene), "--out", s(&distilled)]);
        assert!(o.status.success(), "{}", stderr(&o));
        Fixture { _dir: dir, scene, distilled }
    })
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, body).unwrap();
    p
}

fn smoke_config(scenes: &Path, steps: u64, extra_env: &str) -> String {
    format!(
        r#"{{
  "env": {{ {extra_env} }},
  "train": {{
    "total_steps": {steps},
    "batch_size": 8,
    "warmup_steps": 100,
    "target_sync_period": 100,
    "replay_capacity": 2000,
    "epsilon": {{ "start": 1.0, "end": 0.1, "decay_steps": 500 }},
    "seed": 7
  }},
  "raster": {{ "preset": "desk" }},
  "paths": {{ "scenes": "{}" }}
}}"#,
        scenes.display()
    )
}

#[test]
fn gen_writes_valid_deterministic_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["gen", "--room-type", "bedroom", "--count", "10", "--seed", "1", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 10);
    for n in names {
        let (x, y) = (std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap());
        assert_eq!(x, y);
        scene::load(&a.join(&n)).unwrap();
    }
}

#[test]
fn gen_rejects_unknown_room_type() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gen", "--room-type", "garage", "--count", "1", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for room in ["bathroom", "bedroom", "study", "tatami", "living_room", "dining_room", "kitchen", "balcony"] {
        assert!(err.contains(room), "{err}");
    }
}

#[test]
fn train_checkpoints_and_resumes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &smoke_config(&f.scene, 300, ""));
    let ckpt = dir.path().join("out/model.ckpt");
    let o = run(&["train", "--config", s(&cfg), "--out", s(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (meta, _) = load_checkpoint(&ckpt).unwrap();
    assert_eq!(meta.step, 300);
    let metrics = |p: &Path| std::fs::read_to_string(p.with_extension("ckpt.metrics.csv")).unwrap();
    let first = metrics(&ckpt);
    assert!(first.starts_with("episode,steps,return,final_iou,epsilon\n"));
    let last_episode: u64 = first.lines().last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert_eq!(last_episode, meta.episode);

    let o = run(&["train", "--config", s(&cfg), "--out", s(&ckpt), "--resume", "--steps", "600"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("resumed at step 300"));
    let (meta2, _) = load_checkpoint(&ckpt).unwrap();
    assert_eq!(meta2.step, 600);
    let second = metrics(&ckpt);
    assert!(second.starts_with(&first), "metrics were rewritten instead of extended");
    let next_row = second[first.len()..].lines().next().expect("new episodes after resume");
    assert_eq!(next_row.split(',').next().unwrap(), (last_episode + 1).to_string());
}

#[test]
fn train_rejects_test_mode_and_bad_keys() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let cfg = write_config(dir.path(), &smoke_config(&f.scene, 100, r#""mode": "test""#));
    let o = run(&["train", "--config", s(&cfg), "--out", s(&ckpt)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("training requires train mode"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), &smoke_config(&f.scene, 100, r#""theta2": 5.0"#));
    let o = run(&["train", "--config", s(&cfg), "--out", s(&ckpt)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("env.theta2"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), &smoke_config(&f.scene, 100, r#""step": 5.0"#));
    let o = run(&["train", "--config", s(&cfg), "--out", s(&ckpt)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("step"), "{}", stderr(&o));
}

#[test]
fn eval_of_distilled_agent_is_perfect_and_consistent() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("eval.csv");
    let o = run(&["eval", "--ckpt", s(&f.distilled), "--scenes", s(&f.scene), "--starts", "25", "--seed", "4", "--out", s(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("bedroom") && out.contains("1.000 ± 0.000"), "{out}");
    assert!(out.contains("reference, not reproduced"));
    assert!(out.contains("0.952 ± 0.026") && out.contains("0.647 ± 0.009"));

    let mut rdr = std::fs::read_to_string(&csv).unwrap();
    let header = rdr.lines().next().unwrap().to_string();
    let col = header.split(',').position(|h| h == "final_iou").unwrap();
    rdr = rdr.split_once('\n').unwrap().1.to_string();
    let ious: Vec<f64> = rdr.lines().map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert_eq!(ious.len(), 25);
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    assert!(out.contains(&format!("{mean:.3}")));
    assert_eq!(mean, 1.0);

    let again = run(&["eval", "--ckpt", s(&f.distilled), "--scenes", s(&f.scene), "--starts", "25", "--seed", "4"]);
    assert_eq!(stdout(&again), out);
}

#[test]
fn eval_usage_errors() {
    let f = fixture();
    let o = run(&["eval", "--ckpt", s(&f.distilled), "--scenes", s(&f.scene), "--starts", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["eval", "--ckpt", s(&f.distilled), "--scenes", s(&f.scene), "--starts", "1", "--preset", "paper"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("preset"), "{}", stderr(&o));
}

#[test]
fn rollout_writes_frames_and_trajectory() {
    let f = fixture();
    let sc = scene::load(&f.scene).unwrap();
    let g = sc.goal.center();
    let dir = tempfile::tempdir().unwrap();

    let at_goal = dir.path().join("goal");
    let o = run(&["rollout", "--ckpt", s(&f.distilled), "--scene", s(&f.scene), "--start", &format!("{},{}", g.x, g.y), "--render", s(&at_goal)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let frames = |d: &Path| std::fs::read_dir(d).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "png").count();
    assert_eq!(frames(&at_goal), 1);
    assert_eq!(std::fs::read_to_string(at_goal.join("trajectory.csv")).unwrap().lines().count(), 1);

    let away = dir.path().join("away");
    let start = format!("{},{}", g.x - 40.0, g.y);
    let o = run(&["rollout", "--ckpt", s(&f.distilled), "--scene", s(&f.scene), "--start", &start, "--render", s(&away)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let traj = std::fs::read_to_string(away.join("trajectory.csv")).unwrap();
    let rows: Vec<&str> = traj.lines().skip(1).collect();
    assert!(!rows.is_empty());
    assert_eq!(frames(&away), rows.len() + 1);
    for r in &rows {
        let total: f64 = r.split(',').nth(5).unwrap().parse().unwrap();
        assert!((-200.0..=100.0).contains(&total));
    }
    assert_eq!(rows.last().unwrap().split(',').nth(6).unwrap(), "1");

    let o = run(&["rollout", "--ckpt", s(&f.distilled), "--scene", s(&f.scene), "--start", "-5000,0", "--render", s(&away)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("indoor area"), "{}", stderr(&o));
}

#[test]
fn render_writes_png() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scene.png");
    let o = run(&["render", "--scene", s(&f.scene), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = std::fs::read(&out).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");
}

#[test]
fn oracle_check_exit_codes() {
    let f = fixture();
    let o = run(&["oracle-check", "--ckpt", s(&f.distilled), "--scene", s(&f.scene)]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("agreement 1.0000"));

    // untrained weights
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("random.ckpt");
    let cfg = write_config(dir.path(), &smoke_config(&f.scene, 1, ""));
    let o = run(&["train", "--config", s(&cfg), "--out", s(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["oracle-check", "--ckpt", s(&ckpt), "--scene", s(&f.scene)]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

#[test]
fn gradcheck_passes() {
    let o = run(&["gradcheck", "--seed", "3", "--count", "5"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("max relative error"));
}
