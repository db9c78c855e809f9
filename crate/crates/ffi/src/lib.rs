//! C ABI over the simulator and trained policies.
//!
//! Objects cross the boundary as opaque pointers created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`RdqnStatus`]; on failure a description is available from
//! [`rdqn_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use roomdqn::agent::load_checkpoint;
use roomdqn::env::{Action, Env, EnvConfig, EnvState, Mode};
use roomdqn::geometry::{self, Rect, Vec2};
use roomdqn::nn::{argmax, Network};
use roomdqn::raster::{rasterize, CHANNELS};
use roomdqn::scene::{self, RoomType, Scene};
use roomdqn::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdqnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    EpisodeFinished = 6,
    WeightFormat = 7,
    Panic = 8,
    Other = 9,
}

/// Axis-aligned rectangle by center and size.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdqnRect {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RdqnStep {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub total: f64,
    pub rejected: bool,
    pub done: bool,
    pub success: bool,
    pub center_x: f64,
    pub center_y: f64,
    /// IoU of the movable with the goal after the step.
    pub iou: f64,
}

/// A validated scene.
pub struct RdqnScene(Arc<Scene>);

/// An environment with its current episode state.
pub struct RdqnEnv {
    env: Env,
    state: EnvState,
}

/// A Q-network loaded from a checkpoint.
pub struct RdqnPolicy(Network<f32>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RdqnStatus {
    match e {
        Error::Io { .. } => RdqnStatus::Io,
        Error::Parse { .. } => RdqnStatus::Parse,
        Error::Validation(_) => RdqnStatus::Validation,
        Error::EpisodeFinished { .. } => RdqnStatus::EpisodeFinished,
        Error::WeightFormat(_) => RdqnStatus::WeightFormat,
        Error::InvalidRect(_) | Error::InvalidStart(_) | Error::Config { .. } | Error::Shape(_) | Error::Infeasible(_) => {
            RdqnStatus::InvalidArgument
        }
        _ => RdqnStatus::Other,
    }
}

struct Fail(RdqnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RdqnStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(RdqnStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RdqnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RdqnStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RdqnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn mut_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn to_rect(r: &RdqnRect) -> Result<Rect, Fail> {
    Ok(Rect::new(Vec2::new(r.cx, r.cy), r.w, r.h)?)
}

fn from_rect(r: &Rect) -> RdqnRect {
    let c = r.center();
    RdqnRect { cx: c.x, cy: c.y, w: r.width(), h: r.height() }
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rdqn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rdqn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the intersection over union of `a` and `b` to `out`.
///
/// # Safety
/// All pointers must be valid for the access they are used for.
#[no_mangle]
pub unsafe extern "C" fn rdqn_iou(a: *const RdqnRect, b: *const RdqnRect, out: *mut f64) -> RdqnStatus {
    guard(|| {
        let a = to_rect(ref_arg(a, "a")?)?;
        let b = to_rect(ref_arg(b, "b")?)?;
        *mut_arg(out, "out")? = geometry::iou(&a, &b);
        Ok(())
    })
}

/// Generates a scene of `room_type` (e.g. "bedroom") from `seed`.
///
/// # Safety
/// `room_type` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdqn_scene_generate(room_type: *const c_char, seed: u64, out: *mut *mut RdqnScene) -> RdqnStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        let room: RoomType = str_arg(room_type, "room_type")?.parse().map_err(invalid)?;
        let s = scene::generate(room, seed)?;
        *out = Box::into_raw(Box::new(RdqnScene(Arc::new(s))));
        Ok(())
    })
}

/// Loads and validates a scene JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdqn_scene_load(path: *const c_char, out: *mut *mut RdqnScene) -> RdqnStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        let s = scene::load(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(RdqnScene(Arc::new(s))));
        Ok(())
    })
}

/// Writes the scene as JSON.
///
/// # Safety
/// `scene` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rdqn_scene_save(scene: *const RdqnScene, path: *const c_char) -> RdqnStatus {
    guard(|| {
        let s = ref_arg(scene, "scene")?;
        scene::save(&s.0, &PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Copies the indoor area and goal rectangles.
///
/// # Safety
/// `scene` must come from this library; `indoor` and `goal` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rdqn_scene_rects(
    scene: *const RdqnScene,
    indoor: *mut RdqnRect,
    goal: *mut RdqnRect,
) -> RdqnStatus {
    guard(|| {
        let s = &ref_arg(scene, "scene")?.0;
        if let Some(p) = indoor.as_mut() {
            *p = from_rect(&s.indoor_area);
        }
        if let Some(p) = goal.as_mut() {
            *p = from_rect(&s.goal);
        }
        Ok(())
    })
}

/// Releases a scene. NULL is ignored.
///
/// # Safety
/// `scene` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rdqn_scene_free(scene: *mut RdqnScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Starts an episode with default parameters. `test_mode` selects test
/// boundary semantics.
///
/// # Safety
/// `scene` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdqn_env_new(
    scene: *const RdqnScene,
    test_mode: bool,
    start_x: f64,
    start_y: f64,
    out: *mut *mut RdqnEnv,
) -> RdqnStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        let s = Arc::clone(&ref_arg(scene, "scene")?.0);
        let mode = if test_mode { Mode::Test } else { Mode::Train };
        let env = Env::new(EnvConfig { mode, ..EnvConfig::default() })?;
        let state = env.reset(s, Vec2::new(start_x, start_y))?;
        *out = Box::into_raw(Box::new(RdqnEnv { env, state }));
        Ok(())
    })
}

/// Applies `action` (0 left, 1 right, 2 up, 3 down).
///
/// # Safety
/// `env` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdqn_env_step(env: *mut RdqnEnv, action: u32, out: *mut RdqnStep) -> RdqnStatus {
    guard(|| {
        let e = mut_arg(env, "env")?;
        let out = mut_arg(out, "out")?;
        let a = Action::from_index(action as usize).ok_or_else(|| invalid(format!("action {action} is not in 0..4")))?;
        let (next, o) = e.env.step(&e.state, a)?;
        *out = RdqnStep {
            r1: o.r1,
            r2: o.r2,
            r3: o.r3,
            total: o.total,
            rejected: o.rejected,
            done: o.done,
            success: o.success,
            center_x: next.movable_center.x,
            center_y: next.movable_center.y,
            iou: next.goal_iou(),
        };
        e.state = next;
        Ok(())
    })
}

/// Writes the 6-channel observation (channel-major, values 0 or 1) into
/// `buf`, which must hold `6 * height * width` floats.
///
/// # Safety
/// `env` must come from this library; `buf` must be valid for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn rdqn_env_observe(env: *const RdqnEnv, height: usize, width: usize, buf: *mut f32, len: usize) -> RdqnStatus {
    guard(|| {
        let e = ref_arg(env, "env")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let need = CHANNELS * height * width;
        if height == 0 || width == 0 || len != need {
            return Err(invalid(format!("buffer holds {len} floats, observation needs {need}")));
        }
        let img = rasterize(&e.state, height, width);
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(&img.data);
        Ok(())
    })
}

/// # Safety
/// `env` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rdqn_env_free(env: *mut RdqnEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Loads the Q-network of a checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdqn_policy_load(path: *const c_char, out: *mut *mut RdqnPolicy) -> RdqnStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        let (_, net) = load_checkpoint(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(RdqnPolicy(net)));
        Ok(())
    })
}

/// Greedy action of `policy` in the current state of `env`.
///
/// # Safety
/// `policy` and `env` must come from this library; `action` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdqn_policy_act(policy: *const RdqnPolicy, env: *const RdqnEnv, action: *mut u32) -> RdqnStatus {
    guard(|| {
        let net = &ref_arg(policy, "policy")?.0;
        let e = ref_arg(env, "env")?;
        let out = mut_arg(action, "action")?;
        let [_, h, w] = net.spec().input;
        let q = net.forward_slice(&rasterize(&e.state, h, w).data, 1)?;
        *out = argmax(&q) as u32;
        Ok(())
    })
}

/// # Safety
/// `policy` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rdqn_policy_free(policy: *mut RdqnPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}
