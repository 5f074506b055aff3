//! C interface to the training library.
//!
//! Every function returns a [`MaieStatus`]; on failure a description of the
//! most recent error on the calling thread is available from
//! [`maie_last_error`]. Handles are opaque and must be released with their
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use maie::agent::{AgentCheckpoint, TrainConfig, Trainer, UpdateMetrics};
use maie::cli::RunConfig;
use maie::envs::EnvKind;
use maie::Error;

/// Outcome of a call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaieStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    NonFinite = 4,
    Io = 5,
    Panic = 6,
    Internal = 7,
}

/// Scalars of one training update.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MaieUpdateMetrics {
    pub loss_actor: f64,
    pub loss_critic: f64,
    pub loss_sim: f64,
    pub loss_td: f64,
    pub loss_srl: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    /// Episodes that finished during the rollout.
    pub episodes_finished: u32,
    /// Sum of their returns.
    pub episode_return_sum: f64,
}

/// A training session: one agent on one environment.
pub struct MaieTrainer {
    inner: Trainer,
    last: Option<UpdateMetrics>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> MaieStatus {
    match e {
        Error::Config(_) | Error::Json(_) => MaieStatus::Config,
        Error::NonFinite { .. } => MaieStatus::NonFinite,
        Error::Io(_) | Error::Csv(_) => MaieStatus::Io,
        Error::InvalidAction { .. } | Error::ObservationShape { .. } | Error::EmptyBatch(_) => {
            MaieStatus::InvalidArgument
        }
        Error::Autodiff(_) => MaieStatus::Internal,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (MaieStatus, String)>) -> MaieStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MaieStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside the library");
            MaieStatus::Panic
        }
    }
}

fn lib(e: Error) -> (MaieStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MaieStatus, String) {
    (MaieStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MaieStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (MaieStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn trainer_mut<'a>(t: *mut MaieTrainer) -> Result<&'a mut MaieTrainer, (MaieStatus, String)> {
    t.as_mut().ok_or_else(|| null("trainer"))
}

unsafe fn trainer_ref<'a>(t: *const MaieTrainer) -> Result<&'a MaieTrainer, (MaieStatus, String)> {
    t.as_ref().ok_or_else(|| null("trainer"))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), (MaieStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn maie_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn maie_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn maie_status_name(status: MaieStatus) -> *const c_char {
    let s: &'static str = match status {
        MaieStatus::Ok => "ok\0",
        MaieStatus::NullPointer => "null_pointer\0",
        MaieStatus::InvalidArgument => "invalid_argument\0",
        MaieStatus::Config => "config\0",
        MaieStatus::NonFinite => "non_finite\0",
        MaieStatus::Io => "io\0",
        MaieStatus::Panic => "panic\0",
        MaieStatus::Internal => "internal\0",
    };
    s.as_ptr().cast()
}

/// Creates a trainer for environment `env` (e.g. "mining"). `config_json` is
/// a training configuration object; null selects the defaults.
///
/// # Safety
/// `env` and a non-null `config_json` must be NUL-terminated strings; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn maie_trainer_new(
    env: *const c_char,
    config_json: *const c_char,
    out: *mut *mut MaieTrainer,
) -> MaieStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind: EnvKind = str_arg(env, "env")?.parse().map_err(|e| (MaieStatus::InvalidArgument, e))?;
        let cfg: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| (MaieStatus::Config, format!("config_json: {e}")))?
        };
        let inner = Trainer::new(kind, cfg).map_err(lib)?;
        out.write(Box::into_raw(Box::new(MaieTrainer { inner, last: None })));
        Ok(())
    })
}

/// Releases a trainer. Null is ignored.
///
/// # Safety
/// `t` must come from [`maie_trainer_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn maie_trainer_free(t: *mut MaieTrainer) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Collects one rollout and updates the agent. `out` may be null.
///
/// # Safety
/// `t` must be a live trainer; a non-null `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn maie_trainer_train_step(t: *mut MaieTrainer, out: *mut MaieUpdateMetrics) -> MaieStatus {
    guard(|| {
        let t = trainer_mut(t)?;
        let r = t.inner.train_step().map_err(lib)?;
        let m = MaieUpdateMetrics {
            loss_actor: r.update.loss_actor,
            loss_critic: r.update.loss_critic,
            loss_sim: r.update.loss_sim,
            loss_td: r.update.loss_td,
            loss_srl: r.update.loss_srl,
            entropy: r.update.entropy,
            grad_norm: r.update.grad_norm,
            episodes_finished: r.episodes.len() as u32,
            episode_return_sum: r.episodes.iter().map(|e| e.ret).sum(),
        };
        t.last = Some(r.update);
        if !out.is_null() {
            out.write(m);
        }
        Ok(())
    })
}

/// Whether the configured episode or step budget is spent.
///
/// # Safety
/// `t` must be a live trainer and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn maie_trainer_done(t: *const MaieTrainer, out: *mut bool) -> MaieStatus {
    guard(|| write_out(out, trainer_ref(t)?.inner.done(), "out"))
}

/// Environment steps taken so far.
///
/// # Safety
/// `t` must be a live trainer and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn maie_trainer_env_steps(t: *const MaieTrainer, out: *mut u64) -> MaieStatus {
    guard(|| write_out(out, trainer_ref(t)?.inner.env_steps(), "out"))
}

/// Number of observation modalities of the trainer's environment.
///
/// # Safety
/// `t` must be a live trainer and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn maie_trainer_modality_count(t: *const MaieTrainer, out: *mut usize) -> MaieStatus {
    guard(|| write_out(out, trainer_ref(t)?.inner.agent().specs().len(), "out"))
}

/// Mean fusion weight per modality from the last update, written to
/// `out[0..len]`; `len` must equal the modality count.
///
/// # Safety
/// `t` must be a live trainer; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn maie_trainer_mean_lambda(t: *const MaieTrainer, out: *mut f64, len: usize) -> MaieStatus {
    guard(|| {
        let t = trainer_ref(t)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = t.inner.agent().specs().len();
        if len != m {
            return Err((MaieStatus::InvalidArgument, format!("len is {len}, environment has {m} modalities")));
        }
        let Some(last) = &t.last else {
            return Err((MaieStatus::InvalidArgument, "no update has run yet".into()));
        };
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&last.mean_lambda);
        Ok(())
    })
}

/// Runs `episodes` episodes without learning on an environment seeded with
/// `seed`. Either output pointer may be null.
///
/// # Safety
/// `t` must be a live trainer; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn maie_trainer_evaluate(
    t: *const MaieTrainer,
    episodes: usize,
    greedy: bool,
    seed: u64,
    success_rate: *mut f64,
    mean_return: *mut f64,
) -> MaieStatus {
    guard(|| {
        let t = trainer_ref(t)?;
        if episodes == 0 {
            return Err((MaieStatus::InvalidArgument, "episodes must be positive".into()));
        }
        let e = t.inner.evaluate(episodes, greedy, seed).map_err(lib)?;
        if !success_rate.is_null() {
            success_rate.write(e.success_rate());
        }
        if !mean_return.is_null() {
            mean_return.write(e.mean_return());
        }
        Ok(())
    })
}

/// Writes parameters and normalisation statistics as JSON to `path`.
///
/// # Safety
/// `t` must be a live trainer and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn maie_trainer_save(t: *const MaieTrainer, path: *const c_char) -> MaieStatus {
    guard(|| {
        let t = trainer_ref(t)?;
        let path = str_arg(path, "path")?;
        let json = serde_json::to_string(&t.inner.agent().checkpoint()).map_err(|e| lib(e.into()))?;
        maie::cli::write_atomic(path, json.as_bytes()).map_err(|e| lib(e.into()))
    })
}

/// Restores a checkpoint written by [`maie_trainer_save`] for the same
/// environment.
///
/// # Safety
/// `t` must be a live trainer and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn maie_trainer_load(t: *mut MaieTrainer, path: *const c_char) -> MaieStatus {
    guard(|| {
        let t = trainer_mut(t)?;
        let path = str_arg(path, "path")?;
        let text = std::fs::read_to_string(Path::new(path)).map_err(|e| lib(e.into()))?;
        let ckpt: AgentCheckpoint = serde_json::from_str(&text).map_err(|e| lib(e.into()))?;
        t.inner.agent_mut().restore(&ckpt).map_err(lib)
    })
}

/// Performs a complete run described by a run configuration object and
/// writes its artifacts into the configured output directory.
///
/// # Safety
/// `config_json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn maie_run(config_json: *const c_char) -> MaieStatus {
    guard(|| {
        let cfg: RunConfig = serde_json::from_str(str_arg(config_json, "config_json")?)
            .map_err(|e| (MaieStatus::Config, format!("config_json: {e}")))?;
        maie::cli::run(&cfg).map(|_| ()).map_err(|e| {
            let status = match &e {
                maie::cli::RunError::Config(_) => MaieStatus::Config,
                maie::cli::RunError::Numerical { .. } => MaieStatus::NonFinite,
                maie::cli::RunError::Failed(inner) => status_of(inner),
            };
            (status, e.to_string())
        })
    })
}
