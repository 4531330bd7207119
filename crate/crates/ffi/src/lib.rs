//! C ABI over the tuning environment, the objective and the response parser.
//!
//! Every fallible function returns a [`BtStatus`]; on anything but `BT_STATUS_OK`
//! a message is available from [`bt_last_error`] on the same thread.
//! Environments are opaque and must be released with [`bt_env_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use beamtune::optics::Geometry;
use beamtune::prompts::{self, FailureReason};
use beamtune::task::{
    self, fixture, make_trial, ActuatorBox, BeamParameters, Environment, MagnetSettings, NoiseConfig, Sample,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Task = 3,
    Parse = 4,
    Panic = 5,
}

/// Why a response did not yield settings. `None` when it did.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BtParseReason {
    None = 0,
    NoJson = 1,
    InvalidJson = 2,
    AmbiguousMultiple = 3,
    MissingKeys = 4,
    NonNumeric = 5,
    ExtraKeysDisallowed = 6,
}

impl From<FailureReason> for BtParseReason {
    fn from(r: FailureReason) -> Self {
        match r {
            FailureReason::NoJson => Self::NoJson,
            FailureReason::InvalidJson => Self::InvalidJson,
            FailureReason::AmbiguousMultiple => Self::AmbiguousMultiple,
            FailureReason::MissingKeys => Self::MissingKeys,
            FailureReason::NonNumeric => Self::NonNumeric,
            FailureReason::ExtraKeysDisallowed => Self::ExtraKeysDisallowed,
        }
    }
}

/// Magnet settings in SI units: quadrupoles in 1/m², steerers in rad.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BtSettings {
    pub q1: f64,
    pub q2: f64,
    pub cv: f64,
    pub q3: f64,
    pub ch: f64,
}

impl From<MagnetSettings> for BtSettings {
    fn from(s: MagnetSettings) -> Self {
        Self {
            q1: s.q1,
            q2: s.q2,
            cv: s.cv,
            q3: s.q3,
            ch: s.ch,
        }
    }
}

impl From<BtSettings> for MagnetSettings {
    fn from(s: BtSettings) -> Self {
        MagnetSettings::new(s.q1, s.q2, s.cv, s.q3, s.ch)
    }
}

/// Beam parameters on the screen, mm.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BtBeam {
    pub mu_x: f64,
    pub sigma_x: f64,
    pub mu_y: f64,
    pub sigma_y: f64,
}

impl From<BeamParameters> for BtBeam {
    fn from(b: BeamParameters) -> Self {
        Self {
            mu_x: b.mu_x,
            sigma_x: b.sigma_x,
            mu_y: b.mu_y,
            sigma_y: b.sigma_y,
        }
    }
}

impl From<BtBeam> for BeamParameters {
    fn from(b: BtBeam) -> Self {
        BeamParameters::new(b.mu_x, b.sigma_x, b.mu_y, b.sigma_y)
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BtSample {
    /// Settings actually applied, after clamping.
    pub settings: BtSettings,
    pub beam: BtBeam,
    /// mm
    pub objective: f64,
    /// mm
    pub mae: f64,
    /// Bit i set when magnet i (Q1, Q2, CV, Q3, CH) was clamped.
    pub clamped: u8,
}

impl From<&Sample> for BtSample {
    fn from(s: &Sample) -> Self {
        let clamped = s
            .clamped
            .0
            .iter()
            .enumerate()
            .fold(0u8, |acc, (i, c)| acc | (u8::from(*c) << i));
        Self {
            settings: s.settings.into(),
            beam: s.parameters.into(),
            objective: s.objective,
            mae: s.mae,
            clamped,
        }
    }
}

/// Opaque environment handle.
pub struct BtEnv {
    inner: Environment,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn guard(f: impl FnOnce() -> Result<(), (BtStatus, String)>) -> BtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BtStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            BtStatus::Panic
        }
    }
}

fn task_err(e: task::TaskError) -> (BtStatus, String) {
    (BtStatus::Task, e.to_string())
}

fn null(what: &str) -> (BtStatus, String) {
    (BtStatus::NullPointer, format!("{what} is null"))
}

/// Message for the last non-OK status on this thread. Valid until the next call.
#[no_mangle]
pub extern "C" fn bt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

fn noise(sigma: f64) -> Result<NoiseConfig, (BtStatus, String)> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err((
            BtStatus::InvalidArgument,
            format!("noise sigma {sigma} must be finite and non-negative"),
        ));
    }
    Ok(NoiseConfig {
        enabled: sigma > 0.0,
        sigma,
    })
}

unsafe fn store_env(out: *mut *mut BtEnv, inner: Environment) {
    *out = Box::into_raw(Box::new(BtEnv { inner }));
}

/// Environment on canonical trial `index` (0, 1 or 2). `noise_sigma` is in
/// metres; 0 disables readout noise.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bt_env_new_canonical(
    index: u32,
    noise_sigma: f64,
    seed: u64,
    out: *mut *mut BtEnv,
) -> BtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let trial = fixture::canonical()
            .into_iter()
            .nth(index as usize)
            .ok_or((BtStatus::InvalidArgument, format!("no canonical trial {index}")))?;
        let env = Environment::new(trial, &Geometry::default(), noise(noise_sigma)?, seed).map_err(task_err)?;
        store_env(out, env);
        Ok(())
    })
}

/// Environment on the trial generated from `trial_seed` with default settings.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bt_env_new_from_seed(
    trial_seed: u64,
    noise_sigma: f64,
    seed: u64,
    out: *mut *mut BtEnv,
) -> BtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let trial = make_trial(trial_seed, &Default::default(), &ActuatorBox::default()).map_err(task_err)?;
        let env = Environment::new(trial, &Geometry::default(), noise(noise_sigma)?, seed).map_err(task_err)?;
        store_env(out, env);
        Ok(())
    })
}

/// Releases an environment. Null is ignored.
///
/// # Safety
/// `env` must come from a `bt_env_new_*` call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bt_env_free(env: *mut BtEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Restores the initial settings and measures them.
///
/// # Safety
/// `env` must be a live handle; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn bt_env_reset(env: *mut BtEnv, out: *mut BtSample) -> BtStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        let s = env.inner.reset().map_err(task_err)?;
        if !out.is_null() {
            *out = (&s).into();
        }
        Ok(())
    })
}

/// Applies `settings`, clamped to the actuator limits, and measures.
///
/// # Safety
/// `env` and `settings` must be valid; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn bt_env_step(env: *mut BtEnv, settings: *const BtSettings, out: *mut BtSample) -> BtStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        let settings = settings.as_ref().ok_or_else(|| null("settings"))?;
        let s = env.inner.step(&(*settings).into()).map_err(task_err)?;
        if !out.is_null() {
            *out = (&s).into();
        }
        Ok(())
    })
}

/// Target beam of the environment's trial.
///
/// # Safety
/// `env` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bt_env_target(env: *const BtEnv, out: *mut BtBeam) -> BtStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = env.inner.trial().target.into();
        Ok(())
    })
}

/// Samples recorded since the last reset, the reset sample included.
///
/// # Safety
/// `env` must be a live handle or null (which gives 0).
#[no_mangle]
pub unsafe extern "C" fn bt_env_history_len(env: *const BtEnv) -> usize {
    env.as_ref().map_or(0, |e| e.inner.history().len())
}

/// Sum of absolute differences between `observed` and `target`, mm.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bt_objective(observed: *const BtBeam, target: *const BtBeam, out: *mut f64) -> BtStatus {
    guard(|| {
        let observed = observed.as_ref().ok_or_else(|| null("observed"))?;
        let target = target.as_ref().ok_or_else(|| null("target"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = task::objective(&(*observed).into(), &(*target).into());
        Ok(())
    })
}

/// Extracts settings from a model response (UTF-8, NUL-terminated).
///
/// On success `out` holds the SI settings, unclamped, and `reason` is
/// `None`. A response that yields no settings returns `BT_STATUS_PARSE` and sets
/// `reason`. `reason` may be null.
///
/// # Safety
/// `text` must be a valid C string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn bt_parse_response(
    text: *const c_char,
    out: *mut BtSettings,
    reason: *mut BtParseReason,
) -> BtStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let text = CStr::from_ptr(text)
            .to_str()
            .map_err(|e| (BtStatus::InvalidArgument, format!("text is not UTF-8: {e}")))?;
        let (status, code) = match prompts::parse(text, &ActuatorBox::default()) {
            Ok(p) => {
                *out = p.values.into();
                (Ok(()), BtParseReason::None)
            }
            Err(f) => (Err((BtStatus::Parse, f.to_string())), f.reason.into()),
        };
        if let Some(r) = reason.as_mut() {
            *r = code;
        }
        status
    })
}

/// Static name of a status code; "unknown" for values outside the enum.
#[no_mangle]
pub extern "C" fn bt_status_name(status: i32) -> *const c_char {
    let s: &'static CStr = match status {
        0 => c"ok",
        1 => c"null_pointer",
        2 => c"invalid_argument",
        3 => c"task",
        4 => c"parse",
        5 => c"panic",
        _ => c"unknown",
    };
    s.as_ptr()
}
