//! C ABI over `starnet`.
//!
//! Objects cross the boundary as opaque handles created by `*_new` or
//! `starnet_simulate` and released with the matching `*_free`. Every fallible
//! call returns a [`StarnetStatus`]; on failure a message is available from
//! [`starnet_last_error`] on the same thread until the next failing call.
//! Strings handed out by the library are freed with [`starnet_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use starnet::model::{NetworkParams, QueueState};
use starnet::oracles::{kingman_bound, reflected_sup_bound};
use starnet::sim::{simulate, SimConfig, Trajectory, DEFAULT_MAX_EVENTS};
use starnet::theory::{regime, stability};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StarnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Model = 3,
    Simulation = 4,
    Theory = 5,
    Oracle = 6,
    Panic = 7,
}

/// Network parameters.
pub struct StarnetParams(NetworkParams);

/// A simulated path sampled at the requested times.
pub struct StarnetTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl ToString) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: StarnetStatus, msg: impl ToString) -> StarnetStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> StarnetStatus) -> StarnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(StarnetStatus::Panic, "internal panic"),
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(unsafe { std::slice::from_raw_parts(p, len) })
    }
}

/// Message for the last failing call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn starnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static version string including the RNG algorithm identifier.
#[no_mangle]
pub extern "C" fn starnet_version() -> *const c_char {
    static VERSION: std::sync::OnceLock<CString> = std::sync::OnceLock::new();
    VERSION
        .get_or_init(|| CString::new(starnet::cli::version_string()).expect("no interior NUL"))
        .as_ptr()
}

/// Frees a string returned by this library. NULL is a no-op.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn starnet_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Validates and stores `J + 1` arrival and service rates.
///
/// # Safety
/// `lambda` and `mu` must point to `j + 1` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn starnet_params_new(
    j: usize,
    lambda: *const f64,
    mu: *const f64,
    out: *mut *mut StarnetParams,
) -> StarnetStatus {
    guard(|| {
        if out.is_null() {
            return fail(StarnetStatus::NullPointer, "out is NULL");
        }
        let len = j.saturating_add(1);
        let (Some(l), Some(m)) = (unsafe { slice(lambda, len) }, unsafe { slice(mu, len) }) else {
            return fail(StarnetStatus::NullPointer, "rate array is NULL");
        };
        match NetworkParams::new(j, l.to_vec(), m.to_vec()) {
            Ok(p) => {
                unsafe { *out = Box::into_raw(Box::new(StarnetParams(p))) };
                StarnetStatus::Ok
            }
            Err(e) => fail(StarnetStatus::Model, e),
        }
    })
}

/// # Safety
/// `params` must be NULL or a live handle from [`starnet_params_new`].
#[no_mangle]
pub unsafe extern "C" fn starnet_params_free(params: *mut StarnetParams) {
    if !params.is_null() {
        drop(unsafe { Box::from_raw(params) });
    }
}

/// Regime report as a JSON string; free it with [`starnet_string_free`].
///
/// # Safety
/// `params` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn starnet_regime_json(
    params: *const StarnetParams,
    out: *mut *mut c_char,
) -> StarnetStatus {
    guard(|| {
        let (Some(p), false) = (unsafe { params.as_ref() }, out.is_null()) else {
            return fail(StarnetStatus::NullPointer, "NULL argument");
        };
        let report = match regime(&p.0) {
            Ok(r) => r,
            Err(e) => return fail(StarnetStatus::Theory, e),
        };
        let text = serde_json::to_string(&report).expect("report serializes");
        unsafe { *out = CString::new(text).expect("JSON has no NUL").into_raw() };
        StarnetStatus::Ok
    })
}

/// Writes 1 when `rho_0 + max rho_j < 1`, else 0.
///
/// # Safety
/// `params` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn starnet_stability(
    params: *const StarnetParams,
    out: *mut i32,
) -> StarnetStatus {
    guard(|| {
        let (Some(p), false) = (unsafe { params.as_ref() }, out.is_null()) else {
            return fail(StarnetStatus::NullPointer, "NULL argument");
        };
        unsafe { *out = i32::from(stability(&p.0)) };
        StarnetStatus::Ok
    })
}

/// Simulates from `init` (`nodes` counts) up to `horizon`, sampling at the
/// increasing `sample_times`. `max_events == 0` selects the default budget.
///
/// # Safety
/// Pointers must be valid for the given lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn starnet_simulate(
    params: *const StarnetParams,
    init: *const u64,
    nodes: usize,
    seed: u64,
    stream: u64,
    horizon: f64,
    sample_times: *const f64,
    n_samples: usize,
    max_events: u64,
    out: *mut *mut StarnetTrajectory,
) -> StarnetStatus {
    guard(|| {
        let Some(p) = (unsafe { params.as_ref() }) else {
            return fail(StarnetStatus::NullPointer, "params is NULL");
        };
        if out.is_null() {
            return fail(StarnetStatus::NullPointer, "out is NULL");
        }
        let (Some(init), Some(times)) = (unsafe { slice(init, nodes) }, unsafe {
            slice(sample_times, n_samples)
        }) else {
            return fail(StarnetStatus::NullPointer, "array argument is NULL");
        };
        let budget = if max_events == 0 {
            DEFAULT_MAX_EVENTS
        } else {
            max_events
        };
        let cfg = SimConfig::new(seed, horizon, times.to_vec())
            .with_stream(stream)
            .with_max_events(budget);
        match simulate(&p.0, &QueueState::new(init.to_vec()), &cfg) {
            Ok(t) => {
                unsafe { *out = Box::into_raw(Box::new(StarnetTrajectory(t))) };
                StarnetStatus::Ok
            }
            Err(e) => fail(StarnetStatus::Simulation, e),
        }
    })
}

/// # Safety
/// `traj` must be NULL or a live handle from [`starnet_simulate`].
#[no_mangle]
pub unsafe extern "C" fn starnet_trajectory_free(traj: *mut StarnetTrajectory) {
    if !traj.is_null() {
        drop(unsafe { Box::from_raw(traj) });
    }
}

/// Number of recorded samples; 0 for NULL.
///
/// # Safety
/// `traj` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn starnet_trajectory_len(traj: *const StarnetTrajectory) -> usize {
    unsafe { traj.as_ref() }.map_or(0, |t| t.0.samples.len())
}

/// Events simulated; 0 for NULL.
///
/// # Safety
/// `traj` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn starnet_trajectory_events(traj: *const StarnetTrajectory) -> u64 {
    unsafe { traj.as_ref() }.map_or(0, |t| t.0.events_used)
}

/// 1 when the event budget ran out before the horizon.
///
/// # Safety
/// `traj` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn starnet_trajectory_truncated(traj: *const StarnetTrajectory) -> i32 {
    unsafe { traj.as_ref() }.map_or(0, |t| i32::from(t.0.truncated))
}

/// Copies sample `index` into `time` and `counts` (`nodes` entries, which
/// must equal `J + 1`).
///
/// # Safety
/// `traj` must be a live handle, `time` writable and `counts` valid for
/// `nodes` writes.
#[no_mangle]
pub unsafe extern "C" fn starnet_trajectory_sample(
    traj: *const StarnetTrajectory,
    index: usize,
    time: *mut f64,
    counts: *mut u64,
    nodes: usize,
) -> StarnetStatus {
    guard(|| {
        let Some(t) = (unsafe { traj.as_ref() }) else {
            return fail(StarnetStatus::NullPointer, "trajectory is NULL");
        };
        if time.is_null() || counts.is_null() {
            return fail(StarnetStatus::NullPointer, "output is NULL");
        }
        let Some(sample) = t.0.samples.get(index) else {
            return fail(
                StarnetStatus::InvalidArgument,
                format!("sample {index} out of range ({})", t.0.samples.len()),
            );
        };
        let src = sample.state.counts();
        if src.len() != nodes {
            return fail(
                StarnetStatus::InvalidArgument,
                format!("expected {} nodes, got {nodes}", src.len()),
            );
        }
        unsafe {
            *time = sample.time;
            ptr::copy_nonoverlapping(src.as_ptr(), counts, nodes);
        }
        StarnetStatus::Ok
    })
}

/// `(lambda/mu)^x`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn starnet_kingman_bound(
    lambda: f64,
    mu: f64,
    x: u32,
    out: *mut f64,
) -> StarnetStatus {
    guard(|| {
        if out.is_null() {
            return fail(StarnetStatus::NullPointer, "out is NULL");
        }
        match kingman_bound(lambda, mu, x) {
            Ok(v) => {
                unsafe { *out = v };
                StarnetStatus::Ok
            }
            Err(e) => fail(StarnetStatus::Oracle, e),
        }
    })
}

/// `min(1, (lambda T + 1)(lambda/mu)^x)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn starnet_reflected_sup_bound(
    lambda: f64,
    mu: f64,
    horizon: f64,
    x: u32,
    out: *mut f64,
) -> StarnetStatus {
    guard(|| {
        if out.is_null() {
            return fail(StarnetStatus::NullPointer, "out is NULL");
        }
        match reflected_sup_bound(lambda, mu, horizon, x) {
            Ok(v) => {
                unsafe { *out = v };
                StarnetStatus::Ok
            }
            Err(e) => fail(StarnetStatus::Oracle, e),
        }
    })
}

/// Borrow-checked view for Rust callers of the error slot.
pub fn last_error_message() -> Option<String> {
    let p = starnet_last_error();
    if p.is_null() {
        None
    } else {
        Some(unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
    }
}
