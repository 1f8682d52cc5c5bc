//! C interface to `afc-core`.
//!
//! Every function returns an [`AfcStatus`]; results come back through out-pointers.
//! On failure the message is available from [`afc_last_error`] on the same thread.
//! Scenario and run handles are opaque and must be released with their `_free` function.
//! Pointer arguments must be null or valid for the access the function documents.

#![allow(clippy::not_unsafe_ptr_arg_deref)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use afc_core::scenario::{run_scenario, scenario_hash, simulate, RunOutcome, Scenario};
use afc_core::theory::{analytic_efficiency, echo_time, infer_depths, optimal_depth, TheoryInputs};
use afc_core::AfcError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Domain = 4,
    FitNotConverged = 5,
    NoComb = 6,
    InconsistentDepths = 7,
    TraceTooShort = 8,
    Io = 9,
    OutOfRange = 10,
    Panic = 11,
}

impl From<&AfcError> for AfcStatus {
    fn from(e: &AfcError) -> Self {
        match e.root() {
            AfcError::Config(_) => AfcStatus::Config,
            AfcError::Domain(_) => AfcStatus::Domain,
            AfcError::FitNotConverged { .. } => AfcStatus::FitNotConverged,
            AfcError::NoComb { .. } => AfcStatus::NoComb,
            AfcError::InconsistentDepths { .. } => AfcStatus::InconsistentDepths,
            AfcError::TraceTooShort { .. } => AfcStatus::TraceTooShort,
            AfcError::Io { .. } => AfcStatus::Io,
            AfcError::Stage { .. } => unreachable!("root() strips stage wrappers"),
        }
    }
}

/// A parsed scenario file.
pub struct AfcScenario {
    scenario: Scenario,
    hash: CString,
}

/// The outcome of simulating a scenario.
pub struct AfcRun {
    outcome: RunOutcome,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AfcCombParams {
    pub delta_hz: f64,
    pub gamma_hz: f64,
    pub d: f64,
    pub d0: f64,
    pub finesse: f64,
    pub bandwidth_hz: f64,
    pub m_teeth: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AfcEcho {
    pub efficiency: f64,
    pub echo_time_s: f64,
    pub transmitted_fraction: f64,
    pub window_centre_s: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: AfcStatus, msg: impl Into<String>) -> AfcStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), AfcStatus>) -> AfcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AfcStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(AfcStatus::Panic, format!("internal error: {msg}"))
        }
    }
}

fn check<T>(r: afc_core::Result<T>) -> Result<T, AfcStatus> {
    r.map_err(|e| fail(AfcStatus::from(&e), e.to_string()))
}

fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, AfcStatus> {
    // SAFETY: callers pass either null or a valid, writable pointer.
    unsafe { p.as_mut() }.ok_or_else(|| fail(AfcStatus::NullPointer, format!("{name} is null")))
}

fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, AfcStatus> {
    if p.is_null() {
        return Err(fail(AfcStatus::NullPointer, format!("{name} is null")));
    }
    // SAFETY: non-null and, per the API contract, NUL-terminated.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(AfcStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, AfcStatus> {
    // SAFETY: callers pass either null or a handle obtained from this library.
    unsafe { p.as_ref() }.ok_or_else(|| fail(AfcStatus::NullPointer, format!("{name} is null")))
}

/// Message for the last failing call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn afc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn afc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn afc_analytic_efficiency(d: f64, d0: f64, finesse: f64, out_eta: *mut f64) -> AfcStatus {
    guard(|| {
        let out_eta = out(out_eta, "out_eta")?;
        let inputs = check(TheoryInputs::new(d, d0, finesse, 1.0))?;
        *out_eta = analytic_efficiency(&inputs).eta;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn afc_echo_time(delta_hz: f64, out_s: *mut f64) -> AfcStatus {
    guard(|| {
        let out_s = out(out_s, "out_s")?;
        *out_s = check(echo_time(delta_hz))?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn afc_optimal_depth(finesse: f64, out_d: *mut f64) -> AfcStatus {
    guard(|| {
        let out_d = out(out_d, "out_d")?;
        *out_d = check(optimal_depth(finesse))?;
        Ok(())
    })
}

/// Recovers `d` and `d0` from an echo-to-transmitted ratio and the comb transmission.
#[no_mangle]
pub extern "C" fn afc_infer_depths(
    ratio: f64,
    transmission: f64,
    finesse: f64,
    out_d: *mut f64,
    out_d0: *mut f64,
) -> AfcStatus {
    guard(|| {
        let out_d = out(out_d, "out_d")?;
        let out_d0 = out(out_d0, "out_d0")?;
        let r = check(infer_depths(ratio, transmission, finesse))?;
        *out_d = r.d;
        *out_d0 = r.d0;
        Ok(())
    })
}

/// Reads and validates a scenario file.
#[no_mangle]
pub extern "C" fn afc_scenario_load(path: *const c_char, out_scenario: *mut *mut AfcScenario) -> AfcStatus {
    guard(|| {
        let out_scenario = out(out_scenario, "out_scenario")?;
        let path = string(path, "path")?;
        let (scenario, hash) = check(Scenario::load(Path::new(path)))?;
        *out_scenario = Box::into_raw(Box::new(AfcScenario {
            scenario,
            hash: CString::new(hash).unwrap_or_default(),
        }));
        Ok(())
    })
}

/// Parses scenario text; `origin` labels diagnostics and may be null.
#[no_mangle]
pub extern "C" fn afc_scenario_parse(
    text: *const c_char,
    origin: *const c_char,
    out_scenario: *mut *mut AfcScenario,
) -> AfcStatus {
    guard(|| {
        let out_scenario = out(out_scenario, "out_scenario")?;
        let text = string(text, "text")?;
        let origin = if origin.is_null() {
            "<memory>"
        } else {
            string(origin, "origin")?
        };
        let scenario = check(Scenario::parse(text, origin))?;
        *out_scenario = Box::into_raw(Box::new(AfcScenario {
            scenario,
            hash: CString::new(scenario_hash(text)).unwrap_or_default(),
        }));
        Ok(())
    })
}

/// SHA-256 of the scenario text, valid while the handle lives.
#[no_mangle]
pub extern "C" fn afc_scenario_hash(scenario: *const AfcScenario) -> *const c_char {
    // SAFETY: null or a live handle from afc_scenario_load / afc_scenario_parse.
    match unsafe { scenario.as_ref() } {
        Some(s) => s.hash.as_ptr(),
        None => std::ptr::null(),
    }
}

#[no_mangle]
pub extern "C" fn afc_scenario_set_seed(scenario: *mut AfcScenario, seed: u64) -> AfcStatus {
    guard(|| {
        out(scenario, "scenario")?.scenario.scenario.seed = seed;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn afc_scenario_free(scenario: *mut AfcScenario) {
    if !scenario.is_null() {
        // SAFETY: the pointer came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(scenario) });
    }
}

/// Runs the pipeline in memory.
#[no_mangle]
pub extern "C" fn afc_simulate(scenario: *const AfcScenario, out_run: *mut *mut AfcRun) -> AfcStatus {
    guard(|| {
        let out_run = out(out_run, "out_run")?;
        let s = handle(scenario, "scenario")?;
        let hash = s.hash.to_str().unwrap_or_default();
        let outcome = check(simulate(&s.scenario, hash))?;
        *out_run = Box::into_raw(Box::new(AfcRun { outcome }));
        Ok(())
    })
}

/// Runs the pipeline and writes its tables to the scenario's output directory.
#[no_mangle]
pub extern "C" fn afc_run_and_write(scenario: *const AfcScenario, threads: usize) -> AfcStatus {
    guard(|| {
        let s = handle(scenario, "scenario")?;
        let hash = s.hash.to_str().unwrap_or_default();
        check(run_scenario(&s.scenario, hash, threads.max(1)))?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn afc_run_free(run: *mut AfcRun) {
    if !run.is_null() {
        // SAFETY: the pointer came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(run) });
    }
}

#[no_mangle]
pub extern "C" fn afc_run_echo_count(run: *const AfcRun, out_count: *mut usize) -> AfcStatus {
    guard(|| {
        let out_count = out(out_count, "out_count")?;
        *out_count = handle(run, "run")?.outcome.echoes.len();
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn afc_run_echo(run: *const AfcRun, index: usize, out_echo: *mut AfcEcho) -> AfcStatus {
    guard(|| {
        let out_echo = out(out_echo, "out_echo")?;
        let echoes = &handle(run, "run")?.outcome.echoes;
        let e = echoes.get(index).ok_or_else(|| {
            fail(
                AfcStatus::OutOfRange,
                format!("echo index {index} out of range ({} echoes)", echoes.len()),
            )
        })?;
        *out_echo = AfcEcho {
            efficiency: e.efficiency,
            echo_time_s: e.echo_time,
            transmitted_fraction: e.transmitted_fraction,
            window_centre_s: e.window_centre,
        };
        Ok(())
    })
}

/// Fitted comb parameters; `OutOfRange` when the scenario requested no comb fit.
#[no_mangle]
pub extern "C" fn afc_run_comb_fit(run: *const AfcRun, out_params: *mut AfcCombParams) -> AfcStatus {
    guard(|| {
        let out_params = out(out_params, "out_params")?;
        let fit = handle(run, "run")?
            .outcome
            .comb_fit
            .as_ref()
            .ok_or_else(|| fail(AfcStatus::OutOfRange, "scenario has no comb fit"))?;
        let p = fit.params;
        *out_params = AfcCombParams {
            delta_hz: p.delta,
            gamma_hz: p.gamma,
            d: p.d,
            d0: p.d0,
            finesse: p.finesse,
            bandwidth_hz: p.bandwidth,
            m_teeth: p.m_teeth,
        };
        Ok(())
    })
}

/// Number of spectrum samples; pass to [`afc_run_spectrum`] to size the buffers.
#[no_mangle]
pub extern "C" fn afc_run_spectrum_len(run: *const AfcRun, out_len: *mut usize) -> AfcStatus {
    guard(|| {
        let out_len = out(out_len, "out_len")?;
        *out_len = handle(run, "run")?.outcome.spectrum.grid.count;
        Ok(())
    })
}

/// Copies frequencies (Hz) and the real and imaginary depth into caller buffers of `len` elements.
#[no_mangle]
pub extern "C" fn afc_run_spectrum(
    run: *const AfcRun,
    freq_hz: *mut f64,
    re_depth: *mut f64,
    im_depth: *mut f64,
    len: usize,
) -> AfcStatus {
    guard(|| {
        let spectrum = &handle(run, "run")?.outcome.spectrum;
        let n = spectrum.grid.count;
        if len < n {
            return Err(fail(
                AfcStatus::OutOfRange,
                format!("buffers hold {len} samples, need {n}"),
            ));
        }
        if freq_hz.is_null() || re_depth.is_null() || im_depth.is_null() {
            return Err(fail(AfcStatus::NullPointer, "spectrum buffer is null"));
        }
        // SAFETY: non-null buffers of at least `len >= n` elements, per the API contract.
        let (f, re, im) = unsafe {
            (
                std::slice::from_raw_parts_mut(freq_hz, n),
                std::slice::from_raw_parts_mut(re_depth, n),
                std::slice::from_raw_parts_mut(im_depth, n),
            )
        };
        for (i, d) in spectrum.depth.iter().enumerate() {
            f[i] = spectrum.grid.freq(i);
            re[i] = d.re;
            im[i] = d.im;
        }
        Ok(())
    })
}
