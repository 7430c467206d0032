//! C ABI for `thermocover`.
//!
//! Objects are opaque handles. Each constructor writes a new handle through
//! an out-pointer and the caller releases it with the matching `*_free`.
//! Fallible calls return a `TcStatus`; after a failure `tc_last_error`
//! describes it for the calling thread. Strings returned through
//! out-pointers are owned by the caller and released with `tc_string_free`.
//! Panics never cross the boundary; they surface as `TC_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::OnceLock;

use thermocover::controller::Controller;
use thermocover::detect::detect_contacts;
use thermocover::model::discretize_fopdt;
use thermocover::observer::{build_observer, HeatObserver};
use thermocover::report::RunReport;
use thermocover::scenario::{builtin_scenario, builtin_scenarios, ScenarioSpec};
use thermocover::sim::{simulate, SimTrace};
use thermocover::sysid::{fit_fopdt, StepTrace};
use thermocover::{AmbientConfig, ControlTarget, Error, ExitCode, Mode, PlantParams};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Bad configuration, scenario text or CSV.
    Config = 3,
    /// Numeric failure, solver non-convergence or ill-conditioned fit.
    Numeric = 4,
    Io = 5,
    OutOfRange = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TcMode {
    Heat = 0,
    Cool = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TcTarget {
    Cover = 0,
    Pipe = 1,
}

impl From<TcMode> for Mode {
    fn from(m: TcMode) -> Self {
        match m {
            TcMode::Heat => Mode::Heat,
            TcMode::Cool => Mode::Cool,
        }
    }
}

impl From<Mode> for TcMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Heat => TcMode::Heat,
            Mode::Cool => TcMode::Cool,
        }
    }
}

impl From<ControlTarget> for TcTarget {
    fn from(t: ControlTarget) -> Self {
        match t {
            ControlTarget::CoverTemp => TcTarget::Cover,
            ControlTarget::PipeTemp => TcTarget::Pipe,
        }
    }
}

/// Lumped plant parameters.
pub struct TcParams(PlantParams);

/// Contact heat-flow observer.
pub struct TcObserver {
    inner: HeatObserver,
    t_amb: f64,
}

/// Closed-loop controller: MPC, pump hysteresis and mode switch.
pub struct TcController(Controller);

/// Scenario description.
pub struct TcScenario(ScenarioSpec);

/// Simulated or loaded trace.
pub struct TcTrace(SimTrace);

/// One sample of a trace.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TcTraceRow {
    pub t: f64,
    pub t_p_cmd: f64,
    pub t_p: f64,
    pub t_co: f64,
    pub t_w: f64,
    pub t_c: f64,
    pub pump_on: bool,
    pub q_w: f64,
    pub q_i_true: f64,
    pub q_i_hat: f64,
    pub contact_flag: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TcControlOutput {
    pub command: f64,
    pub pump_on: bool,
    pub mode: TcMode,
    pub cost: f64,
    pub iterations: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TcDetectionSummary {
    pub detections: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub misses: usize,
    pub peak_q_hat: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TcFopdt {
    pub a: f64,
    pub b: f64,
    pub d: usize,
}

enum Fail {
    Status(TcStatus, String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

type FfiResult<T> = Result<T, Fail>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn core_status(e: &Error) -> TcStatus {
    match (e, e.exit_code()) {
        (Error::InvalidArgument(_), _) => TcStatus::InvalidArgument,
        (_, ExitCode::Numeric) => TcStatus::Numeric,
        (_, ExitCode::Io) => TcStatus::Io,
        _ => TcStatus::Config,
    }
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> TcStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return TcStatus::Ok,
        Ok(Err(Fail::Status(s, m))) => (s, m),
        Ok(Err(Fail::Core(e))) => (core_status(&e), e.to_string()),
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            (TcStatus::Panic, format!("panic: {m}"))
        }
    };
    set_last_error(msg);
    status
}

fn null(what: &str) -> Fail {
    Fail::Status(TcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(TcStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_handle<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    put(out, Box::into_raw(Box::new(value)), "out")
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    let c = CString::new(s).map_err(|_| Fail::Status(TcStatus::InvalidArgument, "string contains NUL".into()))?;
    put(out, c.into_raw(), "out")
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn tc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// Parameters

#[no_mangle]
pub unsafe extern "C" fn tc_params_preset(mode: TcMode, out: *mut *mut TcParams) -> TcStatus {
    guard(|| put_handle(out, TcParams(PlantParams::preset(mode.into()))))
}

/// Reads a parameter by key (`r_w`, `c_c`, `tau`, ...).
#[no_mangle]
pub unsafe extern "C" fn tc_params_get(params: *const TcParams, key: *const c_char, value: *mut f64) -> TcStatus {
    guard(|| {
        let p = get(params, "params")?;
        let key = text(key, "key")?;
        let doc = p.0.to_kv();
        let raw = doc
            .get(key)
            .ok_or_else(|| Fail::Status(TcStatus::InvalidArgument, format!("unknown parameter `{key}`")))?;
        let v = raw
            .parse::<f64>()
            .map_err(|_| Fail::Status(TcStatus::InvalidArgument, format!("parameter `{key}` is not numeric")))?;
        put(value, v, "value")
    })
}

/// Sets a parameter by key. The set is validated as a whole and left
/// unchanged on failure.
#[no_mangle]
pub unsafe extern "C" fn tc_params_set(params: *mut TcParams, key: *const c_char, value: f64) -> TcStatus {
    guard(|| {
        let p = get_mut(params, "params")?;
        let key = text(key, "key")?;
        let mut doc = p.0.to_kv();
        if doc.get(key).is_none() {
            return Err(Fail::Status(TcStatus::InvalidArgument, format!("unknown parameter `{key}`")));
        }
        doc.set_f64(key, value);
        let next = PlantParams::from_kv(&doc)?;
        next.validate()?;
        p.0 = next;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_params_free(params: *mut TcParams) {
    free(params)
}

/// Discrete first-order-plus-dead-time model at sample time `t_s`.
#[no_mangle]
pub unsafe extern "C" fn tc_fopdt_discretize(params: *const TcParams, t_s: f64, out: *mut TcFopdt) -> TcStatus {
    guard(|| {
        let m = discretize_fopdt(&get(params, "params")?.0, t_s)?;
        put(out, TcFopdt { a: m.a, b: m.b, d: m.d }, "out")
    })
}

// Observer

#[no_mangle]
pub unsafe extern "C" fn tc_observer_new(
    params: *const TcParams,
    t_s: f64,
    t_amb: f64,
    out: *mut *mut TcObserver,
) -> TcStatus {
    guard(|| {
        let inner = build_observer(&get(params, "params")?.0, t_s)?;
        put_handle(out, TcObserver { inner, t_amb })
    })
}

/// Puts the filter into steady state for a contact-free pipe at `t_w`
/// receiving `net_input` watts.
#[no_mangle]
pub unsafe extern "C" fn tc_observer_prime(obs: *mut TcObserver, t_w: f64, net_input: f64) -> TcStatus {
    guard(|| Ok(get_mut(obs, "observer")?.inner.prime_with_input(t_w, net_input)?))
}

/// Advances one sample and writes the contact heat-flow estimate (W).
#[no_mangle]
pub unsafe extern "C" fn tc_observer_step(
    obs: *mut TcObserver,
    t_w: f64,
    t_co: f64,
    pump_on: bool,
    q_hat: *mut f64,
) -> TcStatus {
    guard(|| {
        let o = get_mut(obs, "observer")?;
        if !(t_w.is_finite() && t_co.is_finite()) {
            return Err(Fail::Status(TcStatus::InvalidArgument, "temperatures must be finite".into()));
        }
        let ambient = AmbientConfig {
            t_amb: o.t_amb,
            ..AmbientConfig::default()
        };
        let q = o.inner.step(t_w, t_co, pump_on, &ambient);
        put(q_hat, q, "q_hat")
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_observer_reset(obs: *mut TcObserver) -> TcStatus {
    guard(|| {
        get_mut(obs, "observer")?.inner.reset();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_observer_free(obs: *mut TcObserver) {
    free(obs)
}

// Scenarios

#[no_mangle]
pub extern "C" fn tc_scenario_builtin_count() -> usize {
    builtin_names().len()
}

/// Name of built-in scenario `index`, a static string, or NULL when out
/// of range.
#[no_mangle]
pub extern "C" fn tc_scenario_builtin_name(index: usize) -> *const c_char {
    builtin_names().get(index).map_or(ptr::null(), |c| c.as_ptr())
}

fn builtin_names() -> &'static [CString] {
    static NAMES: OnceLock<Vec<CString>> = OnceLock::new();
    NAMES.get_or_init(|| {
        builtin_scenarios()
            .into_iter()
            .map(|s| CString::new(s.name).unwrap_or_default())
            .collect()
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_scenario_builtin(name: *const c_char, out: *mut *mut TcScenario) -> TcStatus {
    guard(|| put_handle(out, TcScenario(builtin_scenario(text(name, "name")?)?)))
}

/// Parses a scenario in `key = value` form.
#[no_mangle]
pub unsafe extern "C" fn tc_scenario_parse(src: *const c_char, out: *mut *mut TcScenario) -> TcStatus {
    guard(|| put_handle(out, TcScenario(ScenarioSpec::parse(text(src, "text")?)?)))
}

/// Applies a `key=value` override; the scenario is unchanged on failure.
#[no_mangle]
pub unsafe extern "C" fn tc_scenario_set(scenario: *mut TcScenario, assignment: *const c_char) -> TcStatus {
    guard(|| {
        let s = get_mut(scenario, "scenario")?;
        let mut doc = s.0.to_kv();
        doc.apply_override(text(assignment, "assignment")?)?;
        s.0 = ScenarioSpec::from_kv(&doc)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_scenario_to_string(scenario: *const TcScenario, out: *mut *mut c_char) -> TcStatus {
    guard(|| put_string(out, get(scenario, "scenario")?.0.to_kv().to_string()))
}

#[no_mangle]
pub unsafe extern "C" fn tc_scenario_target(scenario: *const TcScenario, out: *mut TcTarget) -> TcStatus {
    guard(|| put(out, get(scenario, "scenario")?.0.target.into(), "out"))
}

#[no_mangle]
pub unsafe extern "C" fn tc_scenario_free(scenario: *mut TcScenario) {
    free(scenario)
}

// Controller

/// Controller configured from a scenario's controller, loop, target,
/// mode and ambient settings.
#[no_mangle]
pub unsafe extern "C" fn tc_controller_new(scenario: *const TcScenario, out: *mut *mut TcController) -> TcStatus {
    guard(|| {
        let s = &get(scenario, "scenario")?.0;
        let ctrl = Controller::new(s.controller, s.loop_cfg, s.target, s.plant.mode, &s.ambient)?;
        put_handle(out, TcController(ctrl))
    })
}

/// Seeds the controller as if `command` had long held the output at `output`.
#[no_mangle]
pub unsafe extern "C" fn tc_controller_assume_steady(ctrl: *mut TcController, command: f64, output: f64) -> TcStatus {
    guard(|| {
        get_mut(ctrl, "controller")?.0.assume_steady(command, output);
        Ok(())
    })
}

/// Number of preview samples, after the current setpoint, that a step reads.
#[no_mangle]
pub unsafe extern "C" fn tc_controller_horizon(ctrl: *const TcController, out: *mut usize) -> TcStatus {
    guard(|| put(out, get(ctrl, "controller")?.0.horizon(), "out"))
}

/// One control period. `setpoints[0]` is the current setpoint and later
/// entries preview the schedule; the last one is repeated as needed.
#[no_mangle]
pub unsafe extern "C" fn tc_controller_step(
    ctrl: *mut TcController,
    measurement: f64,
    t_w: f64,
    setpoints: *const f64,
    n_setpoints: usize,
    out: *mut TcControlOutput,
) -> TcStatus {
    guard(|| {
        let c = get_mut(ctrl, "controller")?;
        if setpoints.is_null() {
            return Err(null("setpoints"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let preview = std::slice::from_raw_parts(setpoints, n_setpoints);
        let r = c.0.step(measurement, t_w, preview)?;
        put(
            out,
            TcControlOutput {
                command: r.command,
                pump_on: r.pump_on,
                mode: r.mode.into(),
                cost: r.solution.cost,
                iterations: r.solution.iterations,
            },
            "out",
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_controller_free(ctrl: *mut TcController) {
    free(ctrl)
}

// Traces

#[no_mangle]
pub unsafe extern "C" fn tc_simulate(scenario: *const TcScenario, out: *mut *mut TcTrace) -> TcStatus {
    guard(|| {
        let s = &get(scenario, "scenario")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        put_handle(out, TcTrace(simulate(s)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_trace_from_csv(csv: *const c_char, out: *mut *mut TcTrace) -> TcStatus {
    guard(|| put_handle(out, TcTrace(SimTrace::from_csv(text(csv, "csv")?)?)))
}

/// Number of rows; 0 for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn tc_trace_len(trace: *const TcTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.rows.len())
}

#[no_mangle]
pub unsafe extern "C" fn tc_trace_row(trace: *const TcTrace, index: usize, out: *mut TcTraceRow) -> TcStatus {
    guard(|| {
        let rows = &get(trace, "trace")?.0.rows;
        let r = rows.get(index).ok_or_else(|| {
            Fail::Status(TcStatus::OutOfRange, format!("row {index} out of range ({} rows)", rows.len()))
        })?;
        put(
            out,
            TcTraceRow {
                t: r.t,
                t_p_cmd: r.t_p_cmd,
                t_p: r.t_p,
                t_co: r.t_co,
                t_w: r.t_w,
                t_c: r.t_c,
                pump_on: r.pump_on,
                q_w: r.q_w,
                q_i_true: r.q_i_true,
                q_i_hat: r.q_i_hat,
                contact_flag: r.contact_flag,
            },
            "out",
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_trace_to_csv(trace: *const TcTrace, out: *mut *mut c_char) -> TcStatus {
    guard(|| put_string(out, get(trace, "trace")?.0.to_csv()))
}

#[no_mangle]
pub unsafe extern "C" fn tc_trace_free(trace: *mut TcTrace) {
    free(trace)
}

/// Thresholds the trace's estimate with the scenario's detection settings
/// and scores it against the contact flags.
#[no_mangle]
pub unsafe extern "C" fn tc_detect(
    trace: *const TcTrace,
    scenario: *const TcScenario,
    out: *mut TcDetectionSummary,
) -> TcStatus {
    guard(|| {
        let t = &get(trace, "trace")?.0;
        let s = &get(scenario, "scenario")?.0;
        let r = detect_contacts(t, &s.detection)?;
        put(
            out,
            TcDetectionSummary {
                detections: r.detections.len(),
                true_positives: r.true_positives,
                false_positives: r.false_positives,
                misses: r.misses,
                peak_q_hat: r.peak_q_hat,
            },
            "out",
        )
    })
}

/// Plain-text run report, as written by the command-line tool.
#[no_mangle]
pub unsafe extern "C" fn tc_run_report(
    scenario: *const TcScenario,
    trace: *const TcTrace,
    out: *mut *mut c_char,
) -> TcStatus {
    guard(|| {
        let s = &get(scenario, "scenario")?.0;
        let t = &get(trace, "trace")?.0;
        put_string(out, RunReport::new(s, t, &[])?.render())
    })
}

/// Fits the first-order step model to `column` (`T_c` or `T_w`) of an
/// open-loop step trace and writes the result in `key = value` form.
#[no_mangle]
pub unsafe extern "C" fn tc_fit_fopdt(
    trace: *const TcTrace,
    mode: TcMode,
    column: *const c_char,
    out: *mut *mut c_char,
) -> TcStatus {
    guard(|| {
        let t = &get(trace, "trace")?.0;
        let step = StepTrace::from_sim(t, mode.into(), text(column, "column")?)?;
        put_string(out, fit_fopdt(&step)?.to_kv().to_string())
    })
}
