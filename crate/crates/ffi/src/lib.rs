//! C ABI over `fsindex`: load a panel, build a network, compute the
//! productivity index panel and read the results back.
//!
//! Every object is an opaque handle created by a `*_new`/`*_load` call and
//! released by the matching `*_free`. Every fallible call returns an
//! [`FsiStatus`]; on failure the message is available from
//! [`fsi_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fsindex::malmquist::{self, FsiOptions, MalmquistError, MalmquistRecord, PairStatus, ScoreQuadruple};
use fsindex::netdea::{DeaOptions, NetworkSpec};
use fsindex::panel::{self, DictionaryEntry, Panel, PanelError, VariableDictionary, VariableRole};
use fsindex::synth::{self, DgpConfig};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsiStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Invalid = 5,
    Domain = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// Status of one unit-pair record.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsiPairStatus {
    Ok = 0,
    Unbounded = 1,
    SolverFailure = 2,
    StageUndefined = 3,
    Missing = 4,
}

impl From<PairStatus> for FsiPairStatus {
    fn from(s: PairStatus) -> Self {
        match s {
            PairStatus::Ok => FsiPairStatus::Ok,
            PairStatus::Unbounded => FsiPairStatus::Unbounded,
            PairStatus::SolverFailure => FsiPairStatus::SolverFailure,
            PairStatus::StageUndefined => FsiPairStatus::StageUndefined,
            PairStatus::Missing => FsiPairStatus::Missing,
        }
    }
}

/// One unit-pair of the index panel. Undefined values are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FsiRecord {
    /// Later period of the pair; the value is labelled there.
    pub period: i64,
    pub mi: f64,
    pub ec: f64,
    pub tc: f64,
    pub status: FsiPairStatus,
}

/// Opaque panel handle.
pub struct FsiPanel {
    inner: Panel,
}

/// Opaque network handle.
pub struct FsiNetwork {
    inner: NetworkSpec,
}

/// Opaque result handle.
pub struct FsiResult {
    records: Vec<MalmquistRecord>,
    units: Vec<CString>,
    spec: NetworkSpec,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul removed"));
}

struct Failure(FsiStatus, String);

impl From<PanelError> for Failure {
    fn from(e: PanelError) -> Self {
        let code = match e {
            PanelError::Io { .. } => FsiStatus::Io,
            PanelError::Csv(_) | PanelError::Json(_) | PanelError::Parse { .. } => FsiStatus::Parse,
            _ => FsiStatus::Invalid,
        };
        Failure(code, e.to_string())
    }
}

impl From<MalmquistError> for Failure {
    fn from(e: MalmquistError) -> Self {
        let code = match e {
            MalmquistError::Domain { .. } | MalmquistError::AboveOne { .. } => FsiStatus::Domain,
            _ => FsiStatus::Invalid,
        };
        Failure(code, e.to_string())
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure(FsiStatus::Invalid, e.to_string())
}

/// Run `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FsiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsiStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            FsiStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(FsiStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(FsiStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(FsiStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(FsiStatus::NullArgument, format!("`{name}` is null")))
}

/// Message of the last failed call on this thread; empty when none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fsi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a CSV panel. `dictionary_path` may be null, in which case the
/// default dictionary is used with `stage3_external` (also nullable,
/// defaulting to `share_capital`) as the stage-3 external input.
///
/// # Safety
/// String arguments must be null or valid NUL-terminated strings; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn fsi_panel_load(
    path: *const c_char,
    dictionary_path: *const c_char,
    stage3_external: *const c_char,
    out: *mut *mut FsiPanel,
) -> FsiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let dict = if dictionary_path.is_null() {
            let ext = if stage3_external.is_null() {
                synth::STAGE3_EXTERNAL
            } else {
                str_arg(stage3_external, "stage3_external")?
            };
            VariableDictionary::bank_default()
                .with(ext, DictionaryEntry::new(VariableRole::ExternalInput, ""))
        } else {
            VariableDictionary::from_json_file(Path::new(str_arg(dictionary_path, "dictionary_path")?))?
        };
        let panel = panel::load_panel(Path::new(path), &dict)?;
        *out = Box::into_raw(Box::new(FsiPanel { inner: panel }));
        Ok(())
    })
}

/// Generate a synthetic panel with default parameters except those given.
/// `shock` is the input-saving productivity factor from the default shock
/// period on (1 for none).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fsi_panel_simulate(
    seed: u64,
    n_units: usize,
    n_periods: usize,
    shock: f64,
    out: *mut *mut FsiPanel,
) -> FsiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = DgpConfig {
            seed,
            n_units,
            n_periods,
            shock,
            shock_period: DgpConfig::default().shock_period.min(n_periods.saturating_sub(1)).max(1),
            ..DgpConfig::default()
        };
        let syn = synth::generate(&cfg).map_err(invalid)?;
        *out = Box::into_raw(Box::new(FsiPanel { inner: syn.panel }));
        Ok(())
    })
}

/// Number of units; 0 for a null handle.
///
/// # Safety
/// `panel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsi_panel_n_units(panel: *const FsiPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.inner.n_units())
}

/// Number of periods; 0 for a null handle.
///
/// # Safety
/// `panel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsi_panel_n_periods(panel: *const FsiPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.inner.n_periods())
}

/// Write the panel in the CSV dialect it was read from.
///
/// # Safety
/// `panel` must be a live handle and `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn fsi_panel_write_csv(panel: *const FsiPanel, path: *const c_char) -> FsiStatus {
    guard(|| {
        let panel = ref_arg(panel, "panel")?;
        let path = str_arg(path, "path")?;
        panel::write_panel(&panel.inner, Path::new(path))?;
        Ok(())
    })
}

/// # Safety
/// `panel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsi_panel_free(panel: *mut FsiPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// The default three-stage network with the given stage-3 external input.
///
/// # Safety
/// `stage3_external` must be a valid string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fsi_network_default(stage3_external: *const c_char, out: *mut *mut FsiNetwork) -> FsiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ext = str_arg(stage3_external, "stage3_external")?;
        let spec = NetworkSpec::bank_default(ext).map_err(invalid)?;
        *out = Box::into_raw(Box::new(FsiNetwork { inner: spec }));
        Ok(())
    })
}

/// Parse a network from its JSON description.
///
/// # Safety
/// `json` must be a valid string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fsi_network_from_json(json: *const c_char, out: *mut *mut FsiNetwork) -> FsiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let spec = NetworkSpec::from_json_str(str_arg(json, "json")?).map_err(|e| Failure(FsiStatus::Parse, e.to_string()))?;
        *out = Box::into_raw(Box::new(FsiNetwork { inner: spec }));
        Ok(())
    })
}

/// Number of stages; 0 for a null handle.
///
/// # Safety
/// `network` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsi_network_n_stages(network: *const FsiNetwork) -> usize {
    network.as_ref().map_or(0, |n| n.inner.n_stages())
}

/// # Safety
/// `network` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsi_network_free(network: *mut FsiNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

/// Solve every consecutive period pair. `floor` bounds the multipliers
/// from below and `shift_floor` sets the min/max ratio of shifted
/// non-positive columns; pass values <= 0 for the defaults.
///
/// # Safety
/// `panel` and `network` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fsi_compute(
    panel: *const FsiPanel,
    network: *const FsiNetwork,
    floor: f64,
    shift_floor: f64,
    out: *mut *mut FsiResult,
) -> FsiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let panel = ref_arg(panel, "panel")?;
        let network = ref_arg(network, "network")?;
        let defaults = FsiOptions::default();
        let options = FsiOptions {
            dea: DeaOptions {
                floor: if floor > 0.0 { floor } else { defaults.dea.floor },
                ..defaults.dea
            },
            shift_floor: if shift_floor > 0.0 { shift_floor } else { defaults.shift_floor },
        };
        let res = malmquist::fsi_panel(&panel.inner, &network.inner, &options)?;
        let units = res
            .records
            .iter()
            .map(|r| CString::new(r.unit.replace('\0', " ")).expect("nul removed"))
            .collect();
        *out = Box::into_raw(Box::new(FsiResult {
            records: res.records,
            units,
            spec: network.inner.clone(),
        }));
        Ok(())
    })
}

/// Number of unit-pair records; 0 for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsi_result_len(result: *const FsiResult) -> usize {
    result.as_ref().map_or(0, |r| r.records.len())
}

/// Copy record `index` into `out`.
///
/// # Safety
/// `result` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fsi_result_get(result: *const FsiResult, index: usize, out: *mut FsiRecord) -> FsiStatus {
    guard(|| {
        let result = ref_arg(result, "result")?;
        let out = out_arg(out, "out")?;
        let r = result.records.get(index).ok_or_else(|| {
            Failure(FsiStatus::OutOfRange, format!("index {index} of {}", result.records.len()))
        })?;
        *out = FsiRecord {
            period: r.period_to,
            mi: r.mi.unwrap_or(f64::NAN),
            ec: r.ec.unwrap_or(f64::NAN),
            tc: r.tc.unwrap_or(f64::NAN),
            status: r.status.into(),
        };
        Ok(())
    })
}

/// Stage index `stage` (0-based) of record `index`, NaN when undefined or
/// out of range.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsi_result_stage_mi(result: *const FsiResult, index: usize, stage: usize) -> f64 {
    result
        .as_ref()
        .and_then(|r| r.records.get(index))
        .and_then(|r| r.stage_mi.get(stage).copied().flatten())
        .unwrap_or(f64::NAN)
}

/// Unit name of record `index`, owned by the result; null when out of range.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsi_result_unit(result: *const FsiResult, index: usize) -> *const c_char {
    result
        .as_ref()
        .and_then(|r| r.units.get(index))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Write the index CSV (`unit, period, FSI, EC, TC, MI_<stage>..., status`).
///
/// # Safety
/// `result` must be a live handle and `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn fsi_result_write_csv(result: *const FsiResult, path: *const c_char) -> FsiStatus {
    guard(|| {
        let result = ref_arg(result, "result")?;
        let path = str_arg(path, "path")?;
        let file = std::fs::File::create(path).map_err(|e| Failure(FsiStatus::Io, format!("`{path}`: {e}")))?;
        malmquist::write_fsi_csv(&result.records, &result.spec, std::io::BufWriter::new(file))?;
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsi_result_free(result: *mut FsiResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Malmquist index and its decomposition from four scores, named
/// `<frontier period>_<data period>`. Any output pointer may be null.
///
/// # Safety
/// Non-null output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fsi_malmquist(
    t_t: f64,
    t_t1: f64,
    t1_t: f64,
    t1_t1: f64,
    mi: *mut f64,
    ec: *mut f64,
    tc: *mut f64,
) -> FsiStatus {
    guard(|| {
        let q = ScoreQuadruple::new(t_t, t_t1, t1_t, t1_t1)?;
        let d = malmquist::decompose(&q);
        if let Some(p) = mi.as_mut() {
            *p = malmquist::malmquist(&q);
        }
        if let Some(p) = ec.as_mut() {
            *p = d.ec;
        }
        if let Some(p) = tc.as_mut() {
            *p = d.tc;
        }
        Ok(())
    })
}
