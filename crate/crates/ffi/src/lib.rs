//! C ABI for building, loading and running MLGuard guards.
//!
//! Conventions:
//!
//! * Every fallible call returns an [`MlguardStatus`]. On anything but
//!   `MLGUARD_STATUS_OK` a message is available from [`mlguard_last_error`]
//!   on the same thread.
//! * Strings crossing the boundary are NUL-terminated UTF-8. Strings returned
//!   by the library are owned by the caller and released with
//!   [`mlguard_string_free`].
//! * A guard is an opaque [`MlguardGuard`] handle from [`mlguard_guard_open`],
//!   released with [`mlguard_guard_free`]. A handle may be shared between
//!   threads; predictions on it are serialized only where the violation log
//!   requires it.
//! * Panics never unwind into C; they are reported as `MLGUARD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mlguard::bundle::{BuildError, LoadError};
use mlguard::contract::SpecDiagnostic;
use mlguard::guard::{GuardError, JsonlSink, NullSink, ViolationSink};
use mlguard::{
    build_bundle, load_bundle, parse_contract, validate_contract, FsResolver, Guard, RecordBatch,
    Value,
};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlguardStatus {
    Ok = 0,
    /// A required pointer was null, a string was not UTF-8 or a size was zero.
    InvalidArgument = 1,
    /// The contract document does not parse.
    ParseError = 2,
    /// The contract parses but fails validation.
    ValidationFailed = 3,
    /// Training or writing the bundle failed.
    BuildFailed = 4,
    /// The bundle is missing, corrupted or of an unsupported version.
    LoadFailed = 5,
    /// The input batch is malformed (bad CSV, ragged rows).
    InvalidInput = 6,
    /// The model adapter failed.
    AdapterFailure = 7,
    Io = 8,
    Panic = 9,
}

/// Opaque guard handle.
pub struct MlguardGuard {
    guard: Guard,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    let c = CString::new(message).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

type Outcome = Result<(), (MlguardStatus, String)>;

fn guarded(f: impl FnOnce() -> Outcome) -> MlguardStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MlguardStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MlguardStatus::Panic
        }
    }
}

fn invalid(message: impl Into<String>) -> (MlguardStatus, String) {
    (MlguardStatus::InvalidArgument, message.into())
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn required_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MlguardStatus, String)> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// # Safety
/// As [`required_str`].
unsafe fn optional_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, (MlguardStatus, String)> {
    if p.is_null() {
        Ok(None)
    } else {
        required_str(p, what).map(Some)
    }
}

/// # Safety
/// `out` is null or valid for one pointer write.
unsafe fn emit(out: *mut *mut c_char, text: String) -> Outcome {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    let c = CString::new(text).map_err(|_| invalid("output contains NUL"))?;
    *out = c.into_raw();
    Ok(())
}

fn root_for(contract: &Path, root: Option<&str>) -> FsResolver {
    FsResolver::new(match root {
        Some(r) => PathBuf::from(r),
        None => contract
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    })
}

fn load_failure(e: LoadError) -> (MlguardStatus, String) {
    match e {
        LoadError::IoFailure { .. } => (MlguardStatus::Io, e.to_string()),
        _ => (MlguardStatus::LoadFailed, e.to_string()),
    }
}

fn guard_failure(e: GuardError) -> (MlguardStatus, String) {
    match e {
        GuardError::AdapterFailure(_) => (MlguardStatus::AdapterFailure, e.to_string()),
        GuardError::BundleInvariantBroken(_) => (MlguardStatus::LoadFailed, e.to_string()),
    }
}

/// Library version, a static string. Do not free.
#[no_mangle]
pub extern "C" fn mlguard_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next library call on this thread. Do not free.
#[no_mangle]
pub extern "C" fn mlguard_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` is null or a string returned by this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mlguard_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse and validate the contract at `contract_path`. Locators resolve
/// against `root`, or the contract's directory when `root` is null.
/// `*diagnostics_json` receives a JSON array of diagnostics (warnings
/// included) whenever the contract parses.
///
/// # Safety
/// String arguments are null or valid NUL-terminated strings;
/// `diagnostics_json` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn mlguard_check_contract(
    contract_path: *const c_char,
    root: *const c_char,
    diagnostics_json: *mut *mut c_char,
) -> MlguardStatus {
    guarded(|| {
        let path = Path::new(required_str(contract_path, "contract_path")?);
        let root = optional_str(root, "root")?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| (MlguardStatus::Io, format!("{}: {e}", path.display())))?;
        let spec = parse_contract(&text).map_err(|e| (MlguardStatus::ParseError, e.to_string()))?;
        let diags = validate_contract(&spec, &root_for(path, root));
        emit(
            diagnostics_json,
            serde_json::to_string(&diags).expect("diagnostics JSON"),
        )?;
        if diags.iter().any(SpecDiagnostic::is_error) {
            let first = diags.iter().find(|d| d.is_error()).expect("checked");
            return Err((MlguardStatus::ValidationFailed, first.to_string()));
        }
        Ok(())
    })
}

/// Train and write a bundle for the contract at `contract_path` into
/// `out_dir`. `root` as for [`mlguard_check_contract`].
///
/// # Safety
/// String arguments are null or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mlguard_build_bundle(
    contract_path: *const c_char,
    root: *const c_char,
    seed: u64,
    out_dir: *const c_char,
) -> MlguardStatus {
    guarded(|| {
        let path = Path::new(required_str(contract_path, "contract_path")?);
        let root = optional_str(root, "root")?;
        let out = Path::new(required_str(out_dir, "out_dir")?);
        let text = std::fs::read_to_string(path)
            .map_err(|e| (MlguardStatus::Io, format!("{}: {e}", path.display())))?;
        let spec = parse_contract(&text).map_err(|e| (MlguardStatus::ParseError, e.to_string()))?;
        build_bundle(&spec, &root_for(path, root), seed, out).map_err(|e| {
            let status = match e {
                BuildError::ValidationFailed(_) => MlguardStatus::ValidationFailed,
                BuildError::IoFailure { .. } => MlguardStatus::Io,
                _ => MlguardStatus::BuildFailed,
            };
            (status, e.to_string())
        })?;
        Ok(())
    })
}

/// Load and verify the bundle in `bundle_dir` and open a guard on it.
/// Violations are appended to `log_path` as JSON lines, or discarded when
/// `log_path` is null.
///
/// # Safety
/// String arguments are null or valid NUL-terminated strings; `out` is
/// valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn mlguard_guard_open(
    bundle_dir: *const c_char,
    log_path: *const c_char,
    out: *mut *mut MlguardGuard,
) -> MlguardStatus {
    guarded(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let dir = Path::new(required_str(bundle_dir, "bundle_dir")?);
        let sink: Arc<dyn ViolationSink> = match optional_str(log_path, "log_path")? {
            Some(p) => Arc::new(
                JsonlSink::open(Path::new(p)).map_err(|e| (MlguardStatus::Io, format!("{p}: {e}")))?,
            ),
            None => Arc::new(NullSink),
        };
        let bundle = load_bundle(dir).map_err(load_failure)?;
        let guard = Guard::new(bundle, sink).map_err(guard_failure)?;
        *out = Box::into_raw(Box::new(MlguardGuard { guard }));
        Ok(())
    })
}

/// Release a guard. Null is ignored.
///
/// # Safety
/// `guard` is null or a handle from [`mlguard_guard_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mlguard_guard_free(guard: *mut MlguardGuard) {
    if !guard.is_null() {
        drop(Box::from_raw(guard));
    }
}

fn predict_json(guard: &MlguardGuard, batch: &RecordBatch, out: *mut *mut c_char) -> Outcome {
    let result = guard.guard.predict(batch).map_err(guard_failure)?;
    // SAFETY: callers check `out` before doing any work.
    unsafe { emit(out, serde_json::to_string(&result).expect("output JSON")) }
}

/// Guard a batch given as CSV text with a header row. `*output_json`
/// receives the guarded output (`batch_id`, `status`, `predictions`,
/// `warnings`, `uncertainty`, ...). A rejected batch is a successful call
/// with `"status": "rejected"`.
///
/// # Safety
/// `guard` is a live handle; `csv` is a valid NUL-terminated string;
/// `output_json` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn mlguard_guard_predict_csv(
    guard: *const MlguardGuard,
    csv: *const c_char,
    output_json: *mut *mut c_char,
) -> MlguardStatus {
    guarded(|| {
        let guard = guard.as_ref().ok_or_else(|| invalid("guard is null"))?;
        if output_json.is_null() {
            return Err(invalid("output_json is null"));
        }
        let text = required_str(csv, "csv")?;
        let batch = RecordBatch::read_csv(text.as_bytes())
            .map_err(|e| (MlguardStatus::InvalidInput, e.to_string()))?;
        predict_json(guard, &batch, output_json)
    })
}

/// Guard a dense row-major `n_rows × n_cols` batch whose columns are named
/// by `column_names`.
///
/// # Safety
/// `guard` is a live handle; `values` points to `n_rows * n_cols` doubles
/// (it may be null when `n_rows` is 0); `column_names` points to `n_cols`
/// valid NUL-terminated strings; `output_json` is valid for one pointer
/// write.
#[no_mangle]
pub unsafe extern "C" fn mlguard_guard_predict(
    guard: *const MlguardGuard,
    values: *const f64,
    n_rows: usize,
    n_cols: usize,
    column_names: *const *const c_char,
    output_json: *mut *mut c_char,
) -> MlguardStatus {
    guarded(|| {
        let guard = guard.as_ref().ok_or_else(|| invalid("guard is null"))?;
        if output_json.is_null() {
            return Err(invalid("output_json is null"));
        }
        if n_cols == 0 || column_names.is_null() {
            return Err(invalid("a batch needs at least one named column"));
        }
        let total = n_rows
            .checked_mul(n_cols)
            .ok_or_else(|| invalid("n_rows * n_cols overflows"))?;
        if total > 0 && values.is_null() {
            return Err(invalid("values is null"));
        }
        let names = std::slice::from_raw_parts(column_names, n_cols)
            .iter()
            .enumerate()
            .map(|(j, &p)| required_str(p, &format!("column_names[{j}]")).map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let flat = if total == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(values, total)
        };
        let rows = flat
            .chunks(n_cols)
            .map(|r| r.iter().map(|&x| Value::Real(x)).collect())
            .collect();
        let batch =
            RecordBatch::new(names, rows).map_err(|e| (MlguardStatus::InvalidInput, e.to_string()))?;
        predict_json(guard, &batch, output_json)
    })
}
