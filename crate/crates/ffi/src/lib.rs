//! C ABI over `cadre_core`.
//!
//! Conventions:
//! - every fallible function returns a [`CadreStatus`] and writes results
//!   through out-pointers;
//! - on failure the message is available from [`cadre_last_error`] on the
//!   same thread until the next call;
//! - tables are opaque handles freed with [`cadre_table_free`], strings
//!   returned by the library are freed with [`cadre_string_free`];
//! - panics never cross the boundary; they surface as `CADRE_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cadre_core::config::parse_config;
use cadre_core::federation::{run_in_process, RunOptions};
use cadre_core::io::{self, Format};
use cadre_core::metrics::{MetricKind, MetricSpec};
use cadre_core::readiness::{run_readiness_loop, ModuleArgs, ModuleRegistry};
use cadre_core::{parse_rule, DataTable, DatasetMeta, Error};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CadreStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Schema = 4,
    Config = 5,
    Rule = 6,
    Remedy = 7,
    Pca = 8,
    Io = 9,
    Network = 10,
    Other = 11,
    Panic = 12,
}

/// Opaque table handle.
pub struct CadreTable {
    table: DataTable,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CadreStatus {
    match e {
        Error::Parse(_) | Error::Json(_) => CadreStatus::Parse,
        Error::Schema(_)
        | Error::Index { .. }
        | Error::EmptyInput(_)
        | Error::MetricMismatch { .. } => CadreStatus::Schema,
        Error::RuleSyntax { .. } => CadreStatus::Rule,
        Error::InsufficientMinority { .. } => CadreStatus::Remedy,
        Error::Config { .. }
        | Error::UnknownModule(_)
        | Error::DuplicateName(_)
        | Error::EmptyPipeline => CadreStatus::Config,
        Error::DegenerateCovariance(_) | Error::TooFewRows(_) => CadreStatus::Pca,
        Error::Io(_) => CadreStatus::Io,
        Error::Protocol(_) | Error::Timeout(_) | Error::Bind { .. } | Error::Connect { .. } => {
            CadreStatus::Network
        }
    }
}

struct Fail(CadreStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording its error and containing panics.
fn guard<F>(f: F) -> CadreStatus
where
    F: FnOnce() -> Result<(), Fail>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CadreStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {message}"));
            CadreStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(CadreStatus::NullArgument, format!("`{what}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CadreStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn opt_text<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

unsafe fn table_ref<'a>(t: *const CadreTable) -> Result<&'a DataTable, Fail> {
    t.as_ref()
        .map(|h| &h.table)
        .ok_or_else(|| Fail(CadreStatus::NullArgument, "`table` is null".into()))
}

fn check_out<T>(out: *mut T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        Err(Fail(CadreStatus::NullArgument, format!("`{what}` is null")))
    } else {
        Ok(())
    }
}

fn meta_from(json: Option<&str>) -> Result<DatasetMeta, Fail> {
    match json {
        None => Ok(DatasetMeta::default()),
        Some(s) => {
            serde_json::from_str(s).map_err(|e| Fail(CadreStatus::Parse, format!("meta: {e}")))
        }
    }
}

fn new_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(CadreStatus::Other, "output contains a NUL byte".into()))
}

fn give_table(table: DataTable) -> *mut CadreTable {
    Box::into_raw(Box::new(CadreTable { table }))
}

/// Message of the last failed call on this thread, or NULL. Owned by the
/// library; valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cadre_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cadre_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses CSV text into a table. `meta_json` is a JSON object with the
/// optional keys `client_id`, `label_column`, `sensitive_feature`,
/// `sensitive_groups`, `quasi_identifiers` and `positive_label`; NULL
/// means no metadata.
///
/// # Safety
/// `csv` and `meta_json` (when not NULL) must be NUL-terminated strings and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cadre_table_from_csv(
    csv: *const c_char,
    meta_json: *const c_char,
    out: *mut *mut CadreTable,
) -> CadreStatus {
    guard(|| {
        check_out(out, "out")?;
        let csv = text(csv, "csv")?;
        let meta = meta_from(opt_text(meta_json, "meta_json")?)?;
        let table = io::parse_table(csv, Format::Csv, meta, None)?;
        *out = give_table(table);
        Ok(())
    })
}

/// Loads a CSV or NDJSON file (by extension), using its schema sidecar
/// when one exists.
///
/// # Safety
/// As [`cadre_table_from_csv`], with `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cadre_table_load(
    path: *const c_char,
    meta_json: *const c_char,
    out: *mut *mut CadreTable,
) -> CadreStatus {
    guard(|| {
        check_out(out, "out")?;
        let path = Path::new(text(path, "path")?);
        let meta = meta_from(opt_text(meta_json, "meta_json")?)?;
        let sidecar = io::sidecar_path(path);
        let schema = if sidecar.exists() {
            Some(io::read_schema(&sidecar)?)
        } else {
            None
        };
        let table = io::load_table(path, Format::from_path(path), meta, schema.as_ref())?;
        *out = give_table(table);
        Ok(())
    })
}

/// Frees a table. NULL is ignored.
///
/// # Safety
/// `table` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cadre_table_free(table: *mut CadreTable) {
    if !table.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(table))));
    }
}

/// # Safety
/// `table` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cadre_table_n_rows(
    table: *const CadreTable,
    out: *mut usize,
) -> CadreStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = table_ref(table)?.n_rows();
        Ok(())
    })
}

/// # Safety
/// `table` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cadre_table_n_columns(
    table: *const CadreTable,
    out: *mut usize,
) -> CadreStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = table_ref(table)?.columns().len();
        Ok(())
    })
}

/// Table as CSV text, freed with [`cadre_string_free`].
///
/// # Safety
/// `table` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cadre_table_to_csv(
    table: *const CadreTable,
    out: *mut *mut c_char,
) -> CadreStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = new_string(io::to_csv(table_ref(table)?)?)?;
        Ok(())
    })
}

/// Evaluates the metric called `name` (e.g. `duplicate_proportion`).
///
/// # Safety
/// `table` must be a live handle, `name` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cadre_metric_evaluate(
    table: *const CadreTable,
    name: *const c_char,
    out: *mut f64,
) -> CadreStatus {
    guard(|| {
        check_out(out, "out")?;
        let table = table_ref(table)?;
        let name = text(name, "name")?;
        let kind = MetricKind::from_name(name)
            .ok_or_else(|| Fail(CadreStatus::Config, format!("unknown metric `{name}`")))?;
        let spec = MetricSpec::new(kind);
        spec.validate(table)?;
        *out = spec.evaluate(table)?.value;
        Ok(())
    })
}

/// Parses `expr` (e.g. `"k_anonymity_level <= 1"`) and reports whether
/// `observed` violates it.
///
/// # Safety
/// `expr` must be a NUL-terminated string and `violated` writable.
#[no_mangle]
pub unsafe extern "C" fn cadre_rule_check(
    expr: *const c_char,
    observed: f64,
    violated: *mut bool,
) -> CadreStatus {
    guard(|| {
        check_out(violated, "violated")?;
        let rule = parse_rule(text(expr, "expr")?)?;
        *violated = rule.is_violated_by(observed);
        Ok(())
    })
}

/// Runs the built-in module `module` on `table`. `rule` overrides the
/// module's default rule when not NULL. Writes the outcome summary as JSON
/// to `outcome_json` and, when `table_after` is not NULL, a new handle to
/// the remediated table.
///
/// # Safety
/// Pointers as documented; `outcome_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cadre_module_run(
    table: *const CadreTable,
    module: *const c_char,
    rule: *const c_char,
    max_iterations: usize,
    outcome_json: *mut *mut c_char,
    table_after: *mut *mut CadreTable,
) -> CadreStatus {
    guard(|| {
        check_out(outcome_json, "outcome_json")?;
        let table = table_ref(table)?;
        let name = text(module, "module")?;
        let args = ModuleArgs {
            rule: opt_text(rule, "rule")?.map(parse_rule).transpose()?,
            max_iterations: (max_iterations > 0).then_some(max_iterations),
            ..Default::default()
        };
        let m = ModuleRegistry::builtin().construct(name, &args)?;
        let outcome = run_readiness_loop(table, &m)?;
        let json = serde_json::to_string(&outcome.summary).map_err(Error::from)?;
        *outcome_json = new_string(json)?;
        if !table_after.is_null() {
            *table_after = give_table(outcome.table_after);
        }
        Ok(())
    })
}

/// Runs the experiment in `config_path` with every client in-process and
/// returns report.json as a string. `timestamp` fixes the report time when
/// not NULL; `out_dir`, when not NULL, also receives report.json,
/// report.html and run.log.
///
/// # Safety
/// String arguments must be NUL-terminated; `report_json` writable.
#[no_mangle]
pub unsafe extern "C" fn cadre_simulate(
    config_path: *const c_char,
    timestamp: *const c_char,
    out_dir: *const c_char,
    report_json: *mut *mut c_char,
) -> CadreStatus {
    guard(|| {
        check_out(report_json, "report_json")?;
        let cfg = parse_config(Path::new(text(config_path, "config_path")?))?;
        let opts = RunOptions {
            generated_at: opt_text(timestamp, "timestamp")?.map(str::to_string),
        };
        let run = run_in_process(&cfg, &ModuleRegistry::builtin(), &opts)?;
        if let Some(dir) = opt_text(out_dir, "out_dir")? {
            run.write(Path::new(dir))?;
        }
        *report_json = new_string(run.report.to_json()?)?;
        Ok(())
    })
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cadre_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
