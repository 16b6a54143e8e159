//! C ABI over the gainlora toolkit.
//!
//! Every fallible call returns a [`GainloraStatus`]; on failure the message
//! is available from [`gainlora_last_error`] on the same thread. Objects are
//! opaque handles released by their matching `*_free` function. Panics never
//! cross the boundary; they surface as `GAINLORA_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gainlora::config::{apply_override, ExperimentConfig};
use gainlora::continual::{compute_ap, compute_ft, count_trainable_params, AccuracyMatrix, ArchSpec, RunResult};
use gainlora::numerics::Mat;
use gainlora::report::Summary;
use gainlora::subspace::SubspaceBasis;
use gainlora::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GainloraStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    NumericError = 4,
    IoError = 5,
    Panic = 6,
    Error = 7,
}

/// Experiment configuration.
pub struct GainloraConfig {
    inner: ExperimentConfig,
}

/// Result of one seed's run.
pub struct GainloraRun {
    cfg: ExperimentConfig,
    inner: RunResult,
}

/// Orthonormal basis of a growing input subspace.
pub struct GainloraSubspace {
    inner: SubspaceBasis,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> GainloraStatus {
    match err {
        e if e.is_config() => GainloraStatus::ConfigError,
        e if e.is_numeric() => GainloraStatus::NumericError,
        Error::Io(_) => GainloraStatus::IoError,
        Error::DimMismatch { .. }
        | Error::ShapeMismatch(_)
        | Error::EmptyInput
        | Error::IncompleteMatrix
        | Error::SingleTask => GainloraStatus::InvalidArgument,
        _ => GainloraStatus::Error,
    }
}

enum Fail {
    Status(GainloraStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null() -> Fail {
    Fail::Status(GainloraStatus::NullPointer, "null pointer argument".into())
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail::Status(GainloraStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GainloraStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GainloraStatus::Ok
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            GainloraStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("string argument is not UTF-8"))
}

unsafe fn out_ref<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(null)
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn gainlora_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gainlora_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gainlora_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Trainable parameters per new task for `preset` (e.g. "t5-large") and
/// `strategy` (e.g. "olora", "gain+inflora") at rank `rank`.
///
/// # Safety
/// `preset` and `strategy` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gainlora_param_count(
    preset: *const c_char,
    strategy: *const c_char,
    rank: usize,
    out: *mut u64,
) -> GainloraStatus {
    guard(|| {
        let arch = ArchSpec::preset(str_arg(preset)?)?;
        let strategy = str_arg(strategy)?.parse()?;
        *out_ref(out)? = count_trainable_params(&arch, strategy, rank);
        Ok(())
    })
}

unsafe fn packed_matrix(packed: *const f64, tasks: usize) -> Result<AccuracyMatrix, Fail> {
    let data = slice_arg(packed, tasks * (tasks + 1) / 2)?;
    let mut rows = Vec::with_capacity(tasks);
    let mut at = 0;
    for j in 0..tasks {
        rows.push(data[at..at + j + 1].to_vec());
        at += j + 1;
    }
    Ok(AccuracyMatrix::from_rows(rows)?)
}

/// Average performance of a complete accuracy matrix given as its lower
/// triangle packed row by row: `A[0][0], A[1][0], A[1][1], A[2][0], …`.
///
/// # Safety
/// `packed` must hold `tasks·(tasks+1)/2` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gainlora_compute_ap(packed: *const f64, tasks: usize, out: *mut f64) -> GainloraStatus {
    guard(|| {
        *out_ref(out)? = compute_ap(&packed_matrix(packed, tasks)?)?;
        Ok(())
    })
}

/// Forgetting of a packed accuracy matrix (layout as in `gainlora_compute_ap`).
///
/// # Safety
/// As for `gainlora_compute_ap`.
#[no_mangle]
pub unsafe extern "C" fn gainlora_compute_ft(packed: *const f64, tasks: usize, out: *mut f64) -> GainloraStatus {
    guard(|| {
        *out_ref(out)? = compute_ft(&packed_matrix(packed, tasks)?)?;
        Ok(())
    })
}

/// Parses a TOML experiment config. Release with `gainlora_config_free`.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gainlora_config_from_toml(
    toml: *const c_char,
    out: *mut *mut GainloraConfig,
) -> GainloraStatus {
    guard(|| {
        let slot = out_ref(out)?;
        *slot = ptr::null_mut();
        let inner = ExperimentConfig::from_toml(str_arg(toml)?, &[])?;
        *slot = Box::into_raw(Box::new(GainloraConfig { inner }));
        Ok(())
    })
}

/// Applies a `section.key=value` override and revalidates. On failure the
/// config is left unchanged.
///
/// # Safety
/// `cfg` must be a live config handle; `assignment` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gainlora_config_set(cfg: *mut GainloraConfig, assignment: *const c_char) -> GainloraStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(null)?;
        let assignment = str_arg(assignment)?;
        let mut table = toml::Table::try_from(&cfg.inner).map_err(|e| invalid(e.to_string()))?;
        apply_override(&mut table, assignment)?;
        let text = toml::to_string(&table).map_err(|e| invalid(e.to_string()))?;
        let mut next = ExperimentConfig::from_toml(&text, &[])?;
        next.out_dir = cfg.inner.out_dir.clone();
        cfg.inner = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from `gainlora_config_from_toml` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gainlora_config_free(cfg: *mut GainloraConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the whole task sequence for one seed. Release with `gainlora_run_free`.
///
/// # Safety
/// `cfg` must be a live config handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gainlora_run_seed(
    cfg: *const GainloraConfig,
    seed: u64,
    out: *mut *mut GainloraRun,
) -> GainloraStatus {
    guard(|| {
        let slot = out_ref(out)?;
        *slot = ptr::null_mut();
        let cfg = cfg.as_ref().ok_or_else(null)?;
        let inner = gainlora::experiment::run_seed(&cfg.inner, seed, None, false)?;
        let cfg = ExperimentConfig {
            seeds: vec![seed],
            ..cfg.inner.clone()
        };
        *slot = Box::into_raw(Box::new(GainloraRun { cfg, inner }));
        Ok(())
    })
}

/// # Safety
/// `run` must be NULL or a handle from `gainlora_run_seed` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gainlora_run_free(run: *mut GainloraRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of tasks in the run; 0 for NULL.
///
/// # Safety
/// `run` must be NULL or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn gainlora_run_tasks(run: *const GainloraRun) -> usize {
    run.as_ref().map_or(0, |r| r.inner.matrix.tasks)
}

/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gainlora_run_ap(run: *const GainloraRun, out: *mut f64) -> GainloraStatus {
    guard(|| {
        *out_ref(out)? = run.as_ref().ok_or_else(null)?.inner.ap;
        Ok(())
    })
}

/// Fails with `INVALID_ARGUMENT` for a single-task run.
///
/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gainlora_run_ft(run: *const GainloraRun, out: *mut f64) -> GainloraStatus {
    guard(|| {
        let ft = run
            .as_ref()
            .ok_or_else(null)?
            .inner
            .ft
            .ok_or(Fail::Lib(Error::SingleTask))?;
        *out_ref(out)? = ft;
        Ok(())
    })
}

/// Accuracy (percent) on `task` after learning `after_task`; requires `task <= after_task`.
///
/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gainlora_run_accuracy(
    run: *const GainloraRun,
    after_task: usize,
    task: usize,
    out: *mut f64,
) -> GainloraStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(null)?;
        let a = run
            .inner
            .matrix
            .get(after_task, task)
            .ok_or_else(|| invalid(format!("no entry ({after_task}, {task})")))?;
        *out_ref(out)? = a;
        Ok(())
    })
}

/// Summary JSON of the run, identical to `summary.json` from a one-seed CLI
/// run. Free the string with `gainlora_string_free`.
///
/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gainlora_run_summary_json(run: *const GainloraRun, out: *mut *mut c_char) -> GainloraStatus {
    guard(|| {
        let slot = out_ref(out)?;
        *slot = ptr::null_mut();
        let run = run.as_ref().ok_or_else(null)?;
        let summary = Summary::new(&run.cfg, std::slice::from_ref(&run.inner));
        let mut json = serde_json::to_string_pretty(&summary).map_err(|e| Fail::Lib(e.into()))?;
        json.push('\n');
        *slot = CString::new(json).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Empty subspace of `R^dim`. Release with `gainlora_subspace_free`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gainlora_subspace_new(dim: usize, out: *mut *mut GainloraSubspace) -> GainloraStatus {
    guard(|| {
        let slot = out_ref(out)?;
        *slot = ptr::null_mut();
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        *slot = Box::into_raw(Box::new(GainloraSubspace {
            inner: SubspaceBasis::empty(dim),
        }));
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a handle from `gainlora_subspace_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gainlora_subspace_free(s: *mut GainloraSubspace) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of basis vectors; 0 for NULL.
///
/// # Safety
/// `s` must be NULL or a live subspace handle.
#[no_mangle]
pub unsafe extern "C" fn gainlora_subspace_rank(s: *const GainloraSubspace) -> usize {
    s.as_ref().map_or(0, |s| s.inner.rank())
}

/// Grows the basis from `n` samples (row-major `n × dim`) so that it
/// captures at least fraction `eps` of their energy.
///
/// # Safety
/// `s` must be a live subspace handle; `samples` must hold `n·dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn gainlora_subspace_extend(
    s: *mut GainloraSubspace,
    samples: *const f64,
    n: usize,
    eps: f64,
) -> GainloraStatus {
    guard(|| {
        let s = s.as_mut().ok_or_else(null)?;
        let dim = s.inner.dim();
        let rows = Mat::from_vec(n, dim, slice_arg(samples, n * dim)?.to_vec());
        s.inner = s.inner.extend(&rows.transpose(), eps)?;
        Ok(())
    })
}

/// Copies the basis (row-major `dim × rank`) into `out`, which holds `len` doubles.
///
/// # Safety
/// `s` must be a live subspace handle; `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gainlora_subspace_basis(
    s: *const GainloraSubspace,
    out: *mut f64,
    len: usize,
) -> GainloraStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(null)?;
        let basis = s.inner.basis().as_slice();
        if len < basis.len() {
            return Err(invalid(format!(
                "buffer holds {len} doubles, basis needs {}",
                basis.len()
            )));
        }
        if !basis.is_empty() {
            if out.is_null() {
                return Err(null());
            }
            ptr::copy_nonoverlapping(basis.as_ptr(), out, basis.len());
        }
        Ok(())
    })
}

/// Writes `v − M Mᵀ v` for a `dim`-vector `v` into `out`.
///
/// # Safety
/// `s` must be a live subspace handle; `v` and `out` must each hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn gainlora_subspace_project_out(
    s: *const GainloraSubspace,
    v: *const f64,
    out: *mut f64,
) -> GainloraStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(null)?;
        let dim = s.inner.dim();
        let r = s.inner.project_out_vec(slice_arg(v, dim)?)?;
        if out.is_null() {
            return Err(null());
        }
        ptr::copy_nonoverlapping(r.as_ptr(), out, dim);
        Ok(())
    })
}
