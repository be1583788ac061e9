//! C ABI over the psmed estimators.
//!
//! Objects cross the boundary as opaque handles created by `psmed_*_new` or
//! returned through out-pointers, and released with the matching `*_free`.
//! Every fallible call returns a `PsmedStatus`; the message of the most
//! recent failure on the calling thread is available from
//! `psmed_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use psmed::estimators::{Method, Scale};
use psmed::inference::{analyze, AnalysisOptions, EstimateResult};
use psmed::oracle::{certify, reference_fixture, DiscreteDgp};
use psmed::{Dataset, Error, ErrorClass, MediatorKind, Monotonicity};

/// Status codes. Nonzero values match the command-line exit codes where both exist.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsmedStatus {
    Ok = 0,
    OracleFailed = 1,
    ConfigError = 2,
    DataError = 3,
    EstimationError = 4,
    NullPointer = 5,
    OutOfRange = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsmedMediator {
    Binary = 0,
    Categorical = 1,
    Continuous = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsmedMonotonicity {
    Standard = 0,
    Strong = 1,
}

pub const PSMED_METHOD_A: u32 = 1;
pub const PSMED_METHOD_B: u32 = 1 << 1;
pub const PSMED_METHOD_C: u32 = 1 << 2;
pub const PSMED_METHOD_D: u32 = 1 << 3;
pub const PSMED_METHOD_MR: u32 = 1 << 4;
pub const PSMED_METHOD_NP: u32 = 1 << 5;

pub const PSMED_SCALE_DIFFERENCE: u32 = 1;
pub const PSMED_SCALE_RATIO: u32 = 1 << 1;

/// Analysis controls. Start from `psmed_options_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsmedOptions {
    /// Bitwise OR of `PSMED_METHOD_*`.
    pub methods: u32,
    /// Bitwise OR of `PSMED_SCALE_*`.
    pub scales: u32,
    pub folds: usize,
    /// Bootstrap replicates; 0 disables bootstrap intervals.
    pub bootstrap: usize,
    pub level: f64,
    pub seed: u64,
    pub clip_floor: f64,
}

/// One output row. String fields stay valid until the owning results handle is freed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PsmedEstimate {
    pub estimand: *const c_char,
    pub stratum: *const c_char,
    pub scale: *const c_char,
    pub method: *const c_char,
    pub inference: *const c_char,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub b_or_v: usize,
    pub seed: u64,
}

/// Opaque validated dataset.
pub struct PsmedDataset {
    inner: Dataset,
}

/// Opaque table of estimates.
pub struct PsmedResults {
    rows: Vec<EstimateResult>,
    strings: Vec<[CString; 5]>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PsmedStatus {
    match e.class() {
        ErrorClass::Config => PsmedStatus::ConfigError,
        ErrorClass::Data => PsmedStatus::DataError,
        ErrorClass::Estimation => PsmedStatus::EstimationError,
    }
}

fn fail(status: PsmedStatus, msg: &str) -> PsmedStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PsmedStatus) -> PsmedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(PsmedStatus::Panic, "internal panic"),
    }
}

fn check(r: psmed::Result<PsmedStatus>) -> PsmedStatus {
    r.unwrap_or_else(|e| fail(status_of(&e), &e.to_string()))
}

unsafe fn slice<'a, T>(p: *const T, n: usize) -> Option<&'a [T]> {
    if n == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, n))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn psmed_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread; empty when none. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn psmed_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn psmed_options_default() -> PsmedOptions {
    PsmedOptions {
        methods: PSMED_METHOD_MR,
        scales: PSMED_SCALE_DIFFERENCE,
        folds: 5,
        bootstrap: 1000,
        level: 0.95,
        seed: 1,
        clip_floor: psmed::nuisance::Positivity::default().clip_floor,
    }
}

/// Builds a dataset from `n` rows of `p` row-major covariates.
///
/// `levels` is the largest mediator level for categorical mediators and is
/// ignored otherwise.
///
/// # Safety
/// `x` must point to `n * p` doubles; `z`, `d`, `m`, `y` to `n` elements each;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn psmed_dataset_new(
    x: *const f64,
    n: usize,
    p: usize,
    z: *const u8,
    d: *const u8,
    m: *const f64,
    y: *const f64,
    mediator: PsmedMediator,
    levels: u32,
    monotonicity: PsmedMonotonicity,
    out: *mut *mut PsmedDataset,
) -> PsmedStatus {
    guard(|| {
        if out.is_null() {
            return fail(PsmedStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(len) = n.checked_mul(p) else {
            return fail(PsmedStatus::OutOfRange, "n * p overflows");
        };
        let (Some(x), Some(z), Some(d), Some(m), Some(y)) = (slice(x, len), slice(z, n), slice(d, n), slice(m, n), slice(y, n)) else {
            return fail(PsmedStatus::NullPointer, "column pointer is null");
        };
        let kind = match mediator {
            PsmedMediator::Binary => MediatorKind::Binary,
            PsmedMediator::Categorical => MediatorKind::Categorical(levels),
            PsmedMediator::Continuous => MediatorKind::ContinuousGaussian,
        };
        let mode = match monotonicity {
            PsmedMonotonicity::Standard => Monotonicity::Standard,
            PsmedMonotonicity::Strong => Monotonicity::Strong,
        };
        check(Dataset::new(x.to_vec(), p, z.to_vec(), d.to_vec(), m.to_vec(), y.to_vec(), kind, mode).map(|inner| {
            *out = Box::into_raw(Box::new(PsmedDataset { inner }));
            PsmedStatus::Ok
        }))
    })
}

/// Draws `n` units from the built-in four-covariate simulation process.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn psmed_dataset_simulate(n: usize, seed: u64, out: *mut *mut PsmedDataset) -> PsmedStatus {
    guard(|| {
        if out.is_null() {
            return fail(PsmedStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        check(psmed::simulation::simulate(n, seed).map(|inner| {
            *out = Box::into_raw(Box::new(PsmedDataset { inner }));
            PsmedStatus::Ok
        }))
    })
}

/// Number of rows; 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn psmed_dataset_rows(data: *const PsmedDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.n())
}

/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psmed_dataset_free(data: *mut PsmedDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

fn decode(options: &PsmedOptions, data: &Dataset) -> Result<AnalysisOptions, String> {
    let all = [
        (PSMED_METHOD_A, Method::A),
        (PSMED_METHOD_B, Method::B),
        (PSMED_METHOD_C, Method::C),
        (PSMED_METHOD_D, Method::D),
        (PSMED_METHOD_MR, Method::Mr),
        (PSMED_METHOD_NP, Method::Np),
    ];
    if options.methods & !0x3f != 0 || options.scales & !0x3 != 0 {
        return Err("unknown method or scale bit".into());
    }
    let mut o = AnalysisOptions::new(data);
    o.methods = all.iter().filter(|(bit, _)| options.methods & bit != 0).map(|(_, m)| *m).collect();
    o.scales = [(PSMED_SCALE_DIFFERENCE, Scale::Difference), (PSMED_SCALE_RATIO, Scale::RiskRatio)]
        .iter()
        .filter(|(bit, _)| options.scales & bit != 0)
        .map(|(_, s)| *s)
        .collect();
    o.folds = options.folds;
    o.bootstrap = options.bootstrap;
    o.level = options.level;
    o.seed = options.seed;
    o.positivity.clip_floor = options.clip_floor;
    Ok(o)
}

/// Runs the configured estimators; `options` may be null for defaults.
///
/// # Safety
/// `data` must be a live dataset handle, `options` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn psmed_analyze(data: *const PsmedDataset, options: *const PsmedOptions, out: *mut *mut PsmedResults) -> PsmedStatus {
    guard(|| {
        if out.is_null() {
            return fail(PsmedStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(data) = data.as_ref() else {
            return fail(PsmedStatus::NullPointer, "data is null");
        };
        let options = options.as_ref().copied().unwrap_or_else(|| psmed_options_default());
        let opts = match decode(&options, &data.inner) {
            Ok(o) => o,
            Err(msg) => return fail(PsmedStatus::ConfigError, &msg),
        };
        check(analyze(&data.inner, &opts).map(|a| {
            let strings = a
                .results
                .iter()
                .map(|r| {
                    let c = |s: &str| CString::new(s).unwrap_or_default();
                    [c(&r.estimand), c(&r.stratum), c(&r.scale), c(r.method.as_str()), c(r.inference.as_str())]
                })
                .collect();
            *out = Box::into_raw(Box::new(PsmedResults { rows: a.results, strings }));
            PsmedStatus::Ok
        }))
    })
}

/// Number of rows; 0 for a null handle.
///
/// # Safety
/// `results` must be null or a live results handle.
#[no_mangle]
pub unsafe extern "C" fn psmed_results_len(results: *const PsmedResults) -> usize {
    results.as_ref().map_or(0, |r| r.rows.len())
}

/// Copies row `index` into `out`.
///
/// # Safety
/// `results` must be a live results handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn psmed_results_get(results: *const PsmedResults, index: usize, out: *mut PsmedEstimate) -> PsmedStatus {
    guard(|| {
        let (Some(res), false) = (results.as_ref(), out.is_null()) else {
            return fail(PsmedStatus::NullPointer, "results or out is null");
        };
        let (Some(r), Some(s)) = (res.rows.get(index), res.strings.get(index)) else {
            return fail(PsmedStatus::OutOfRange, &format!("row {index} of {}", res.rows.len()));
        };
        *out = PsmedEstimate {
            estimand: s[0].as_ptr(),
            stratum: s[1].as_ptr(),
            scale: s[2].as_ptr(),
            method: s[3].as_ptr(),
            inference: s[4].as_ptr(),
            point: r.point,
            se: r.se,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            b_or_v: r.b_or_v,
            seed: r.seed,
        };
        PsmedStatus::Ok
    })
}

/// # Safety
/// `results` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psmed_results_free(results: *mut PsmedResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}

/// Certifies a discrete fixture file, or the shipped reference fixture when
/// `path` is null. Returns `OracleFailed` when any identity fails.
///
/// # Safety
/// `path` must be null or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn psmed_oracle_certify(path: *const c_char) -> PsmedStatus {
    guard(|| {
        let dgp = if path.is_null() {
            Ok(reference_fixture())
        } else {
            match CStr::from_ptr(path).to_str() {
                Ok(p) => DiscreteDgp::load(Path::new(p)),
                Err(_) => return fail(PsmedStatus::ConfigError, "path is not UTF-8"),
            }
        };
        check(dgp.and_then(|d| certify(&d)).map(|report| {
            if report.passed() {
                PsmedStatus::Ok
            } else {
                fail(PsmedStatus::OracleFailed, &report.summary())
            }
        }))
    })
}
