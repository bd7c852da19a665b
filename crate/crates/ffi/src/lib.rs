//! C ABI for twistlab.
//!
//! Every fallible function returns a [`TlStatus`]; on failure the message is
//! available from [`tl_last_error`] on the same thread. Handles are opaque and
//! must be released with their `_free` function. Strings returned through
//! `char **` out-parameters are owned by the caller and released with
//! [`tl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use num_bigint::BigInt;
use twistlab::badness::{self, BadnessProfile};
use twistlab::ktv::{self, CantorTree};
use twistlab::metric::{self, RegionFamily};
use twistlab::psi::ApproxFunction;
use twistlab::realnum::{parse_pair, RealSource, TorusPoint};
use twistlab::torusgeo::{union_measure, RectCollection, TorusRect};
use twistlab::{Error, Weights};

/// Status codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidParameter = 4,
    Precision = 5,
    OutOfDomain = 6,
    Budget = 7,
    Invariant = 8,
    BadnessViolation = 9,
    IndexOutOfRange = 10,
    Panic = 11,
    Other = 12,
}

/// Region families for [`tl_region_measure`] and [`tl_metric_run_json`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TlFamily {
    Interval = 0,
    SupNorm = 1,
    Multiplicative = 2,
}

/// A real number source (rational, quadratic surd, continued fraction, ...).
pub struct TlRealSource(RealSource);

/// A finished weighted badness profile.
pub struct TlProfile(BadnessProfile);

/// A Cantor tree together with its box-dimension estimate.
pub struct TlCantorTree {
    tree: CantorTree,
    slope: f64,
    floor: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TlStatus {
    match e {
        Error::Parse(_) | Error::Config(_) => TlStatus::Parse,
        Error::InvalidParameter(_) | Error::NoWitness(_) => TlStatus::InvalidParameter,
        Error::InsufficientPrecision(_) | Error::PrecisionExhausted(_) => TlStatus::Precision,
        Error::OutOfDomain(_) => TlStatus::OutOfDomain,
        Error::BudgetExhausted(_) => TlStatus::Budget,
        Error::Invariant(_) => TlStatus::Invariant,
        Error::BadnessViolation { .. } => TlStatus::BadnessViolation,
        _ => TlStatus::Other,
    }
}

struct Fail(TlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TlStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> TlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TlStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            TlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TlStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(TlStatus::Other, "string contains NUL".into()))
}

fn family(f: TlFamily, i: f64, j: f64) -> Result<RegionFamily, Fail> {
    Ok(match f {
        TlFamily::Interval => RegionFamily::Interval,
        TlFamily::SupNorm => RegionFamily::SupNorm {
            weights: Weights::new(i, j)?,
        },
        TlFamily::Multiplicative => RegionFamily::Multiplicative,
    })
}

/// Message of the last failed call on this thread (empty after a success).
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn tl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn tl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a real source such as `quad:(0+1*sqrt(2))/1` or `rational:3/7`.
///
/// # Safety
/// `spec` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tl_real_source_parse(spec: *const c_char, out_src: *mut *mut TlRealSource) -> TlStatus {
    guard(|| {
        let o = out(out_src, "out")?;
        let src: RealSource = str_arg(spec, "spec")?.parse()?;
        *o = Box::into_raw(Box::new(TlRealSource(src)));
        Ok(())
    })
}

/// # Safety
/// `src` must come from [`tl_real_source_parse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn tl_real_source_free(src: *mut TlRealSource) {
    if !src.is_null() {
        drop(Box::from_raw(src));
    }
}

/// Canonical serialization of a source (free with [`tl_string_free`]).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_real_source_to_string(src: *const TlRealSource, out_str: *mut *mut c_char) -> TlStatus {
    guard(|| {
        let s = handle(src, "src")?;
        let o = out(out_str, "out")?;
        *o = c_string(s.0.to_string())?;
        Ok(())
    })
}

/// `{q x}` to `bits` bits: value and certified absolute error.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_real_source_frac_mult(
    src: *const TlRealSource,
    q: i64,
    bits: u32,
    out_value: *mut f64,
    out_error: *mut f64,
) -> TlStatus {
    guard(|| {
        let s = handle(src, "src")?;
        let v = out(out_value, "out_value")?;
        let e = out(out_error, "out_error")?;
        let c = s.0.frac_mult(&BigInt::from(q), bits)?;
        *v = c.to_f64();
        *e = c.error_bound();
        Ok(())
    })
}

/// `||q x||` to `bits` bits: value and certified absolute error.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_real_source_dist(
    src: *const TlRealSource,
    q: i64,
    bits: u32,
    out_value: *mut f64,
    out_error: *mut f64,
) -> TlStatus {
    guard(|| {
        let s = handle(src, "src")?;
        let v = out(out_value, "out_value")?;
        let e = out(out_error, "out_error")?;
        let c = s.0.dist_mult(&BigInt::from(q), bits)?;
        *v = c.to_f64();
        *e = c.error_bound();
        Ok(())
    })
}

/// Weighted badness profile of the pair `x_spec` (two sources, comma-separated).
///
/// # Safety
/// `x_spec` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tl_profile_run(
    x_spec: *const c_char,
    i: f64,
    j: f64,
    limit: u64,
    out_profile: *mut *mut TlProfile,
) -> TlStatus {
    guard(|| {
        let o = out(out_profile, "out")?;
        let x = parse_pair(str_arg(x_spec, "x_spec")?)?;
        let p = badness::profile(&x, Weights::new(i, j)?, limit)?;
        *o = Box::into_raw(Box::new(TlProfile(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must come from [`tl_profile_run`] or be null.
#[no_mangle]
pub unsafe extern "C" fn tl_profile_free(p: *mut TlProfile) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Estimated badness constant, its error bound and the minimizing `q`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_profile_constant(
    p: *const TlProfile,
    out_c: *mut f64,
    out_error: *mut f64,
    out_argmin: *mut u64,
) -> TlStatus {
    guard(|| {
        let p = handle(p, "profile")?;
        *out(out_c, "out_c")? = p.0.c_estimate;
        *out(out_error, "out_error")? = p.0.c_error;
        *out(out_argmin, "out_argmin")? = p.0.argmin;
        Ok(())
    })
}

/// Number of record minima.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_profile_record_count(p: *const TlProfile, out_count: *mut usize) -> TlStatus {
    guard(|| {
        *out(out_count, "out_count")? = handle(p, "profile")?.0.records.len();
        Ok(())
    })
}

/// Record `index` as `(q, value)`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_profile_record(
    p: *const TlProfile,
    index: usize,
    out_q: *mut u64,
    out_value: *mut f64,
) -> TlStatus {
    guard(|| {
        let p = handle(p, "profile")?;
        let r = p.0.records.get(index).ok_or_else(|| {
            Fail(
                TlStatus::IndexOutOfRange,
                format!("record {index} of {}", p.0.records.len()),
            )
        })?;
        *out(out_q, "out_q")? = r.q;
        *out(out_value, "out_value")? = r.value;
        Ok(())
    })
}

/// Area of a union of torus rectangles given as `n` rows
/// `(center_x, center_y, half_width_x, half_width_y)`.
///
/// # Safety
/// `rects` must point to `4 n` doubles (may be null when `n == 0`).
#[no_mangle]
pub unsafe extern "C" fn tl_union_measure(
    rects: *const f64,
    n: usize,
    out_value: *mut f64,
    out_error: *mut f64,
) -> TlStatus {
    guard(|| {
        let v = out(out_value, "out_value")?;
        let e = out(out_error, "out_error")?;
        let data: &[f64] = if n == 0 {
            &[]
        } else if rects.is_null() {
            return Err(null("rects"));
        } else {
            std::slice::from_raw_parts(rects, 4 * n)
        };
        let list = data
            .chunks_exact(4)
            .map(|r| TorusRect::new(TorusPoint::new(r[0], r[1], 0.0), [r[2], r[3]], 0.0, None))
            .collect::<Result<Vec<_>, _>>()?;
        let m = union_measure(&RectCollection::new(list, "ffi"));
        *v = m.value;
        *e = m.error;
        Ok(())
    })
}

/// Closed-form measure of a region with parameter `t`
/// (`i`, `j` are read only for the sup-norm family).
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tl_region_measure(f: TlFamily, i: f64, j: f64, t: f64, out_value: *mut f64) -> TlStatus {
    guard(|| {
        let o = out(out_value, "out_value")?;
        *o = family(f, i, j)?.measure_at(t)?;
        Ok(())
    })
}

/// Monte-Carlo run; the report JSON is returned through `out_json`
/// (free with [`tl_string_free`]).
///
/// # Safety
/// `psi_spec` must be a NUL-terminated string; `out_json` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn tl_metric_run_json(
    f: TlFamily,
    i: f64,
    j: f64,
    psi_spec: *const c_char,
    n: u64,
    q: u64,
    seed: u64,
    out_json: *mut *mut c_char,
) -> TlStatus {
    guard(|| {
        let o = out(out_json, "out_json")?;
        let psi: ApproxFunction = str_arg(psi_spec, "psi_spec")?.parse()?;
        let run = metric::run_mc(&family(f, i, j)?, &psi, n, q, seed)?;
        let json = serde_json::to_string(&run).map_err(Error::from)?;
        *o = c_string(json)?;
        Ok(())
    })
}

/// Builds a Cantor tree for the pair `x_spec` with badness constant `c`.
///
/// # Safety
/// `x_spec` must be a NUL-terminated string; `out_tree` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tl_cantor_build(
    x_spec: *const c_char,
    i: f64,
    j: f64,
    k: u64,
    depth: usize,
    c: f64,
    out_tree: *mut *mut TlCantorTree,
) -> TlStatus {
    guard(|| {
        let o = out(out_tree, "out_tree")?;
        let x = parse_pair(str_arg(x_spec, "x_spec")?)?;
        let params = ktv::KtvParams::new(k, Weights::new(i, j)?, c, "given", depth)?;
        let tree = ktv::build_tree(&x, &params)?;
        tree.check_structure()?;
        let dim = ktv::box_dimension(&tree)?;
        *o = Box::into_raw(Box::new(TlCantorTree {
            tree,
            slope: dim.slope,
            floor: dim.analytic_floor,
        }));
        Ok(())
    })
}

/// # Safety
/// `t` must come from [`tl_cantor_build`] or be null.
#[no_mangle]
pub unsafe extern "C" fn tl_cantor_free(t: *mut TlCantorTree) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of surviving nodes at `level` (0 is the root).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_cantor_level_size(t: *const TlCantorTree, level: usize, out_count: *mut usize) -> TlStatus {
    guard(|| {
        let t = handle(t, "tree")?;
        let lv = t.tree.levels.get(level).ok_or_else(|| {
            Fail(
                TlStatus::IndexOutOfRange,
                format!("level {level} beyond depth {}", t.tree.depth()),
            )
        })?;
        *out(out_count, "out_count")? = lv.len();
        Ok(())
    })
}

/// Box-dimension slope and the analytic floor.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_cantor_dimension(
    t: *const TlCantorTree,
    out_slope: *mut f64,
    out_floor: *mut f64,
) -> TlStatus {
    guard(|| {
        let t = handle(t, "tree")?;
        *out(out_slope, "out_slope")? = t.slope;
        *out(out_floor, "out_floor")? = t.floor;
        Ok(())
    })
}

/// Theta and the number of pruned children.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_cantor_info(t: *const TlCantorTree, out_theta: *mut f64, out_pruned: *mut usize) -> TlStatus {
    guard(|| {
        let t = handle(t, "tree")?;
        *out(out_theta, "out_theta")? = t.tree.params.theta;
        *out(out_pruned, "out_pruned")? = t.tree.prune_log.len();
        Ok(())
    })
}
