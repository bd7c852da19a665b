use std::ffi::{CStr, CString};
use std::ptr;

use twistlab_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tl_last_error()) }.to_string_lossy().into_owned()
}

const PAIR: &str = "quad:(0+1*sqrt(2))/1,quad:(0+1*sqrt(3))/1";

#[test]
fn real_source_roundtrip() {
    let spec = CString::new("quad:(0+1*sqrt(2))/1").unwrap();
    let mut src = ptr::null_mut();
    unsafe {
        assert_eq!(tl_real_source_parse(spec.as_ptr(), &mut src), TlStatus::Ok);
        let (mut v, mut e) = (0.0, 0.0);
        assert_eq!(tl_real_source_frac_mult(src, 5, 80, &mut v, &mut e), TlStatus::Ok);
        assert!((v - (5.0 * 2f64.sqrt()).fract()).abs() < 1e-15);
        assert!(e <= 2f64.powi(-80));
        assert_eq!(tl_real_source_dist(src, 5, 80, &mut v, &mut e), TlStatus::Ok);
        let f = (5.0 * 2f64.sqrt()).fract();
        assert!((v - f.min(1.0 - f)).abs() < 1e-15);
        let mut s = ptr::null_mut();
        assert_eq!(tl_real_source_to_string(src, &mut s), TlStatus::Ok);
        assert_eq!(CStr::from_ptr(s).to_str().unwrap(), "quad:(0+1*sqrt(2))/1");
        tl_string_free(s);
        tl_real_source_free(src);
    }
}

#[test]
fn errors_are_reported() {
    let bad = CString::new("nonsense").unwrap();
    let mut src = ptr::null_mut();
    unsafe {
        assert_eq!(tl_real_source_parse(bad.as_ptr(), &mut src), TlStatus::Parse);
        assert!(src.is_null());
        assert!(last_error().contains("nonsense"));
        assert_eq!(tl_real_source_parse(ptr::null(), &mut src), TlStatus::NullPointer);
        let mut v = 0.0;
        assert_eq!(
            tl_region_measure(TlFamily::Multiplicative, 0.0, 0.0, 0.3, &mut v),
            TlStatus::OutOfDomain
        );
        assert_eq!(tl_region_measure(TlFamily::SupNorm, 0.5, 0.6, 0.01, &mut v), TlStatus::InvalidParameter);
        assert!(last_error().contains("i + j = 1"));
        assert_eq!(tl_region_measure(TlFamily::SupNorm, 0.5, 0.5, 0.01, &mut v), TlStatus::Ok);
        assert!((v - 0.04).abs() < 1e-15);
        assert!(last_error().is_empty());
        // null handles are ignored by the free functions
        tl_real_source_free(ptr::null_mut());
        tl_profile_free(ptr::null_mut());
        tl_cantor_free(ptr::null_mut());
        tl_string_free(ptr::null_mut());
    }
}

#[test]
fn profile_handle() {
    let x = CString::new(PAIR).unwrap();
    let mut p = ptr::null_mut();
    unsafe {
        assert_eq!(tl_profile_run(x.as_ptr(), 0.5, 0.5, 1000, &mut p), TlStatus::Ok);
        let (mut c, mut e, mut q) = (0.0, 0.0, 0u64);
        assert_eq!(tl_profile_constant(p, &mut c, &mut e, &mut q), TlStatus::Ok);
        assert!(c > 0.0 && c < 1.0);
        let mut n = 0usize;
        assert_eq!(tl_profile_record_count(p, &mut n), TlStatus::Ok);
        assert!(n >= 1);
        let (mut rq, mut rv) = (0u64, 0.0);
        assert_eq!(tl_profile_record(p, n - 1, &mut rq, &mut rv), TlStatus::Ok);
        assert_eq!((rq, rv), (q, c));
        assert_eq!(tl_profile_record(p, n, &mut rq, &mut rv), TlStatus::IndexOutOfRange);
        tl_profile_free(p);
    }
}

#[test]
fn union_of_two_squares() {
    // two 0.2 x 0.2 squares overlapping in a 0.1 x 0.2 strip: 0.04 + 0.04 - 0.02
    let rects = [0.5, 0.5, 0.1, 0.1, 0.6, 0.5, 0.1, 0.1];
    let (mut v, mut e) = (0.0, 0.0);
    unsafe {
        assert_eq!(tl_union_measure(rects.as_ptr(), 2, &mut v, &mut e), TlStatus::Ok);
        assert!((v - 0.06).abs() <= e + 1e-15);
        assert_eq!(tl_union_measure(ptr::null(), 0, &mut v, &mut e), TlStatus::Ok);
        assert_eq!(v, 0.0);
        assert_eq!(tl_union_measure(ptr::null(), 1, &mut v, &mut e), TlStatus::NullPointer);
    }
}

#[test]
fn metric_json() {
    let psi = CString::new("pow:C=0.25,s=1").unwrap();
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(
            tl_metric_run_json(TlFamily::Interval, 0.0, 0.0, psi.as_ptr(), 2000, 50, 3, &mut out),
            TlStatus::Ok
        );
        let json: serde_json::Value = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        tl_string_free(out);
        assert_eq!(json["seed"], 3);
        assert_eq!(json["N"], 2000);
        assert!(json["rng"].as_str().unwrap().starts_with("chacha8"));
        assert_eq!(
            tl_metric_run_json(TlFamily::Interval, 0.0, 0.0, psi.as_ptr(), 10, 50, 3, &mut out),
            TlStatus::InvalidParameter
        );
    }
}

#[test]
fn cantor_handle() {
    let x = CString::new(PAIR).unwrap();
    let mut t = ptr::null_mut();
    unsafe {
        assert_eq!(tl_cantor_build(x.as_ptr(), 0.5, 0.5, 64, 2, 0.012, &mut t), TlStatus::Ok);
        let mut n = 0usize;
        assert_eq!(tl_cantor_level_size(t, 0, &mut n), TlStatus::Ok);
        assert_eq!(n, 1);
        assert_eq!(tl_cantor_level_size(t, 1, &mut n), TlStatus::Ok);
        assert!(n >= 14 && n <= 16);
        assert_eq!(tl_cantor_level_size(t, 3, &mut n), TlStatus::IndexOutOfRange);
        let (mut slope, mut floor) = (0.0, 0.0);
        assert_eq!(tl_cantor_dimension(t, &mut slope, &mut floor), TlStatus::Ok);
        assert!(slope >= floor);
        let (mut theta, mut pruned) = (0.0, 0usize);
        assert_eq!(tl_cantor_info(t, &mut theta, &mut pruned), TlStatus::Ok);
        assert!(theta > 0.0);
        tl_cantor_free(t);
        assert_eq!(tl_cantor_build(x.as_ptr(), 0.5, 0.5, 1, 2, 0.012, &mut t), TlStatus::InvalidParameter);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(tl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
