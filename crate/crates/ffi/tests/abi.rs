use std::ffi::{CStr, CString};
use std::ptr;

use pisa_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    unsafe {
        pisa_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn gaussian(seed: u64, heads: usize, len: usize, dim: usize) -> *mut PisaBundle {
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { pisa_bundle_gen_gaussian(seed, heads, len, dim, 1.0, &mut b) }, PisaStatus::Ok);
    b
}

fn opts(variant: PisaVariantCode, sparsity: f64, block: usize) -> PisaRunOptions {
    PisaRunOptions {
        variant,
        sparsity,
        block_size: block,
        ..pisa_run_options_default()
    }
}

fn output(r: *const PisaResult, head: usize) -> Vec<f64> {
    let (mut rows, mut cols) = (0, 0);
    unsafe {
        assert_eq!(pisa_result_shape(r, ptr::null_mut(), &mut rows, &mut cols, ptr::null_mut()), PisaStatus::Ok);
        let mut buf = vec![0.0; rows * cols];
        assert_eq!(pisa_result_output(r, head, buf.as_mut_ptr(), buf.len()), PisaStatus::Ok);
        buf
    }
}

#[test]
fn zero_sparsity_reproduces_dense() {
    let b = gaussian(1, 2, 128, 8);
    unsafe {
        let (mut approx, mut dense) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(pisa_run(b, &opts(PisaVariantCode::Hybrid, 0.0, 16), &mut approx), PisaStatus::Ok);
        assert_eq!(pisa_dense(b, &mut dense), PisaStatus::Ok);
        let mut m = PisaErrorMetrics::default();
        for h in 0..2 {
            assert_eq!(pisa_compare(approx, dense, h, &mut m), PisaStatus::Ok);
            assert!(m.l1_rel < 1e-12, "head {h}: {}", m.l1_rel);
        }
        let mut denom = vec![0.0; 128];
        assert_eq!(pisa_result_denominators(approx, 1, denom.as_mut_ptr(), 128), PisaStatus::Ok);
        assert!(denom.iter().all(|&d| d > 0.0));
        assert_eq!(
            pisa_result_denominators(dense, 0, denom.as_mut_ptr(), 128),
            PisaStatus::InvalidArgument
        );
        pisa_result_free(approx);
        pisa_result_free(dense);
        pisa_bundle_free(b);
    }
}

#[test]
fn streaming_and_reference_agree_through_the_abi() {
    let b = gaussian(2, 1, 256, 16);
    unsafe {
        let (mut r1, mut r2) = (ptr::null_mut(), ptr::null_mut());
        let mut o = opts(PisaVariantCode::Hybrid, 0.75, 16);
        assert_eq!(pisa_run(b, &o, &mut r1), PisaStatus::Ok);
        o.streaming = true;
        assert_eq!(pisa_run(b, &o, &mut r2), PisaStatus::Ok);
        let (a, c) = (output(r1, 0), output(r2, 0));
        let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let err = a.iter().zip(&c).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(err / scale < 1e-10);
        let mut realized = 0.0;
        pisa_result_shape(r2, ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), &mut realized);
        assert_eq!(realized, 0.75);
        pisa_result_free(r1);
        pisa_result_free(r2);
        pisa_bundle_free(b);
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("x.pqkv").to_str().unwrap()).unwrap();
    let b = gaussian(3, 2, 32, 4);
    unsafe {
        assert_eq!(pisa_bundle_write(b, path.as_ptr()), PisaStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(pisa_bundle_read(path.as_ptr(), &mut back), PisaStatus::Ok);
        let (mut h, mut l, mut d) = (0, 0, 0);
        assert_eq!(pisa_bundle_shape(back, &mut h, &mut l, &mut d), PisaStatus::Ok);
        assert_eq!((h, l, d), (2, 32, 4));
        let (mut r1, mut r2) = (ptr::null_mut(), ptr::null_mut());
        pisa_dense(b, &mut r1);
        pisa_dense(back, &mut r2);
        assert_eq!(output(r1, 1), output(r2, 1));
        pisa_result_free(r1);
        pisa_result_free(r2);
        pisa_bundle_free(back);
        pisa_bundle_free(b);
    }
}

#[test]
fn caller_data_is_copied_and_validated() {
    let n = 2 * 3;
    let q: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
    let k = q.clone();
    let v: Vec<f64> = (0..n).map(|i| 1.0 - i as f64).collect();
    unsafe {
        let mut b = ptr::null_mut();
        let st = pisa_bundle_from_data(1, 2, 3, PisaDtypeCode::F64, q.as_ptr(), k.as_ptr(), v.as_ptr(), &mut b);
        assert_eq!(st, PisaStatus::Ok);
        pisa_bundle_free(b);

        let mut bad_v = v.clone();
        bad_v[4] = f64::NAN;
        let mut b = ptr::null_mut();
        let st = pisa_bundle_from_data(1, 2, 3, PisaDtypeCode::F64, q.as_ptr(), k.as_ptr(), bad_v.as_ptr(), &mut b);
        assert_eq!(st, PisaStatus::Validation);
        assert!(b.is_null());
        assert!(last_error().contains("NonFiniteValue"), "{}", last_error());

        let st = pisa_bundle_from_data(1, 2, 3, PisaDtypeCode::F64, ptr::null(), k.as_ptr(), v.as_ptr(), &mut b);
        assert_eq!(st, PisaStatus::NullPointer);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut b = ptr::null_mut();
        let missing = CString::new(dir.path().join("none.pqkv").to_str().unwrap()).unwrap();
        assert_eq!(pisa_bundle_read(missing.as_ptr(), &mut b), PisaStatus::Io);

        let junk = dir.path().join("junk.pqkv");
        std::fs::write(&junk, [0u8; 64]).unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(pisa_bundle_read(junk.as_ptr(), &mut b), PisaStatus::Format);
        assert!(last_error().contains("BadMagic"));

        assert_eq!(pisa_bundle_read(ptr::null(), &mut b), PisaStatus::NullPointer);
        assert_eq!(pisa_bundle_gen_gaussian(0, 1, 0, 4, 1.0, &mut b), PisaStatus::Validation);

        let g = gaussian(0, 1, 100, 4);
        let mut r = ptr::null_mut();
        assert_eq!(pisa_run(g, &opts(PisaVariantCode::Zeroth, 0.5, 64), &mut r), PisaStatus::Validation);
        assert!(last_error().contains("not divisible"), "{}", last_error());
        assert!(r.is_null());

        let mut dense = ptr::null_mut();
        pisa_dense(g, &mut dense);
        let mut small = vec![0.0; 10];
        assert_eq!(pisa_result_output(dense, 0, small.as_mut_ptr(), 10), PisaStatus::InvalidArgument);
        assert_eq!(pisa_result_output(dense, 5, small.as_mut_ptr(), 10), PisaStatus::InvalidArgument);
        pisa_result_free(dense);
        pisa_bundle_free(g);

        pisa_bundle_free(ptr::null_mut());
        pisa_result_free(ptr::null_mut());
    }
}

#[test]
fn error_message_is_truncated_safely() {
    unsafe {
        let mut b = ptr::null_mut();
        pisa_bundle_gen_gaussian(0, 0, 4, 4, 1.0, &mut b);
        let full = pisa_last_error_message(ptr::null_mut(), 0);
        assert!(full > 8);
        let mut buf = [1 as std::ffi::c_char; 5];
        assert_eq!(pisa_last_error_message(buf.as_mut_ptr(), 5), full);
        assert_eq!(buf[4], 0);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_bytes().len(), 4);
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(pisa_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
