use std::ffi::CString;
use std::path::PathBuf;
use std::ptr;

use ptfh_ffi::*;

fn fixture() -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data/fixture.csv");
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    let n = unsafe { ptfh_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(511)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn transform_round_trip() {
    let mut t = 0.0;
    let mut x = 0.0;
    unsafe {
        assert_eq!(ptfh_dpt(2.5, 0.7, &mut t), PtfhStatus::Ok);
        assert_eq!(ptfh_dpt_inv(t, 0.7, &mut x), PtfhStatus::Ok);
    }
    assert!((x - 2.5).abs() < 1e-12);
    let expected = (2.5f64.powf(0.7) - 2.5f64.powf(-0.7)) / 1.4;
    assert!((t - expected).abs() < 1e-12);
}

#[test]
fn transform_errors_are_reported() {
    let mut t = 0.0;
    let st = unsafe { ptfh_dpt(-1.0, 0.5, &mut t) };
    assert_eq!(st, PtfhStatus::Domain);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { ptfh_dpt(1.0, 0.5, ptr::null_mut()) }, PtfhStatus::NullPointer);
}

#[test]
fn csv_fit_predict_mse() {
    let path = fixture();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { ptfh_dataset_from_csv(path.as_ptr(), &mut ds) }, PtfhStatus::Ok);
    let m = unsafe { ptfh_dataset_len(ds) };
    assert_eq!(m, 47);

    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { ptfh_fit(ds, PtfhModel::Ptfh, 0.0, &mut fit) }, PtfhStatus::Ok);
    let lambda = unsafe { ptfh_fit_lambda(fit) };
    assert!((0.0..=2.0).contains(&lambda));
    assert!(unsafe { ptfh_fit_a(fit) } >= 0.0);
    assert!(unsafe { ptfh_fit_loglik(fit) }.is_finite());

    let mut beta = [0.0; 4];
    let mut nb = 0usize;
    assert_eq!(unsafe { ptfh_fit_beta(fit, beta.as_mut_ptr(), beta.len(), &mut nb) }, PtfhStatus::Ok);
    assert_eq!(nb, 2);
    let mut small = [0.0; 1];
    assert_eq!(
        unsafe { ptfh_fit_beta(fit, small.as_mut_ptr(), small.len(), &mut nb) },
        PtfhStatus::BufferTooSmall
    );

    let mut mu = vec![0.0; m];
    assert_eq!(unsafe { ptfh_predict(ds, fit, 0, mu.as_mut_ptr(), m) }, PtfhStatus::Ok);
    assert!(mu.iter().all(|v| v.is_finite() && *v > 0.0));

    let mut mse = vec![0.0; m];
    let mut again = vec![0.0; m];
    unsafe {
        assert_eq!(ptfh_mse(ds, fit, 20, 1000, 7, PtfhCorrection::Additive, mse.as_mut_ptr(), m), PtfhStatus::Ok);
        assert_eq!(ptfh_mse(ds, fit, 20, 1000, 7, PtfhCorrection::Additive, again.as_mut_ptr(), m), PtfhStatus::Ok);
    }
    assert_eq!(mse, again);
    assert!(mse.iter().all(|v| v.is_finite()));

    unsafe {
        ptfh_fit_free(fit);
        ptfh_dataset_free(ds);
    }
}

#[test]
fn in_memory_dataset_matches_known_fh() {
    let m = 10;
    let y: Vec<f64> = (0..m).map(|i| 1.0 + i as f64 * 0.3 + if i % 2 == 0 { 0.4 } else { -0.4 }).collect();
    let x: Vec<f64> = (0..m).map(|i| i as f64).collect();
    let d = vec![0.5; m];
    let mut ds = ptr::null_mut();
    assert_eq!(
        unsafe { ptfh_dataset_new(m, 1, y.as_ptr(), x.as_ptr(), d.as_ptr(), &mut ds) },
        PtfhStatus::Ok
    );
    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { ptfh_fit(ds, PtfhModel::Fh, 0.0, &mut fit) }, PtfhStatus::Ok);
    assert!(unsafe { ptfh_fit_lambda(fit) }.is_nan());
    unsafe {
        ptfh_fit_free(fit);
        ptfh_dataset_free(ds);
    }
}

#[test]
fn bad_inputs() {
    let mut ds = ptr::null_mut();
    let missing = CString::new("/nonexistent/file.csv").unwrap();
    assert_eq!(unsafe { ptfh_dataset_from_csv(missing.as_ptr(), &mut ds) }, PtfhStatus::Io);
    assert!(ds.is_null());

    let y = [1.0, -2.0];
    let d = [0.5, 0.5];
    let st = unsafe { ptfh_dataset_new(2, 0, y.as_ptr(), ptr::null(), d.as_ptr(), &mut ds) };
    assert_ne!(st, PtfhStatus::Ok);

    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { ptfh_fit(ptr::null(), PtfhModel::Ptfh, 0.0, &mut fit) }, PtfhStatus::NullPointer);
    assert_eq!(unsafe { ptfh_dataset_len(ptr::null()) }, 0);
    unsafe {
        ptfh_dataset_free(ptr::null_mut());
        ptfh_fit_free(ptr::null_mut());
    }
}

#[test]
fn header_is_generated() {
    let h = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/ptfh.h")).unwrap();
    for sym in ["ptfh_fit(", "ptfh_predict(", "ptfh_mse(", "ptfh_dpt_inv(", "PTFH_STATUS_NULL_POINTER", "typedef struct PtfhFit PtfhFit"] {
        assert!(h.contains(sym), "{sym} missing from header");
    }
}
