//! Exercises the C ABI exactly as a foreign caller would: raw buffers,
//! status codes, opaque handles.

use bfn_capi::*;
use std::ffi::CStr;
use std::ptr;

fn rotation_plant() -> *mut BfnLti {
    // 2-state rotation, 1 output, 1 source column.
    let a = [0.0, 1.0, -1.0, 0.0];
    let b = [0.0, 1.0];
    let c = [1.0, 0.0];
    let mut handle: *mut BfnLti = ptr::null_mut();
    let status = unsafe {
        bfn_lti_new(
            2,
            1,
            1,
            a.as_ptr(),
            b.as_ptr(),
            c.as_ptr(),
            ptr::null(),
            ptr::null(),
            true,
            &mut handle,
        )
    };
    assert_eq!(status, BfnStatus::Ok);
    assert!(!handle.is_null());
    handle
}

#[test]
fn version_and_error_message_are_c_strings() {
    let v = unsafe { CStr::from_ptr(bfn_version()) }.to_str().unwrap();
    assert!(v.starts_with("0."));
    // trigger an error, then read the message
    let status = unsafe {
        bfn_lti_new(
            2,
            1,
            1,
            ptr::null(),
            ptr::null(),
            ptr::null(),
            ptr::null(),
            ptr::null(),
            false,
            ptr::null_mut(),
        )
    };
    assert_eq!(status, BfnStatus::NullPointer);
    let msg = unsafe { CStr::from_ptr(bfn_last_error_message()) }
        .to_str()
        .unwrap();
    assert!(!msg.is_empty());
}

#[test]
fn rejects_non_skew_generator_when_asked() {
    let a = [0.1, 1.0, -1.0, 0.0];
    let b = [0.0, 1.0];
    let c = [1.0, 0.0];
    let mut handle: *mut BfnLti = ptr::null_mut();
    let status = unsafe {
        bfn_lti_new(
            2,
            1,
            1,
            a.as_ptr(),
            b.as_ptr(),
            c.as_ptr(),
            ptr::null(),
            ptr::null(),
            true,
            &mut handle,
        )
    };
    assert_eq!(status, BfnStatus::InvalidArgument);
    assert!(handle.is_null());
}

#[test]
fn simulate_then_estimate_round_trip() {
    let sys = rotation_plant();
    let n_steps = 400usize;
    let t_final = 4.0;
    let z0 = [0.7, -0.3];
    let theta = [0.9];
    let mut y = vec![0.0f64; n_steps + 1];
    let status = unsafe {
        bfn_lti_simulate(
            sys,
            t_final,
            n_steps,
            z0.as_ptr(),
            theta.as_ptr(),
            y.as_mut_ptr(),
        )
    };
    assert_eq!(status, BfnStatus::Ok);
    assert!((y[0] - 0.7).abs() < 1e-14);

    // Oracle and iterative estimates from the clean record agree with the
    // truth and with each other.
    let theta0 = [0.0];
    let mut zeta_oracle = [0.0f64; 2];
    let mut theta_oracle = [0.0f64; 1];
    let status = unsafe {
        bfn_oracle_minimize(
            sys,
            t_final,
            n_steps,
            y.as_ptr(),
            0.5,
            theta0.as_ptr(),
            1e-10,
            zeta_oracle.as_mut_ptr(),
            theta_oracle.as_mut_ptr(),
        )
    };
    assert_eq!(status, BfnStatus::Ok);
    assert!((zeta_oracle[0] - z0[0]).abs() < 1e-6);
    assert!((theta_oracle[0] - theta[0]).abs() < 1e-6);

    let mut zeta_it = [0.0f64; 2];
    let mut theta_it = [0.0f64; 1];
    let mut iters = 0usize;
    let status = unsafe {
        bfn_linear_estimate(
            sys,
            t_final,
            n_steps,
            y.as_ptr(),
            0.5,
            theta0.as_ptr(),
            1e-10,
            200,
            1e-12,
            zeta_it.as_mut_ptr(),
            theta_it.as_mut_ptr(),
            &mut iters,
        )
    };
    assert_eq!(status, BfnStatus::Ok);
    assert!(iters > 0 && iters <= 200);
    assert!((zeta_it[0] - zeta_oracle[0]).abs() < 1e-7);
    assert!((zeta_it[1] - zeta_oracle[1]).abs() < 1e-7);
    assert!((theta_it[0] - theta_oracle[0]).abs() < 1e-7);

    unsafe { bfn_lti_free(sys) };
}

#[test]
fn oscillator_sweep_shows_feedback_gain() {
    let gains = [0.0, 1.0];
    let mut errs = [0.0f64; 2];
    let status =
        unsafe { bfn_oscillator_sweep(5, gains.as_ptr(), gains.len(), false, errs.as_mut_ptr()) };
    assert_eq!(status, BfnStatus::Ok);
    assert!(errs[1] < errs[0], "{errs:?}");
}

#[test]
fn wave_run_reports_error_triples() {
    let mut out = [0.0f64; 6];
    let status = unsafe { bfn_wave_run(3, 2, 2.0, 20, 2.0, 2.0e-3, 0.1, out.as_mut_ptr()) };
    assert_eq!(status, BfnStatus::Ok);
    assert!(out.iter().all(|v| v.is_finite() && *v >= 0.0));
    // the second sweep improves the parameter estimate
    assert!(out[3] <= out[0]);
}

#[test]
fn verify_single_suite_via_capi() {
    let mut passed = false;
    let mut json: *mut std::ffi::c_char = ptr::null_mut();
    let only = std::ffi::CString::new("spectral-radius").unwrap();
    let status = unsafe { bfn_verify(0, only.as_ptr(), &mut passed, &mut json) };
    assert_eq!(status, BfnStatus::Ok);
    assert!(passed);
    let text = unsafe { CStr::from_ptr(json) }
        .to_str()
        .unwrap()
        .to_string();
    assert!(text.contains("spectral-radius"));
    unsafe { bfn_string_free(json) };
}

#[test]
fn generated_header_exports_the_surface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/bfn.h"))
        .expect("cbindgen header is generated at build time");
    for symbol in [
        "bfn_lti_new",
        "bfn_lti_free",
        "bfn_lti_simulate",
        "bfn_oracle_minimize",
        "bfn_linear_estimate",
        "bfn_oscillator_sweep",
        "bfn_wave_run",
        "bfn_verify",
        "bfn_last_error_message",
        "BfnStatus",
    ] {
        assert!(header.contains(symbol), "missing {symbol}");
    }
}
