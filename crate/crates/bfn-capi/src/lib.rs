//! C ABI for the bfn estimation library.
//!
//! Conventions: every function returns a [`BfnStatus`]; on any non-OK status
//! a thread-local message is available through [`bfn_last_error_message`].
//! Matrices cross the boundary as row-major `f64` buffers, trajectories as
//! `(n_steps + 1) x dim` row-major buffers. Handles are opaque and must be
//! released with their matching `_free` function.

use bfn::experiments::{oscillator, wave};
use bfn::linear::{oracle_minimize, run_linear, CostSpec, GainSchedule, StopRule};
use bfn::model::{LtiSystem, SourceOperator};
use bfn::space::InnerProductSpace;
use bfn::verify::{run_verification, Fault, VerifyConfig};
use bfn::TimeGrid;
use nalgebra::{DMatrix, DVector};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

/// Status codes returned by every C-ABI entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    StepFailure = 3,
    NonIdentifiable = 4,
    Instability = 5,
    Io = 6,
    Unknown = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(cleaned).unwrap_or_default();
    });
}

fn status_of(err: &bfn::Error) -> BfnStatus {
    match err {
        bfn::Error::StepFailure { .. } => BfnStatus::StepFailure,
        bfn::Error::NonIdentifiable { .. } => BfnStatus::NonIdentifiable,
        bfn::Error::Instability { .. } => BfnStatus::Instability,
        bfn::Error::Io(_) => BfnStatus::Io,
        _ => BfnStatus::InvalidArgument,
    }
}

fn fail(err: bfn::Error) -> BfnStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn fail_msg(status: BfnStatus, msg: &str) -> BfnStatus {
    set_error(msg);
    status
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bfn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn bfn_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be a pointer previously returned by a `bfn_*` function that
/// documents this deallocator, and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bfn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opaque linear plant handle.
pub struct BfnLti {
    sys: LtiSystem,
}

unsafe fn slice_arg<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

unsafe fn matrix_arg(ptr: *const f64, rows: usize, cols: usize) -> Option<DMatrix<f64>> {
    slice_arg(ptr, rows * cols).map(|s| DMatrix::from_row_slice(rows, cols, s))
}

/// Builds a linear plant `dz/dt = A z + B theta`, `y = C z` with optional
/// SPD state/output Gram matrices (`NULL` selects the identity). Row-major
/// buffers: `a` is `n x n`, `b` is `n x p`, `c` is `m x n`, `g_x` is
/// `n x n`, `g_y` is `m x m`. With `require_skew` nonzero, construction
/// fails unless `A` is skew-adjoint in the state Gram.
///
/// # Safety
/// All non-NULL pointers must reference buffers of the documented sizes;
/// `out` must be a valid location to store the handle.
#[no_mangle]
pub unsafe extern "C" fn bfn_lti_new(
    n: usize,
    m: usize,
    p: usize,
    a: *const f64,
    b: *const f64,
    c: *const f64,
    g_x: *const f64,
    g_y: *const f64,
    require_skew: bool,
    out: *mut *mut BfnLti,
) -> BfnStatus {
    if out.is_null() {
        return fail_msg(BfnStatus::NullPointer, "out handle is NULL");
    }
    let (Some(a), Some(b), Some(c)) = (
        matrix_arg(a, n, n),
        matrix_arg(b, n, p),
        matrix_arg(c, m, n),
    ) else {
        return fail_msg(BfnStatus::NullPointer, "a, b and c must be non-NULL");
    };
    let g_x = match matrix_arg(g_x, n, n) {
        Some(mat) => match InnerProductSpace::new(mat) {
            Ok(s) => s,
            Err(e) => return fail(e),
        },
        None => InnerProductSpace::standard(n),
    };
    let g_y_space = match matrix_arg(g_y, m, m) {
        Some(mat) => match InnerProductSpace::new(mat) {
            Ok(s) => s,
            Err(e) => return fail(e),
        },
        None => InnerProductSpace::standard(m),
    };
    match LtiSystem::new(
        a,
        SourceOperator::Constant(b),
        c,
        g_x,
        g_y_space,
        require_skew,
    ) {
        Ok(sys) => {
            *out = Box::into_raw(Box::new(BfnLti { sys }));
            BfnStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Releases a plant handle.
///
/// # Safety
/// `sys` must come from [`bfn_lti_new`] and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bfn_lti_free(sys: *mut BfnLti) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Simulates the plant from `z0` with parameter `theta` on a uniform grid
/// and writes the noise-free outputs, row-major `(n_steps + 1) x m`.
///
/// # Safety
/// `sys` must be a live handle; `z0` has length `n`, `theta` length `p`,
/// `y_out` room for `(n_steps + 1) * m` doubles.
#[no_mangle]
pub unsafe extern "C" fn bfn_lti_simulate(
    sys: *const BfnLti,
    t_final: f64,
    n_steps: usize,
    z0: *const f64,
    theta: *const f64,
    y_out: *mut f64,
) -> BfnStatus {
    let Some(handle) = sys.as_ref() else {
        return fail_msg(BfnStatus::NullPointer, "sys is NULL");
    };
    let n = handle.sys.state_dim();
    let m = handle.sys.output_dim();
    let p = handle.sys.param_dim();
    let (Some(z0), Some(theta)) = (slice_arg(z0, n), slice_arg(theta, p)) else {
        return fail_msg(BfnStatus::NullPointer, "z0 and theta must be non-NULL");
    };
    if y_out.is_null() {
        return fail_msg(BfnStatus::NullPointer, "y_out is NULL");
    }
    let grid = match TimeGrid::new(t_final, n_steps) {
        Ok(g) => g,
        Err(e) => return fail(e),
    };
    let traj = match handle.sys.simulate(
        &DVector::from_column_slice(z0),
        &DVector::from_column_slice(theta),
        None,
        None,
        &grid,
    ) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let out = std::slice::from_raw_parts_mut(y_out, (n_steps + 1) * m);
    for (i, y) in traj.outputs.iter().enumerate() {
        out[i * m..(i + 1) * m].copy_from_slice(y.as_slice());
    }
    BfnStatus::Ok
}

unsafe fn measurements_arg(y: *const f64, n_nodes: usize, m: usize) -> Option<Vec<DVector<f64>>> {
    slice_arg(y, n_nodes * m).map(|s| {
        (0..n_nodes)
            .map(|i| DVector::from_column_slice(&s[i * m..(i + 1) * m]))
            .collect()
    })
}

unsafe fn linear_problem(
    handle: &BfnLti,
    t_final: f64,
    n_steps: usize,
    y: *const f64,
    kappa: f64,
    theta0: *const f64,
    u0_scale: f64,
) -> Result<(CostSpec, TimeGrid), BfnStatus> {
    let p = handle.sys.param_dim();
    let m = handle.sys.output_dim();
    let grid = TimeGrid::new(t_final, n_steps).map_err(fail)?;
    let y = measurements_arg(y, grid.n_nodes(), m)
        .ok_or_else(|| fail_msg(BfnStatus::NullPointer, "y is NULL"))?;
    let theta0 = slice_arg(theta0, p)
        .map(DVector::from_column_slice)
        .unwrap_or_else(|| DVector::zeros(p));
    if u0_scale < 0.0 {
        return Err(fail_msg(
            BfnStatus::InvalidArgument,
            "u0_scale must be nonnegative",
        ));
    }
    let spec = CostSpec::new(
        theta0,
        DMatrix::identity(p, p) * u0_scale,
        u0_scale,
        y,
        kappa,
        InnerProductSpace::standard(p),
    )
    .map_err(fail)?;
    Ok((spec, grid))
}

unsafe fn write_vec(ptr: *mut f64, v: &DVector<f64>) {
    if !ptr.is_null() {
        std::slice::from_raw_parts_mut(ptr, v.len()).copy_from_slice(v.as_slice());
    }
}

/// Solves the regularized output-error problem exactly (stacked least
/// squares): minimizes
/// `u0_scale |xi - theta0|^2 + int |y - C z[zeta, xi]|^2` over the initial
/// state and parameter, with observer gain `kappa`. Writes the minimizer
/// into `zeta_out` (length `n`) and `theta_out` (length `p`).
///
/// # Safety
/// Buffer contracts as in [`bfn_lti_simulate`]; `y` is row-major
/// `(n_steps + 1) x m`.
#[no_mangle]
pub unsafe extern "C" fn bfn_oracle_minimize(
    sys: *const BfnLti,
    t_final: f64,
    n_steps: usize,
    y: *const f64,
    kappa: f64,
    theta0: *const f64,
    u0_scale: f64,
    zeta_out: *mut f64,
    theta_out: *mut f64,
) -> BfnStatus {
    let Some(handle) = sys.as_ref() else {
        return fail_msg(BfnStatus::NullPointer, "sys is NULL");
    };
    match linear_problem(handle, t_final, n_steps, y, kappa, theta0, u0_scale) {
        Ok((spec, grid)) => match oracle_minimize(&spec, &handle.sys, &grid) {
            Ok(sol) => {
                write_vec(zeta_out, &sol.zeta);
                write_vec(theta_out, &sol.theta);
                BfnStatus::Ok
            }
            Err(e) => fail(e),
        },
        Err(s) => s,
    }
}

/// Runs the joint BFN + Gauss-Newton iteration with constant gain `kappa`
/// from a zero initial guess, stopping at `tol` (combined step norm) or
/// `max_iters`. Writes the final estimates and, when `iters_out` is
/// non-NULL, the number of sweeps executed.
///
/// # Safety
/// Buffer contracts as in [`bfn_oracle_minimize`].
#[no_mangle]
pub unsafe extern "C" fn bfn_linear_estimate(
    sys: *const BfnLti,
    t_final: f64,
    n_steps: usize,
    y: *const f64,
    kappa: f64,
    theta0: *const f64,
    u0_scale: f64,
    max_iters: usize,
    tol: f64,
    zeta_out: *mut f64,
    theta_out: *mut f64,
    iters_out: *mut usize,
) -> BfnStatus {
    let Some(handle) = sys.as_ref() else {
        return fail_msg(BfnStatus::NullPointer, "sys is NULL");
    };
    match linear_problem(handle, t_final, n_steps, y, kappa, theta0, u0_scale) {
        Ok((spec, grid)) => {
            let init = DVector::zeros(handle.sys.state_dim());
            match run_linear(
                &spec,
                &handle.sys,
                &GainSchedule::Constant(kappa),
                &StopRule { max_iters, tol },
                &grid,
                &init,
                None,
            ) {
                Ok((end, history)) => {
                    write_vec(zeta_out, &end.zeta_hat);
                    write_vec(theta_out, &end.theta_hat);
                    if !iters_out.is_null() {
                        *iters_out = history.len();
                    }
                    BfnStatus::Ok
                }
                Err(e) => fail(e),
            }
        }
        Err(s) => s,
    }
}

/// Oscillator source-estimation sweep: for each gain, the Euclidean distance
/// between the minimizing source coefficients and the truth is written into
/// `err_out` (length `n_gains`).
///
/// # Safety
/// `gains` and `err_out` must reference `n_gains` doubles.
#[no_mangle]
pub unsafe extern "C" fn bfn_oscillator_sweep(
    seed: u64,
    gains: *const f64,
    n_gains: usize,
    with_noise: bool,
    err_out: *mut f64,
) -> BfnStatus {
    let Some(gains) = slice_arg(gains, n_gains) else {
        return fail_msg(BfnStatus::NullPointer, "gains is NULL");
    };
    if err_out.is_null() {
        return fail_msg(BfnStatus::NullPointer, "err_out is NULL");
    }
    match oscillator::run_oscillator_sweep(seed, gains, with_noise) {
        Ok(rows) => {
            let out = std::slice::from_raw_parts_mut(err_out, n_gains);
            for (slot, row) in out.iter_mut().zip(rows.iter()) {
                *slot = row.err;
            }
            BfnStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Wave-equation inverse potential run. Writes one `(param, displacement,
/// velocity)` error triple per sweep, row-major `n_iters x 3`.
///
/// # Safety
/// `errors_out` must reference `3 * n_iters` doubles.
#[no_mangle]
pub unsafe extern "C" fn bfn_wave_run(
    seed: u64,
    n_iters: usize,
    kappa: f64,
    mesh_elems: usize,
    t_final: f64,
    dt: f64,
    noise_scale: f64,
    errors_out: *mut f64,
) -> BfnStatus {
    if errors_out.is_null() {
        return fail_msg(BfnStatus::NullPointer, "errors_out is NULL");
    }
    if dt <= 0.0 || dt.is_nan() {
        return fail_msg(BfnStatus::InvalidArgument, "dt must be positive");
    }
    let cfg = wave::WaveExperimentConfig {
        seed,
        n_iters,
        gains: GainSchedule::Constant(kappa),
        mesh_elems,
        t_final,
        n_steps: (t_final / dt).round().max(1.0) as usize,
        noise_scale,
        ..Default::default()
    };
    match wave::run_wave_experiment(&cfg) {
        Ok(rows) => {
            let out = std::slice::from_raw_parts_mut(errors_out, 3 * n_iters);
            for (i, r) in rows.iter().enumerate() {
                out[3 * i] = r.param_err;
                out[3 * i + 1] = r.displ_err;
                out[3 * i + 2] = r.vel_err;
            }
            BfnStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Runs the verification suites (all of them, or the one named by `only`)
/// and stores `1` into `passed_out` when everything held. When `json_out`
/// is non-NULL it receives the full JSON report; release it with
/// [`bfn_string_free`].
///
/// # Safety
/// `only` must be NULL or a NUL-terminated string; out-pointers must be
/// valid when non-NULL.
#[no_mangle]
pub unsafe extern "C" fn bfn_verify(
    seed: u64,
    only: *const c_char,
    passed_out: *mut bool,
    json_out: *mut *mut c_char,
) -> BfnStatus {
    let only = if only.is_null() {
        None
    } else {
        match CStr::from_ptr(only).to_str() {
            Ok(s) => Some(s.to_string()),
            Err(_) => {
                return fail_msg(BfnStatus::InvalidArgument, "only is not valid UTF-8");
            }
        }
    };
    match run_verification(&VerifyConfig {
        seed,
        only,
        fault: Fault::None,
    }) {
        Ok(report) => {
            if !passed_out.is_null() {
                *passed_out = report.passed;
            }
            if !json_out.is_null() {
                *json_out = CString::new(report.to_json())
                    .map(CString::into_raw)
                    .unwrap_or(ptr::null_mut());
            }
            BfnStatus::Ok
        }
        Err(e) => fail(e),
    }
}
