//! Observability Gramians and spectral bounds.

use crate::error::Result;
use crate::grid::TimeGrid;
use crate::integrate::Stepper;
use crate::space::{min_eig_pair, InnerProductSpace};
use nalgebra::DMatrix;

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Discrete observability Gramian of `(A, C)` over the grid, in the output
/// Gram `G_Y`: `W = dt * sum_i (C Phi_mid,i)^T G_Y (C Phi_mid,i)` with
/// `Phi_mid,i = (Phi_i + Phi_{i+1}) / 2` the midpoint propagators of the
/// implicit-midpoint flow. Midpoint sampling keeps this Gramian identical to
/// the quadratic form the estimator's output-error cost induces on initial
/// states.
pub fn observability_gramian(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    grid: &TimeGrid,
    g_y: &InnerProductSpace,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let stepper = Stepper::new(a, grid.dt())?;
    let mut phi = DMatrix::<f64>::identity(n, n);
    let mut w = DMatrix::<f64>::zeros(n, n);
    let dt = grid.dt();
    for _ in 0..grid.n_steps() {
        let phi_next = stepper.propagator() * &phi;
        let phi_mid = (&phi + &phi_next) * 0.5;
        let cphi = c * phi_mid;
        w += cphi.transpose() * g_y.gram() * cphi * dt;
        phi = phi_next;
    }
    Ok((&w + w.transpose()) * 0.5)
}

/// Largest constant `gamma0 >= 0` with
/// `int_0^T |C e^{At} v|_{G_Y}^2 dt >= gamma0^2 |v|_{G_X}^2` for all `v`,
/// on the discrete flow: the square root of the smallest eigenvalue of the
/// pencil `(W, G_X)`. Zero signals non-observability at this resolution.
pub fn observability_constant(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    grid: &TimeGrid,
    g_x: &InnerProductSpace,
    g_y: &InnerProductSpace,
) -> Result<f64> {
    let w = observability_gramian(a, c, grid, g_y)?;
    Ok(min_eig_pair(&w, g_x).max(0.0).sqrt())
}

/// Spectral radius of the assembled block matrix `[[D, E], [F, G]]` (lhs)
/// together with the perturbation bound
/// `max(rho(D), rho(G)) + sqrt(|E| |F|)` (rhs, operator 2-norms).
/// The contract is `lhs <= rhs + 1e-10`.
pub fn block_spectral_radius_bound(
    d: &DMatrix<f64>,
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> (f64, f64) {
    let n1 = d.nrows();
    let n2 = g.nrows();
    let mut block = DMatrix::<f64>::zeros(n1 + n2, n1 + n2);
    block.view_mut((0, 0), (n1, n1)).copy_from(d);
    block.view_mut((0, n1), (n1, n2)).copy_from(e);
    block.view_mut((n1, 0), (n2, n1)).copy_from(f);
    block.view_mut((n1, n1), (n2, n2)).copy_from(g);
    let lhs = spectral_radius(&block);
    let norm_e = if e.is_empty() {
        0.0
    } else {
        e.singular_values().max()
    };
    let norm_f = if f.is_empty() {
        0.0
    } else {
        f.singular_values().max()
    };
    let rhs = spectral_radius(d).max(spectral_radius(g)) + (norm_e * norm_f).sqrt();
    (lhs, rhs)
}
