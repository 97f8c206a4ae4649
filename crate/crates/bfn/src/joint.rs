//! Shared forward-pass engine for the joint estimation sweeps.
//!
//! One forward pass advances, with a single closed-loop stepper,
//!
//! * the observer state `z` (driven by the node loads `source + K y`),
//! * the parameter sensitivity `Pi` (driven by `B(t)` in the linear case or
//!   by the parameter-direction source `Lambda z` in the bilinear case),
//! * the Gauss-Newton information `U` and moment `xi` accumulators.
//!
//! Accumulators sample step midpoints (`zbar = (z_i + z_{i+1})/2`, weight
//! `dt`). With the implicit-midpoint stepper this makes the Gauss-Newton
//! update the exact minimizer of the discrete cost in the parameter, and the
//! backward sweep exactly consistent with the discrete cost's initial-state
//! gradient, so the discrete optimum is a fixed point at solver precision.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::integrate::Stepper;
use crate::model::BilinearFamily;
use nalgebra::{DMatrix, DVector};

/// Source feeding the sensitivity equation.
pub(crate) enum PiSource<'a> {
    /// `B(t_i)` sampled at grid nodes (linear source estimation).
    Nodes(&'a [DMatrix<f64>]),
    /// Columns `dA_k zbar` of the bilinear parameter-direction map.
    Bilinear(&'a BilinearFamily),
}

pub(crate) struct JointPassOutput {
    /// Observer states at all nodes.
    pub states: Vec<DVector<f64>>,
    /// Sensitivity at the final node.
    pub pi_final: DMatrix<f64>,
    /// `U(T) = U0 + dt * sum_i (C Pibar_i)^T G_Y (C Pibar_i)`.
    pub info: DMatrix<f64>,
    /// `xi(T) = dt * sum_i (C Pibar_i)^T G_Y (ybar_i - C zbar_i)`.
    pub moment: DVector<f64>,
    /// `dt * sum_i |ybar_i - C zbar_i|^2_{G_Y}` (the cost's misfit term).
    pub misfit: f64,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward_joint_pass(
    stepper: &Stepper,
    c: &DMatrix<f64>,
    g_y: &DMatrix<f64>,
    loads: &[DVector<f64>],
    y: &[DVector<f64>],
    zeta: &DVector<f64>,
    pi_source: PiSource<'_>,
    u0_form: &DMatrix<f64>,
    grid: &TimeGrid,
    guard: Option<f64>,
) -> Result<JointPassOutput> {
    let n = stepper.dim();
    let p = u0_form.nrows();
    let dt = grid.dt();
    let n_steps = grid.n_steps();

    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(zeta.clone());
    let mut z = zeta.clone();
    let mut pi = DMatrix::<f64>::zeros(n, p);
    let mut info = u0_form.clone();
    let mut moment = DVector::<f64>::zeros(p);
    let mut misfit = 0.0;

    for i in 0..n_steps {
        let load_mid = (&loads[i] + &loads[i + 1]) * 0.5;
        let z_next = stepper.step(&z, &load_mid);
        if let Some(limit) = guard {
            let norm = z_next.norm();
            if !norm.is_finite() || norm > limit {
                return Err(Error::Instability {
                    norm,
                    limit,
                    node: i + 1,
                });
            }
        }
        let z_mid = (&z + &z_next) * 0.5;

        let s_mid = match &pi_source {
            PiSource::Nodes(bs) => (&bs[i] + &bs[i + 1]) * 0.5,
            PiSource::Bilinear(fam) => fam.lambda_columns(&z_mid),
        };
        let pi_next = stepper.step_matrix(&pi, &s_mid);
        let pi_mid = (&pi + &pi_next) * 0.5;

        let c_pi = c * pi_mid;
        let y_mid = (&y[i] + &y[i + 1]) * 0.5;
        let resid = y_mid - c * z_mid;
        let gy_cpi = g_y * &c_pi;
        info += c_pi.transpose() * &gy_cpi * dt;
        moment += gy_cpi.transpose() * &resid * dt;
        misfit += resid.dot(&(g_y * &resid)) * dt;

        states.push(z_next.clone());
        z = z_next;
        pi = pi_next;
    }

    Ok(JointPassOutput {
        states,
        pi_final: pi,
        info,
        moment,
        misfit,
    })
}

/// Backward observer propagation with an optional blow-up guard; `loads` are
/// already in backward order (entry `i` belongs to backward node `i`).
pub(crate) fn propagate_guarded(
    stepper: &Stepper,
    init: &DVector<f64>,
    loads: &[DVector<f64>],
    guard: Option<f64>,
) -> Result<Vec<DVector<f64>>> {
    let n_steps = loads.len() - 1;
    let mut states = Vec::with_capacity(loads.len());
    states.push(init.clone());
    let mut z = init.clone();
    for i in 0..n_steps {
        let mid = (&loads[i] + &loads[i + 1]) * 0.5;
        z = stepper.step(&z, &mid);
        if let Some(limit) = guard {
            let norm = z.norm();
            if !norm.is_finite() || norm > limit {
                return Err(Error::Instability {
                    norm,
                    limit,
                    node: i + 1,
                });
            }
        }
        states.push(z.clone());
    }
    Ok(states)
}
