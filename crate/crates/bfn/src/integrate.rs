//! Implicit-midpoint (Cayley / Crank-Nicolson) time stepping.
//!
//! One step of `dz/dt = F z + s(t)` is
//!
//! ```text
//! z' = (I - dt/2 F)^{-1} [ (I + dt/2 F) z + dt * s_mid ]
//! ```
//!
//! with `s_mid` the average of the load at the step endpoints. For a
//! generator that is skew-adjoint in a Gram inner product the homogeneous
//! update is an exact isometry of that norm, and stepping with `-F` exactly
//! inverts stepping with `F`. Both properties are load-exact as long as the
//! backward pass sees the time-reversed load arrays, which is what the
//! back-and-forth sweeps rely on.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Cached one-step update for a fixed generator and step size.
///
/// `propagator` is `R = (I - dt/2 F)^{-1} (I + dt/2 F)` and `injector` is
/// `dt * (I - dt/2 F)^{-1}`, so a step is `z' = R z + injector * s_mid`.
#[derive(Debug, Clone)]
pub struct Stepper {
    propagator: DMatrix<f64>,
    injector: DMatrix<f64>,
}

impl Stepper {
    pub fn new(generator: &DMatrix<f64>, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive and finite, got {dt}"
            )));
        }
        let n = generator.nrows();
        if generator.ncols() != n {
            return Err(Error::dim("stepper generator", n, generator.ncols()));
        }
        let eye = DMatrix::identity(n, n);
        let minus = &eye - generator * (dt / 2.0);
        let plus = &eye + generator * (dt / 2.0);
        let lu = minus.lu();
        if !lu.is_invertible() {
            return Err(Error::StepFailure {
                context: format!("{n}x{n} generator"),
            });
        }
        let propagator = lu.solve(&plus).ok_or_else(|| Error::StepFailure {
            context: format!("{n}x{n} generator"),
        })?;
        let injector = lu.solve(&(eye * dt)).ok_or_else(|| Error::StepFailure {
            context: format!("{n}x{n} generator"),
        })?;
        Ok(Stepper {
            propagator,
            injector,
        })
    }

    pub fn dim(&self) -> usize {
        self.propagator.nrows()
    }

    /// One-step propagator `R`.
    pub fn propagator(&self) -> &DMatrix<f64> {
        &self.propagator
    }

    pub fn step(&self, z: &DVector<f64>, load_mid: &DVector<f64>) -> DVector<f64> {
        &self.propagator * z + &self.injector * load_mid
    }

    /// Homogeneous step, `z' = R z`.
    pub fn step_free(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.propagator * z
    }

    /// Steps an `n x p` matrix state column-wise with a matrix-valued load.
    pub fn step_matrix(&self, z: &DMatrix<f64>, load_mid: &DMatrix<f64>) -> DMatrix<f64> {
        &self.propagator * z + &self.injector * load_mid
    }
}

/// Single implicit-midpoint step of `dz/dt = A z + load(t)` given the load at
/// the step endpoints.
pub fn step_lti(
    a: &DMatrix<f64>,
    load_start: &DVector<f64>,
    load_end: &DVector<f64>,
    z: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    let stepper = Stepper::new(a, dt)?;
    Ok(stepper.step(z, &((load_start + load_end) * 0.5)))
}

/// Propagates through all grid steps; `loads[i]` is the load at node `i`
/// (length `n_steps + 1`). Returns the `n_steps + 1` node states.
pub fn propagate(
    stepper: &Stepper,
    init: &DVector<f64>,
    loads: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let n_steps = loads.len() - 1;
    let mut states = Vec::with_capacity(loads.len());
    states.push(init.clone());
    let mut z = init.clone();
    for i in 0..n_steps {
        let mid = (&loads[i] + &loads[i + 1]) * 0.5;
        z = stepper.step(&z, &mid);
        states.push(z.clone());
    }
    states
}

/// Homogeneous propagation (zero load).
pub fn propagate_free(stepper: &Stepper, init: &DVector<f64>, n_steps: usize) -> Vec<DVector<f64>> {
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(init.clone());
    let mut z = init.clone();
    for _ in 0..n_steps {
        z = stepper.step_free(&z);
        states.push(z.clone());
    }
    states
}
