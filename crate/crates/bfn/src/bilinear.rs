//! Joint BFN + Gauss-Newton iteration for bilinear parameter estimation.
//!
//! Same sweep structure as the linear estimator, except that the sensitivity
//! equation is driven by the parameter-direction source `Lambda z` (the
//! columns `dA_k z`), the plant matrix `A(theta)` and the state Gram are
//! re-assembled at the current iterate, and the parameter update can be
//! damped by a step size `beta`. The output-space adjoint `(C Pi)*` is taken
//! in `G_Y` only, so no state-space adjoint with a parameter-dependent Gram
//! is ever formed.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::integrate::Stepper;
use crate::joint::{forward_joint_pass, propagate_guarded, PiSource};
use crate::linear::{EstimatorState, GainSchedule, HistoryRow, StepDiagnostics, StopRule};
use crate::model::{BilinearFamily, Trajectory};
use crate::observer::ObserverConfig;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::Arc;

/// Blow-up guard: a sweep aborts when the state norm exceeds
/// `GUARD_FACTOR * max(1, data scale, iterate scale)`.
pub const GUARD_FACTOR: f64 = 1e6;

#[derive(Clone)]
pub struct BilinearEstimatorConfig {
    pub gains: GainSchedule,
    /// Gauss-Newton step size in `[0, 1]`; `0` freezes the parameter.
    pub beta: f64,
    /// BFN-only sweeps (no parameter update) before the joint iterations.
    pub warmup_sweeps: usize,
    pub theta0: DVector<f64>,
    /// Regularizer quadratic-form matrix.
    pub u0: DMatrix<f64>,
    /// Optional per-iteration regularizer rebuild (1-based iteration index).
    pub u0_schedule: Option<Arc<dyn Fn(usize) -> DMatrix<f64> + Send + Sync>>,
}

impl std::fmt::Debug for BilinearEstimatorConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BilinearEstimatorConfig")
            .field("gains", &self.gains)
            .field("beta", &self.beta)
            .field("warmup_sweeps", &self.warmup_sweeps)
            .field("u0_schedule", &self.u0_schedule.is_some())
            .finish()
    }
}

impl BilinearEstimatorConfig {
    pub fn new(
        gains: GainSchedule,
        beta: f64,
        warmup_sweeps: usize,
        theta0: DVector<f64>,
        u0: DMatrix<f64>,
    ) -> Result<Self> {
        gains.validate()?;
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!(
                "step size beta must lie in [0, 1], got {beta}"
            )));
        }
        let p = theta0.len();
        if u0.nrows() != p || u0.ncols() != p {
            return Err(Error::dim("bilinear regularizer", p, u0.nrows()));
        }
        Ok(BilinearEstimatorConfig {
            gains,
            beta,
            warmup_sweeps,
            theta0,
            u0,
            u0_schedule: None,
        })
    }

    fn u0_at(&self, iteration: usize) -> DMatrix<f64> {
        match &self.u0_schedule {
            Some(f) => f(iteration),
            None => self.u0.clone(),
        }
    }
}

/// `[Lambda z] xi = (sum_k xi_k dA_k) z`; bilinear in `(z, xi)`.
pub fn lambda_apply(zhat: &DVector<f64>, xi: &DVector<f64>, fam: &BilinearFamily) -> DVector<f64> {
    fam.lambda_apply(zhat, xi)
}

fn guard_limit(y: &[DVector<f64>], zeta: &DVector<f64>) -> f64 {
    let data_scale = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
    GUARD_FACTOR * data_scale.max(zeta.norm()).max(1.0)
}

/// One joint sweep of the bilinear iteration. The forward pass runs with
/// `A(theta_j)` and feedback built from the Gram at `theta_j`; the backward
/// pass runs with `A(theta_{j+1})` and the Gram at `theta_{j+1}`.
pub fn bfn_gn_step_bilinear(
    state: &EstimatorState,
    cfg: &BilinearEstimatorConfig,
    fam: &BilinearFamily,
    y: &[DVector<f64>],
    grid: &TimeGrid,
) -> Result<EstimatorState> {
    let kappa = cfg.gains.gain(state.iteration);
    let obs = ObserverConfig::colocated(kappa)?;
    let limit = guard_limit(y, &state.zeta_hat);

    let g_x_fwd = fam.gram_at(&state.theta_hat)?;
    let k_fwd = obs.gain_matrix(&fam.c, &g_x_fwd, &fam.g_y)?;
    let a_fwd = fam.a_of(&state.theta_hat);
    let fwd = Stepper::new(&(&a_fwd - &k_fwd * &fam.c), grid.dt())?;
    let loads: Vec<DVector<f64>> = y
        .iter()
        .zip(fam.load.iter())
        .map(|(yi, fi)| &k_fwd * yi + fi)
        .collect();
    let u0_j = cfg.u0_at(state.iteration);
    let pass = forward_joint_pass(
        &fwd,
        &fam.c,
        fam.g_y.gram(),
        &loads,
        y,
        &state.zeta_hat,
        PiSource::Bilinear(fam),
        &u0_j,
        grid,
        Some(limit),
    )?;

    let grad = &u0_j * (&state.theta_hat - &cfg.theta0) - &pass.moment;
    let info_sym = (&pass.info + pass.info.transpose()) * 0.5;
    let chol = nalgebra::Cholesky::new(info_sym).ok_or_else(|| Error::NonIdentifiable {
        context: "Gauss-Newton information U(T)".into(),
    })?;
    let theta_new = &state.theta_hat - chol.solve(&grad) * cfg.beta;

    let g_x_bwd = fam.gram_at(&theta_new)?;
    let k_bwd = obs.gain_matrix(&fam.c, &g_x_bwd, &fam.g_y)?;
    let a_bwd = fam.a_of(&theta_new);
    let bwd = Stepper::new(&(-&a_bwd - &k_bwd * &fam.c), grid.dt())?;
    let z_t = pass.states.last().unwrap() + &pass.pi_final * (&theta_new - &state.theta_hat);
    let n_steps = grid.n_steps();
    let bwd_loads: Vec<DVector<f64>> = (0..=n_steps)
        .map(|i| {
            let j = n_steps - i;
            &k_bwd * &y[j] - &fam.load[j]
        })
        .collect();
    let back = propagate_guarded(&bwd, &z_t, &bwd_loads, Some(limit))?;
    let zeta_new = back.last().unwrap().clone();

    let reg = {
        let d = &state.theta_hat - &cfg.theta0;
        d.dot(&(&u0_j * &d))
    };
    Ok(EstimatorState {
        diagnostics: StepDiagnostics {
            cost: reg + pass.misfit,
            zeta_step: g_x_bwd.norm(&(&zeta_new - &state.zeta_hat)),
            theta_step: fam.g_theta.norm(&(&theta_new - &state.theta_hat)),
        },
        zeta_hat: zeta_new,
        theta_hat: theta_new,
        iteration: state.iteration + 1,
    })
}

/// One BFN-only sweep (observer forward, observer backward, parameter
/// untouched). Used for warmup before the joint iterations.
pub fn bfn_sweep(
    zeta: &DVector<f64>,
    theta: &DVector<f64>,
    kappa: f64,
    fam: &BilinearFamily,
    y: &[DVector<f64>],
    grid: &TimeGrid,
) -> Result<DVector<f64>> {
    let obs = ObserverConfig::colocated(kappa)?;
    let limit = guard_limit(y, zeta);
    let g_x = fam.gram_at(theta)?;
    let k = obs.gain_matrix(&fam.c, &g_x, &fam.g_y)?;
    let a = fam.a_of(theta);
    let fwd = Stepper::new(&(&a - &k * &fam.c), grid.dt())?;
    let loads: Vec<DVector<f64>> = y
        .iter()
        .zip(fam.load.iter())
        .map(|(yi, fi)| &k * yi + fi)
        .collect();
    let states = propagate_guarded(&fwd, zeta, &loads, Some(limit))?;
    let bwd = Stepper::new(&(-&a - &k * &fam.c), grid.dt())?;
    let n_steps = grid.n_steps();
    let bwd_loads: Vec<DVector<f64>> = (0..=n_steps)
        .map(|i| {
            let j = n_steps - i;
            &k * &y[j] - &fam.load[j]
        })
        .collect();
    let back = propagate_guarded(&bwd, states.last().unwrap(), &bwd_loads, Some(limit))?;
    Ok(back.last().unwrap().clone())
}

/// Runs optional warmup BFN sweeps, then the joint iteration until the
/// combined step norm drops below `stop.tol` or `stop.max_iters` sweeps.
/// When the ground truth is supplied, the history tracks distances to it.
pub fn run_bilinear(
    cfg: &BilinearEstimatorConfig,
    fam: &BilinearFamily,
    y: &[DVector<f64>],
    init_zeta: &DVector<f64>,
    stop: &StopRule,
    grid: &TimeGrid,
    truth: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<(EstimatorState, Vec<HistoryRow>)> {
    let mut zeta = init_zeta.clone();
    for _ in 0..cfg.warmup_sweeps {
        zeta = bfn_sweep(&zeta, &cfg.theta0, cfg.gains.gain(1), fam, y, grid)?;
    }
    let mut state = EstimatorState::start(zeta, cfg.theta0.clone());
    let mut history = Vec::new();
    for j in 1..=stop.max_iters {
        let kappa_j = cfg.gains.gain(j);
        let next = bfn_gn_step_bilinear(&state, cfg, fam, y, grid)?;
        let (zeta_err, theta_err) = match truth {
            Some((zr, tr)) => {
                let g_x = fam.gram_at(&next.theta_hat)?;
                (
                    Some(g_x.norm(&(&next.zeta_hat - zr))),
                    Some(fam.g_theta.norm(&(&next.theta_hat - tr))),
                )
            }
            None => (None, None),
        };
        history.push(HistoryRow {
            iteration: j,
            kappa: kappa_j,
            cost: next.diagnostics.cost,
            zeta_step: next.diagnostics.zeta_step,
            theta_step: next.diagnostics.theta_step,
            zeta_err,
            theta_err,
        });
        let done = next.diagnostics.zeta_step + next.diagnostics.theta_step < stop.tol;
        state = next;
        if done {
            break;
        }
    }
    Ok((state, history))
}

/// Writes one CSV row per iteration with the full parameter vector:
/// `iteration,theta_0,...,theta_{p-1}` (9 significant digits).
pub fn parameter_snapshots_to_csv<W: std::io::Write>(
    snapshots: &[(usize, DVector<f64>)],
    mut w: W,
) -> Result<()> {
    let p = snapshots.first().map_or(0, |(_, v)| v.len());
    let header: Vec<String> = (0..p).map(|k| format!("theta_{k}")).collect();
    writeln!(w, "iteration,{}", header.join(","))?;
    for (it, v) in snapshots {
        let cells: Vec<String> = v.iter().map(|x| format!("{x:.8e}")).collect();
        writeln!(w, "{},{}", it, cells.join(","))?;
    }
    Ok(())
}

/// Central finite-difference Jacobian blocks of the one-sweep map
/// `h : (zeta, theta) -> (zeta', theta')` at `point`:
/// `D = dzeta'/dzeta`, `E = dzeta'/dtheta`, `F = dtheta'/dzeta`,
/// `G = dtheta'/dtheta`. The probe step in direction `k` is
/// `fd_step * max(1, |x_k|)`. Probes run in parallel over immutable inputs.
#[allow(clippy::type_complexity)]
pub fn frechet_blocks(
    point: (&DVector<f64>, &DVector<f64>),
    cfg: &BilinearEstimatorConfig,
    fam: &BilinearFamily,
    y: &[DVector<f64>],
    grid: &TimeGrid,
    fd_step: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (zeta0, theta0) = point;
    let n = zeta0.len();
    let p = theta0.len();
    let eval = |zeta: DVector<f64>, theta: DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
        let state = EstimatorState::start(zeta, theta);
        let next = bfn_gn_step_bilinear(&state, cfg, fam, y, grid)?;
        Ok((next.zeta_hat, next.theta_hat))
    };

    let probes: Vec<(usize, bool)> = (0..n + p).flat_map(|k| [(k, true), (k, false)]).collect();
    #[allow(clippy::type_complexity)]
    let results: Result<Vec<((usize, bool), (DVector<f64>, DVector<f64>))>> = probes
        .par_iter()
        .map(|&(k, plus)| {
            let mut zeta = zeta0.clone();
            let mut theta = theta0.clone();
            let (h, target) = if k < n {
                (fd_step * zeta[k].abs().max(1.0), &mut zeta[k])
            } else {
                (fd_step * theta[k - n].abs().max(1.0), &mut theta[k - n])
            };
            *target += if plus { h } else { -h };
            Ok(((k, plus), eval(zeta, theta)?))
        })
        .collect();
    let results = results?;

    let mut d = DMatrix::<f64>::zeros(n, n);
    let mut e = DMatrix::<f64>::zeros(n, p);
    let mut f = DMatrix::<f64>::zeros(p, n);
    let mut g = DMatrix::<f64>::zeros(p, p);
    for k in 0..n + p {
        let h = if k < n {
            fd_step * zeta0[k].abs().max(1.0)
        } else {
            fd_step * theta0[k - n].abs().max(1.0)
        };
        let plus = &results.iter().find(|(id, _)| *id == (k, true)).unwrap().1;
        let minus = &results.iter().find(|(id, _)| *id == (k, false)).unwrap().1;
        let dz = (&plus.0 - &minus.0) / (2.0 * h);
        let dtheta = (&plus.1 - &minus.1) / (2.0 * h);
        if k < n {
            d.set_column(k, &dz);
            f.set_column(k, &dtheta);
        } else {
            e.set_column(k - n, &dz);
            g.set_column(k - n, &dtheta);
        }
    }
    Ok((d, e, f, g))
}

/// Convenience: simulate the family's measured output for given truth.
pub fn measured_outputs(traj: &Trajectory) -> Vec<DVector<f64>> {
    traj.outputs.clone()
}
