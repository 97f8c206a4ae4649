//! Joint BFN + Gauss-Newton iteration for linear source estimation, the
//! regularized output-error cost, and the direct least-squares oracle.
//!
//! The cost is
//!
//! ```text
//! J(zeta, xi) = <xi - theta0, U0 (xi - theta0)>
//!             + int_0^T |y - C z[zeta, xi]|^2_{G_Y} dt
//! ```
//!
//! where `z[zeta, xi]` is the colocated-feedback observer trajectory started
//! at `zeta` with source `B(t) xi`. Because the observer output is affine in
//! `(zeta, xi)`, the whole problem is linear-quadratic: the oracle assembles
//! the stacked affine map explicitly and minimizes by normal equations,
//! while the iterative method alternates a forward observer pass (which also
//! propagates the sensitivity and the Gauss-Newton accumulators), an exact
//! Gauss-Newton parameter update, and a backward observer sweep for the
//! initial state.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::integrate::Stepper;
use crate::joint::{forward_joint_pass, PiSource};
use crate::model::LtiSystem;
use crate::observer::ObserverConfig;
use crate::space::{min_eig_pair, spd_sqrt, InnerProductSpace};
use nalgebra::{DMatrix, DVector};
use std::io::Write;

/// Regularized output-error problem data.
///
/// `u0` is the quadratic-form matrix of the regularizer on parameter
/// coefficients: the penalty is `(xi - theta0)^T u0 (xi - theta0)`, which in
/// the `g_theta` inner product represents the operator `g_theta^{-1} u0`.
/// `delta` declares the coercivity floor `u0 >= delta * g_theta`.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub theta0: DVector<f64>,
    pub u0: DMatrix<f64>,
    pub delta: f64,
    pub y: Vec<DVector<f64>>,
    pub kappa: f64,
    pub g_theta: InnerProductSpace,
}

impl CostSpec {
    pub fn new(
        theta0: DVector<f64>,
        u0: DMatrix<f64>,
        delta: f64,
        y: Vec<DVector<f64>>,
        kappa: f64,
        g_theta: InnerProductSpace,
    ) -> Result<Self> {
        let p = theta0.len();
        if u0.nrows() != p || u0.ncols() != p {
            return Err(Error::dim("regularizer", p, u0.nrows()));
        }
        if g_theta.dim() != p {
            return Err(Error::dim("parameter Gram", p, g_theta.dim()));
        }
        let asym = (&u0 - u0.transpose()).norm();
        if asym > 1e-12 * u0.norm().max(1e-300) {
            return Err(Error::InvalidArgument(
                "regularizer must be symmetric".into(),
            ));
        }
        if kappa.is_nan() || kappa < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "observer gain must be nonnegative, got {kappa}"
            )));
        }
        if delta < 0.0 {
            return Err(Error::InvalidArgument("delta must be nonnegative".into()));
        }
        if delta > 0.0 {
            let floor = min_eig_pair(&u0, &g_theta);
            if floor < delta - 1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "regularizer floor {floor:.3e} below the declared delta {delta:.3e}"
                )));
            }
        }
        Ok(CostSpec {
            theta0,
            u0,
            delta,
            y,
            kappa,
            g_theta,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.theta0.len()
    }

    /// `(xi - theta0)^T U0 (xi - theta0)`.
    pub fn regularization(&self, xi: &DVector<f64>) -> f64 {
        let d = xi - &self.theta0;
        d.dot(&(&self.u0 * &d))
    }
}

/// Current iterate of the joint estimation.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    pub zeta_hat: DVector<f64>,
    pub theta_hat: DVector<f64>,
    /// 1-based iteration counter: the state produced by sweep `j` carries
    /// `iteration = j + 1`.
    pub iteration: usize,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug, Clone, Default)]
pub struct StepDiagnostics {
    /// Cost of the incoming iterate, evaluated on the sweep's own forward pass.
    pub cost: f64,
    /// `|zeta_{j+1} - zeta_j|` in the state Gram norm.
    pub zeta_step: f64,
    /// `|theta_{j+1} - theta_j|` in the parameter Gram norm.
    pub theta_step: f64,
}

impl EstimatorState {
    pub fn start(zeta: DVector<f64>, theta0: DVector<f64>) -> Self {
        EstimatorState {
            zeta_hat: zeta,
            theta_hat: theta0,
            iteration: 1,
            diagnostics: StepDiagnostics::default(),
        }
    }
}

/// Observer gain sequence over iterations (1-based).
#[derive(Debug, Clone)]
pub enum GainSchedule {
    Constant(f64),
    /// `kappa_j = kappa1 / j`: summable squares, divergent sum.
    Harmonic {
        kappa1: f64,
    },
    /// Explicit sequence; iterations beyond the end reuse the last entry.
    Sequence(Vec<f64>),
}

impl GainSchedule {
    pub fn gain(&self, iteration: usize) -> f64 {
        match self {
            GainSchedule::Constant(k) => *k,
            GainSchedule::Harmonic { kappa1 } => kappa1 / iteration as f64,
            GainSchedule::Sequence(v) => v.get(iteration - 1).or(v.last()).copied().unwrap_or(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = match self {
            GainSchedule::Constant(k) => *k < 0.0,
            GainSchedule::Harmonic { kappa1 } => *kappa1 < 0.0,
            GainSchedule::Sequence(v) => v.iter().any(|k| *k < 0.0),
        };
        if bad {
            Err(Error::InvalidArgument(
                "observer gains must be nonnegative".into(),
            ))
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    pub max_iters: usize,
    /// Stop when `|zeta step| + |theta step|` (Gram norms) falls below this.
    pub tol: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_iters: 200,
            tol: 1e-10,
        }
    }
}

/// One history row per sweep.
#[derive(Debug, Clone)]
pub struct HistoryRow {
    pub iteration: usize,
    pub kappa: f64,
    pub cost: f64,
    pub zeta_step: f64,
    pub theta_step: f64,
    /// `|zeta_hat - zeta_ref|` when a reference optimum is supplied.
    pub zeta_err: Option<f64>,
    pub theta_err: Option<f64>,
}

/// Writes history as `iteration,kappa,cost,zeta_err,theta_err` with
/// 9-significant-digit scientific formatting (empty cells when no reference
/// was supplied).
pub fn history_to_csv<W: Write>(rows: &[HistoryRow], mut w: W) -> Result<()> {
    writeln!(w, "iteration,kappa,cost,zeta_err,theta_err")?;
    for r in rows {
        let ze = r.zeta_err.map_or(String::new(), |v| format!("{v:.8e}"));
        let te = r.theta_err.map_or(String::new(), |v| format!("{v:.8e}"));
        writeln!(
            w,
            "{},{:.8e},{:.8e},{},{}",
            r.iteration, r.kappa, r.cost, ze, te
        )?;
    }
    Ok(())
}

fn colocated_gain(sys: &LtiSystem, kappa: f64) -> Result<DMatrix<f64>> {
    ObserverConfig::colocated(kappa)?.gain_matrix(&sys.c, &sys.g_x, &sys.g_y)
}

/// Evaluates the regularized output-error cost at `(zeta, xi)`.
pub fn cost_j(
    spec: &CostSpec,
    zeta: &DVector<f64>,
    xi: &DVector<f64>,
    sys: &LtiSystem,
    grid: &TimeGrid,
) -> Result<f64> {
    let k = colocated_gain(sys, spec.kappa)?;
    let f_cl = &sys.a - &k * &sys.c;
    let stepper = Stepper::new(&f_cl, grid.dt())?;
    let sources = sys.b.theta_loads(xi, grid.n_nodes());
    let loads: Vec<DVector<f64>> = spec
        .y
        .iter()
        .zip(sources.iter())
        .map(|(yi, si)| &k * yi + si)
        .collect();
    let states = crate::integrate::propagate(&stepper, zeta, &loads);
    let dt = grid.dt();
    let mut misfit = 0.0;
    for i in 0..grid.n_steps() {
        let y_mid = (&spec.y[i] + &spec.y[i + 1]) * 0.5;
        let z_mid = (&states[i] + &states[i + 1]) * 0.5;
        let r = y_mid - &sys.c * z_mid;
        misfit += r.dot(&(sys.g_y.gram() * &r)) * dt;
    }
    Ok(spec.regularization(xi) + misfit)
}

/// The stacked affine representation of the cost:
/// `J(zeta, xi) = | rhs - Gamma [zeta; xi] |^2` with Euclidean rows
/// (output rows are whitened by `sqrt(dt) L_Y^T`, regularizer rows by
/// `sqrt(U0)`), `rhs = data - offset`, and `offset` the contribution of the
/// `kappa C* y` drive.
#[derive(Debug, Clone)]
pub struct GammaAssembly {
    pub gamma: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub data: DVector<f64>,
    pub state_dim: usize,
    pub param_dim: usize,
}

impl GammaAssembly {
    pub fn rhs(&self) -> DVector<f64> {
        &self.data - &self.offset
    }

    pub fn cost(&self, zeta: &DVector<f64>, xi: &DVector<f64>) -> f64 {
        let mut x = DVector::zeros(self.state_dim + self.param_dim);
        x.rows_mut(0, self.state_dim).copy_from(zeta);
        x.rows_mut(self.state_dim, self.param_dim).copy_from(xi);
        (self.rhs() - &self.gamma * x).norm_squared()
    }

    /// Half-gradient blocks `Gamma^T (Gamma x - rhs)` at `(zeta, xi)`.
    pub fn gradient(&self, zeta: &DVector<f64>, xi: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut x = DVector::zeros(self.state_dim + self.param_dim);
        x.rows_mut(0, self.state_dim).copy_from(zeta);
        x.rows_mut(self.state_dim, self.param_dim).copy_from(xi);
        let g = self.gamma.transpose() * (&self.gamma * x - self.rhs());
        (
            g.rows(0, self.state_dim).into_owned(),
            g.rows(self.state_dim, self.param_dim).into_owned(),
        )
    }

    /// Exact minimizer by normal equations.
    pub fn minimize(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        let gtg = self.gamma.transpose() * &self.gamma;
        let gtr = self.gamma.transpose() * self.rhs();
        let chol = nalgebra::Cholesky::new((&gtg + gtg.transpose()) * 0.5).ok_or_else(|| {
            Error::NonIdentifiable {
                context: "normal matrix Gamma^T Gamma".into(),
            }
        })?;
        let x = chol.solve(&gtr);
        Ok((
            x.rows(0, self.state_dim).into_owned(),
            x.rows(self.state_dim, self.param_dim).into_owned(),
        ))
    }

    /// Smallest eigenvalue of `Gamma* Gamma` in the weighted domain
    /// `(G_X, G_Theta)` (generalized eigenvalue against the block Gram).
    pub fn coercivity(&self, g_x: &InnerProductSpace, g_theta: &InnerProductSpace) -> f64 {
        let n = self.state_dim;
        let p = self.param_dim;
        let mut block = DMatrix::<f64>::zeros(n + p, n + p);
        block.view_mut((0, 0), (n, n)).copy_from(g_x.gram());
        block.view_mut((n, n), (p, p)).copy_from(g_theta.gram());
        let gram = InnerProductSpace::new(block).expect("block Gram is SPD");
        min_eig_pair(&(self.gamma.transpose() * &self.gamma), &gram)
    }

    /// Operator norm of the parameter-to-output block (the `C Pi` rows,
    /// excluding the regularizer rows), with `G_Theta`-whitened domain.
    pub fn output_param_block_norm(&self, g_theta: &InnerProductSpace) -> f64 {
        let out_rows = self.gamma.nrows() - self.param_dim;
        let block = self
            .gamma
            .view((0, self.state_dim), (out_rows, self.param_dim))
            .into_owned();
        let mut bt = block.transpose();
        g_theta.chol_l().solve_lower_triangular_mut(&mut bt);
        bt.transpose().singular_values().max()
    }
}

/// Coercivity floor `epsilon = 1/2 min(delta, gamma^2 delta / (|P|^2 + delta))`
/// implied by a closed-loop observability constant `gamma`, the regularizer
/// floor `delta`, and the parameter-block norm `|P|`.
pub fn coercivity_floor(gamma: f64, delta: f64, p_norm: f64) -> f64 {
    0.5 * delta.min(gamma * gamma * delta / (p_norm * p_norm + delta))
}

/// Materializes the stacked affine map by propagating the closed-loop
/// propagator, the sensitivity, and the measurement drive over the grid.
pub fn assemble_gamma(spec: &CostSpec, sys: &LtiSystem, grid: &TimeGrid) -> Result<GammaAssembly> {
    let n = sys.state_dim();
    let p = spec.param_dim();
    let m = sys.output_dim();
    if sys.param_dim() != p {
        return Err(Error::dim("source operator params", p, sys.param_dim()));
    }
    let k = colocated_gain(sys, spec.kappa)?;
    let f_cl = &sys.a - &k * &sys.c;
    let stepper = Stepper::new(&f_cl, grid.dt())?;
    let b_nodes = sys.b.node_samples(grid.n_nodes());

    let dt = grid.dt();
    let n_steps = grid.n_steps();
    let ly_t = sys.g_y.chol_l().transpose();
    let rows = n_steps * m + p;
    let mut gamma = DMatrix::<f64>::zeros(rows, n + p);
    let mut offset = DVector::<f64>::zeros(rows);
    let mut data = DVector::<f64>::zeros(rows);

    let mut h = DMatrix::<f64>::identity(n, n);
    let mut pi = DMatrix::<f64>::zeros(n, p);
    let mut q = DVector::<f64>::zeros(n);
    for i in 0..n_steps {
        let h_next = stepper.propagator() * &h;
        let b_mid = (&b_nodes[i] + &b_nodes[i + 1]) * 0.5;
        let pi_next = stepper.step_matrix(&pi, &b_mid);
        let y_mid = (&spec.y[i] + &spec.y[i + 1]) * 0.5;
        let q_next = stepper.step(&q, &(&k * &y_mid));

        let sw = dt.sqrt();
        let wc = &ly_t * &sys.c * sw;
        let row0 = i * m;
        gamma
            .view_mut((row0, 0), (m, n))
            .copy_from(&(&wc * ((&h + &h_next) * 0.5)));
        gamma
            .view_mut((row0, n), (m, p))
            .copy_from(&(&wc * ((&pi + &pi_next) * 0.5)));
        offset
            .rows_mut(row0, m)
            .copy_from(&(&wc * ((&q + &q_next) * 0.5)));
        data.rows_mut(row0, m).copy_from(&(&ly_t * y_mid * sw));

        h = h_next;
        pi = pi_next;
        q = q_next;
    }
    let sqrt_u0 = spd_sqrt(&spec.u0);
    gamma.view_mut((n_steps * m, n), (p, p)).copy_from(&sqrt_u0);
    data.rows_mut(n_steps * m, p)
        .copy_from(&(&sqrt_u0 * &spec.theta0));

    Ok(GammaAssembly {
        gamma,
        offset,
        data,
        state_dim: n,
        param_dim: p,
    })
}

/// Exact minimizer of the regularized output-error cost, with the residual
/// optimality conditions evaluated at the solution.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub zeta: DVector<f64>,
    pub theta: DVector<f64>,
    pub cost: f64,
    /// Norm of the cost's initial-state half-gradient at the optimum
    /// (the path integral of the propagated output residual).
    pub state_gradient_norm: f64,
    /// Norm of the parameter half-gradient
    /// `U0 (theta - theta0) - int Pi* C* chi` at the optimum.
    pub param_gradient_norm: f64,
}

/// Solves the output-error minimization by normal equations on the
/// assembled affine map. Fails with a non-identifiability error when the
/// normal matrix is singular (e.g. `U0 = 0` with an unobservable direction).
pub fn oracle_minimize(
    spec: &CostSpec,
    sys: &LtiSystem,
    grid: &TimeGrid,
) -> Result<OracleSolution> {
    let asm = assemble_gamma(spec, sys, grid)?;
    let (zeta, theta) = asm.minimize()?;
    let (gz, gt) = asm.gradient(&zeta, &theta);
    Ok(OracleSolution {
        cost: asm.cost(&zeta, &theta),
        zeta,
        theta,
        state_gradient_norm: gz.norm(),
        param_gradient_norm: gt.norm(),
    })
}

/// One joint sweep: forward observer + sensitivity + Gauss-Newton update,
/// then the backward observer started from the parameter-corrected terminal
/// state. Returns the next iterate.
pub fn bfn_gn_step_linear(
    state: &EstimatorState,
    spec: &CostSpec,
    sys: &LtiSystem,
    kappa_j: f64,
    grid: &TimeGrid,
) -> Result<EstimatorState> {
    bfn_gn_step_linear_with_load(state, spec, sys, None, kappa_j, grid)
}

/// Same sweep with an additional known load term in the dynamics
/// (`dz/dt = A z + B theta + load + ...`), which the parameter does not act
/// on. With `B = 0` this is the sweep the bilinear estimator degenerates to
/// when every `dA_k` vanishes.
pub fn bfn_gn_step_linear_with_load(
    state: &EstimatorState,
    spec: &CostSpec,
    sys: &LtiSystem,
    known_load: Option<&[DVector<f64>]>,
    kappa_j: f64,
    grid: &TimeGrid,
) -> Result<EstimatorState> {
    let k = colocated_gain(sys, kappa_j)?;
    let f_fwd = &sys.a - &k * &sys.c;
    let fwd = Stepper::new(&f_fwd, grid.dt())?;
    let b_nodes = sys.b.node_samples(grid.n_nodes());

    let mut sources = sys.b.theta_loads(&state.theta_hat, grid.n_nodes());
    if let Some(extra) = known_load {
        if extra.len() != grid.n_nodes() {
            return Err(Error::dim("known load nodes", grid.n_nodes(), extra.len()));
        }
        for (s, e) in sources.iter_mut().zip(extra.iter()) {
            *s += e;
        }
    }
    let loads: Vec<DVector<f64>> = spec
        .y
        .iter()
        .zip(sources.iter())
        .map(|(yi, si)| &k * yi + si)
        .collect();
    let pass = forward_joint_pass(
        &fwd,
        &sys.c,
        sys.g_y.gram(),
        &loads,
        &spec.y,
        &state.zeta_hat,
        PiSource::Nodes(&b_nodes),
        &spec.u0,
        grid,
        None,
    )?;

    // Gauss-Newton update: theta' = theta - U(T)^{-1} (U0 (theta - theta0) - xi(T)).
    let grad = &spec.u0 * (&state.theta_hat - &spec.theta0) - &pass.moment;
    let info_sym = (&pass.info + pass.info.transpose()) * 0.5;
    let chol = nalgebra::Cholesky::new(info_sym).ok_or_else(|| Error::NonIdentifiable {
        context: "Gauss-Newton information U(T)".into(),
    })?;
    let theta_new = &state.theta_hat - chol.solve(&grad);

    // Backward sweep with the corrected terminal state and the new source.
    let f_bwd = -&sys.a - &k * &sys.c;
    let bwd = Stepper::new(&f_bwd, grid.dt())?;
    let z_t = pass.states.last().unwrap() + &pass.pi_final * (&theta_new - &state.theta_hat);
    let n_steps = grid.n_steps();
    let bwd_loads: Vec<DVector<f64>> = (0..=n_steps)
        .map(|i| {
            let j = n_steps - i;
            &k * &spec.y[j] - sources[j].clone() - &b_nodes[j] * (&theta_new - &state.theta_hat)
        })
        .collect();
    let back = crate::integrate::propagate(&bwd, &z_t, &bwd_loads);
    let zeta_new = back.last().unwrap().clone();

    Ok(EstimatorState {
        diagnostics: StepDiagnostics {
            cost: spec.regularization(&state.theta_hat) + pass.misfit,
            zeta_step: sys.g_x.norm(&(&zeta_new - &state.zeta_hat)),
            theta_step: spec.g_theta.norm(&(&theta_new - &state.theta_hat)),
        },
        zeta_hat: zeta_new,
        theta_hat: theta_new,
        iteration: state.iteration + 1,
    })
}

/// Runs the joint iteration from `init_zeta` (with `theta_hat` starting at
/// the prior), using the gain schedule, until the combined step norm falls
/// below `stop.tol` or `stop.max_iters` sweeps have run. When a reference
/// optimum is supplied the history tracks distances to it.
pub fn run_linear(
    spec: &CostSpec,
    sys: &LtiSystem,
    schedule: &GainSchedule,
    stop: &StopRule,
    grid: &TimeGrid,
    init_zeta: &DVector<f64>,
    reference: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<(EstimatorState, Vec<HistoryRow>)> {
    schedule.validate()?;
    let mut state = EstimatorState::start(init_zeta.clone(), spec.theta0.clone());
    let mut history = Vec::new();
    for j in 1..=stop.max_iters {
        let kappa_j = schedule.gain(j);
        let next = bfn_gn_step_linear(&state, spec, sys, kappa_j, grid)?;
        let (zeta_err, theta_err) = match reference {
            Some((zr, tr)) => (
                Some(sys.g_x.norm(&(&next.zeta_hat - zr))),
                Some(spec.g_theta.norm(&(&next.theta_hat - tr))),
            ),
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
