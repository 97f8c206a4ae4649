//! Randomized verification suites behind the `verify` command.
//!
//! Each suite checks one of the supporting guarantees of the estimation
//! method on freshly sampled systems: adjoint identities, closed-loop
//! observability retention, coercivity of the stacked least-squares
//! operator, the block spectral-radius bound, the fixed-point property of
//! the sweep at the cost optimum, and the first-order contraction rate.

use crate::error::Result;
use crate::gramian::block_spectral_radius_bound;
use crate::grid::TimeGrid;
use crate::linear::{
    assemble_gamma, bfn_gn_step_linear, coercivity_floor, oracle_minimize, CostSpec, EstimatorState,
};
use crate::noise::{sample_ou, NoiseStream};
use crate::observer::{closed_loop_observability, ObserverConfig};
use crate::space::{operator_norm, weighted_adjoint, InnerProductSpace};
use crate::synth;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use std::time::Instant;

pub const SUITES: [&str; 6] = [
    "adjoint",
    "observability",
    "coercivity",
    "spectral-radius",
    "fixed-point",
    "contraction",
];

/// Test-fixture fault injection, used to demonstrate that the suites catch
/// real sign errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Flips the sign of the adjoint inside the adjoint-identity suite.
    AdjointSignFlip,
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub seed: u64,
    pub only: Option<String>,
    pub fault: Fault,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            only: None,
            fault: Fault::None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// Worst signed violation observed (negative means margin to spare).
    pub max_violation: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One pass/fail line per suite.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            out.push_str(&format!(
                "{:<16} {:>5} cases  worst {:>12.3e}  {:>7.2}s  {}\n",
                s.name,
                s.cases,
                s.max_violation,
                s.seconds,
                if s.passed { "PASS" } else { "FAIL" }
            ));
        }
        out.push_str(&format!(
            "overall: {}\n",
            if self.passed { "PASS" } else { "FAIL" }
        ));
        out
    }
}

pub fn run_verification(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let mut suites = Vec::new();
    for name in SUITES {
        if let Some(only) = &cfg.only {
            if only != name {
                continue;
            }
        }
        let start = Instant::now();
        let (cases, max_violation) = match name {
            "adjoint" => adjoint_suite(cfg)?,
            "observability" => observability_suite(cfg)?,
            "coercivity" => coercivity_suite(cfg)?,
            "spectral-radius" => spectral_radius_suite(cfg)?,
            "fixed-point" => fixed_point_suite(cfg)?,
            "contraction" => contraction_suite(cfg)?,
            _ => unreachable!(),
        };
        suites.push(SuiteResult {
            name: name.into(),
            passed: max_violation <= 0.0,
            cases,
            max_violation,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    if suites.is_empty() {
        return Err(crate::error::Error::InvalidArgument(format!(
            "unknown suite {:?}; available: {}",
            cfg.only,
            SUITES.join(", ")
        )));
    }
    Ok(VerifyReport {
        passed: suites.iter().all(|s| s.passed),
        seed: cfg.seed,
        suites,
    })
}

/// `<Op x, y> = <x, Op* y>` on random weighted spaces; tolerance
/// `1e-10 |x| |y|`.
fn adjoint_suite(cfg: &VerifyConfig) -> Result<(usize, f64)> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(101));
    let mut worst = f64::NEG_INFINITY;
    let cases = 50;
    for _ in 0..cases {
        let n = rng.gen_range(2..7);
        let m = rng.gen_range(1..5);
        let g_in = InnerProductSpace::new(synth::random_spd(&mut rng, n))?;
        let g_out = InnerProductSpace::new(synth::random_spd(&mut rng, m))?;
        let op = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut adj = weighted_adjoint(&op, &g_in, &g_out)?;
        if cfg.fault == Fault::AdjointSignFlip {
            adj = -adj;
        }
        for _ in 0..10 {
            let x = synth::random_vector(&mut rng, n);
            let y = synth::random_vector(&mut rng, m);
            let lhs = g_out.inner(&(&op * &x), &y);
            let rhs = g_in.inner(&x, &(&adj * &y));
            worst = worst.max((lhs - rhs).abs() - 1e-10 * x.norm() * y.norm());
        }
    }
    Ok((cases, worst))
}

/// Closed-loop observability never drops below the retention bound.
fn observability_suite(cfg: &VerifyConfig) -> Result<(usize, f64)> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(202));
    let mut worst = f64::NEG_INFINITY;
    let cases = 50;
    for _ in 0..cases {
        let sys = synth::random_skew_system(&mut rng, 2..=6, 1..=2);
        let kappa = rng.gen_range(0.0..2.0);
        let obs = ObserverConfig::colocated(kappa)?;
        let k = obs.gain_matrix(&sys.c, &sys.g_x, &sys.g_y)?;
        let grid = TimeGrid::new(rng.gen_range(1.0..4.0), 400)?;
        let r = closed_loop_observability(&sys, &k, &grid)?;
        worst = worst.max(r.bound - r.measured - 1e-8);
    }
    Ok((cases, worst))
}

/// `lambda_min(Gamma* Gamma) >= eps` with the floor computed from the
/// retention bound, the regularizer floor and the parameter-block norm.
fn coercivity_suite(cfg: &VerifyConfig) -> Result<(usize, f64)> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(303));
    let mut worst = f64::NEG_INFINITY;
    let cases = 50;
    for _ in 0..cases {
        let sys = synth::random_skew_system(&mut rng, 2..=5, 1..=2);
        let p = sys.param_dim();
        let grid = TimeGrid::new(rng.gen_range(1.0..3.0), 300)?;
        let kappa = rng.gen_range(0.0..1.5);
        let delta = rng.gen_range(0.05..0.5);
        let spec = CostSpec::new(
            DVector::zeros(p),
            DMatrix::identity(p, p) * delta,
            delta,
            vec![DVector::zeros(sys.output_dim()); grid.n_nodes()],
            kappa,
            InnerProductSpace::standard(p),
        )?;
        let asm = assemble_gamma(&spec, &sys, &grid)?;
        let lambda_min = asm.coercivity(&sys.g_x, &spec.g_theta);
        let obs = ObserverConfig::colocated(kappa)?;
        let k = obs.gain_matrix(&sys.c, &sys.g_x, &sys.g_y)?;
        let ret = closed_loop_observability(&sys, &k, &grid)?;
        let p_norm = asm.output_param_block_norm(&spec.g_theta);
        let eps = coercivity_floor(ret.bound, delta, p_norm);
        worst = worst.max(eps - lambda_min - 1e-12);
    }
    Ok((cases, worst))
}

/// `rho([[D, E], [F, G]]) <= max(rho(D), rho(G)) + sqrt(|E||F|)`.
fn spectral_radius_suite(cfg: &VerifyConfig) -> Result<(usize, f64)> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(404));
    let mut worst = f64::NEG_INFINITY;
    let cases = 200;
    for _ in 0..cases {
        let n1 = rng.gen_range(1..5);
        let n2 = rng.gen_range(1..5);
        let d = DMatrix::from_fn(n1, n1, |_, _| rng.gen_range(-1.0..1.0));
        let e = DMatrix::from_fn(n1, n2, |_, _| rng.gen_range(-1.0..1.0));
        let f = DMatrix::from_fn(n2, n1, |_, _| rng.gen_range(-1.0..1.0));
        let g = DMatrix::from_fn(n2, n2, |_, _| rng.gen_range(-1.0..1.0));
        let (lhs, rhs) = block_spectral_radius_bound(&d, &e, &f, &g);
        worst = worst.max(lhs - rhs - 1e-10);
    }
    Ok((cases, worst))
}

fn noisy_spec(
    rng: &mut ChaCha12Rng,
    sys: &crate::model::LtiSystem,
    grid: &TimeGrid,
    kappa: f64,
    seed: u64,
) -> Result<CostSpec> {
    let p = sys.param_dim();
    let z0 = synth::random_vector(rng, sys.state_dim());
    let theta = synth::random_vector(rng, p);
    let truth = sys.simulate(&z0, &theta, None, None, grid)?;
    let mut y = truth.outputs;
    for row in 0..sys.output_dim() {
        let ou = sample_ou(NoiseStream::new(seed, 50 + row as u64), grid, 0.2);
        for (i, v) in y.iter_mut().enumerate() {
            v[row] += ou.scalar(i);
        }
    }
    let delta = rng.gen_range(0.1..0.4);
    CostSpec::new(
        DVector::zeros(p),
        DMatrix::identity(p, p) * delta,
        delta,
        y,
        kappa,
        InnerProductSpace::standard(p),
    )
}

/// One sweep started at the cost optimum must stay there (1e-8 relative).
fn fixed_point_suite(cfg: &VerifyConfig) -> Result<(usize, f64)> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(505));
    let mut worst = f64::NEG_INFINITY;
    let cases = 10usize;
    for case in 0..cases {
        let sys = synth::random_skew_system(&mut rng, 3..=5, 1..=2);
        let grid = TimeGrid::new(rng.gen_range(1.5..3.0), 300)?;
        let kappa = rng.gen_range(0.2..0.8);
        let spec = noisy_spec(
            &mut rng,
            &sys,
            &grid,
            kappa,
            cfg.seed.wrapping_add(case as u64),
        )?;
        let sol = oracle_minimize(&spec, &sys, &grid)?;
        let state = EstimatorState {
            zeta_hat: sol.zeta.clone(),
            theta_hat: sol.theta.clone(),
            iteration: 1,
            diagnostics: Default::default(),
        };
        let next = bfn_gn_step_linear(&state, &spec, &sys, kappa, &grid)?;
        let move_rel = ((&next.zeta_hat - &sol.zeta).norm()
            + (&next.theta_hat - &sol.theta).norm())
            / (sol.zeta.norm() + sol.theta.norm()).max(1.0);
        worst = worst.max(move_rel - 1e-8);
    }
    Ok((cases, worst))
}

/// Constants of the first-order contraction estimate for one problem.
pub struct ContractionConstants {
    pub gamma0: f64,
    pub alpha: f64,
    pub norm_c: f64,
    pub norm_b_l2: f64,
}

/// `alpha = min(delta gamma^2 / (T^2 |C|^2 |B|^2), gamma^2)` from measured
/// module constants.
pub fn contraction_constants(
    sys: &crate::model::LtiSystem,
    spec: &CostSpec,
    grid: &TimeGrid,
) -> Result<ContractionConstants> {
    let gamma0 = crate::gramian::observability_constant(&sys.a, &sys.c, grid, &sys.g_x, &sys.g_y)?;
    let norm_c = operator_norm(&sys.c, &sys.g_x, &sys.g_y);
    let b_nodes = sys.b.node_samples(grid.n_nodes());
    let mut b_sq = 0.0;
    for i in 0..grid.n_steps() {
        let b_mid = (&b_nodes[i] + &b_nodes[i + 1]) * 0.5;
        let nb = operator_norm(&b_mid, &spec.g_theta, &sys.g_x);
        b_sq += nb * nb * grid.dt();
    }
    let t = grid.t_final();
    let g2 = gamma0 * gamma0;
    let alpha = (spec.delta * g2 / (t * t * norm_c * norm_c * b_sq)).min(g2);
    Ok(ContractionConstants {
        gamma0,
        alpha,
        norm_c,
        norm_b_l2: b_sq.sqrt(),
    })
}

/// Operator norm (in `G_X`) of the linear part of the one-sweep map on the
/// initial state, assembled column-wise through exact differences.
pub fn sweep_contraction_factor(
    spec: &CostSpec,
    sys: &crate::model::LtiSystem,
    kappa: f64,
    grid: &TimeGrid,
    around: (&DVector<f64>, &DVector<f64>),
) -> Result<f64> {
    let n = sys.state_dim();
    let base_state = EstimatorState {
        zeta_hat: around.0.clone(),
        theta_hat: around.1.clone(),
        iteration: 1,
        diagnostics: Default::default(),
    };
    let base = bfn_gn_step_linear(&base_state, spec, sys, kappa, grid)?;
    let mut d = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let mut z = around.0.clone();
        z[k] += 1.0;
        let state = EstimatorState {
            zeta_hat: z,
            theta_hat: around.1.clone(),
            iteration: 1,
            diagnostics: Default::default(),
        };
        let next = bfn_gn_step_linear(&state, spec, sys, kappa, grid)?;
        d.set_column(k, &(&next.zeta_hat - &base.zeta_hat));
    }
    Ok(operator_norm(&d, &sys.g_x, &sys.g_x))
}

/// Measured contraction factor obeys `factor <= 1 - 0.75 alpha kappa` for
/// small gains `kappa = c * gamma0^2`, `c in {0.01, 0.02, 0.05}`.
fn contraction_suite(cfg: &VerifyConfig) -> Result<(usize, f64)> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(606));
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0usize;
    for case in 0..5u64 {
        let sys = synth::random_skew_system(&mut rng, 3..=4, 2..=2);
        let grid = TimeGrid::new(2.0, 400)?;
        let spec0 = noisy_spec(
            &mut rng,
            &sys,
            &grid,
            0.0,
            cfg.seed.wrapping_add(700 + case),
        )?;
        let consts = contraction_constants(&sys, &spec0, &grid)?;
        for c in [0.01, 0.02, 0.05] {
            let kappa = c * consts.gamma0 * consts.gamma0;
            let mut spec = spec0.clone();
            spec.kappa = kappa;
            let sol = oracle_minimize(&spec, &sys, &grid)?;
            let factor =
                sweep_contraction_factor(&spec, &sys, kappa, &grid, (&sol.zeta, &sol.theta))?;
            worst = worst.max(factor - (1.0 - 0.75 * consts.alpha * kappa));
            cases += 1;
        }
    }
    Ok((cases, worst))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_verification_passes() {
        let report = run_verification(&VerifyConfig::default()).unwrap();
        assert!(report.passed, "{}", report.render_table());
        assert_eq!(report.suites.len(), SUITES.len());
    }

    #[test]
    fn fault_injection_fails_with_named_suite() {
        let report = run_verification(&VerifyConfig {
            seed: 0,
            only: Some("adjoint".into()),
            fault: Fault::AdjointSignFlip,
        })
        .unwrap();
        assert!(!report.passed);
        assert_eq!(report.suites.len(), 1);
        assert_eq!(report.suites[0].name, "adjoint");
        assert!(!report.suites[0].passed);
    }

    #[test]
    fn only_filter_runs_single_suite() {
        let report = run_verification(&VerifyConfig {
            seed: 3,
            only: Some("spectral-radius".into()),
            fault: Fault::None,
        })
        .unwrap();
        assert_eq!(report.suites.len(), 1);
        assert!(report.passed);
    }

    #[test]
    fn unknown_suite_is_an_error() {
        let r = run_verification(&VerifyConfig {
            seed: 0,
            only: Some("nonsense".into()),
            fault: Fault::None,
        });
        assert!(r.is_err());
    }
}
