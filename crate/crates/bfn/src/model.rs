//! Plant definitions and ground-truth simulation.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::integrate::Stepper;
use crate::noise::NoiseRealization;
use crate::space::InnerProductSpace;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Relative tolerance for the skew-adjointness check `A^T G + G A = 0`.
pub const SKEW_TOL: f64 = 1e-10;

/// Sampled state and output paths on a grid (`n_steps + 1` entries each).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn n_nodes(&self) -> usize {
        self.states.len()
    }
}

/// Time-dependent source operator `B(t)`, sampled at grid nodes.
#[derive(Debug, Clone)]
pub enum SourceOperator {
    /// Constant `B`.
    Constant(DMatrix<f64>),
    /// `B(t_i) = signal[i] * base`, e.g. a scalar input signal times a fixed
    /// injection matrix.
    Scaled {
        base: DMatrix<f64>,
        signal: Vec<f64>,
    },
    /// Fully general node samples.
    Sampled(Vec<DMatrix<f64>>),
}

impl SourceOperator {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            SourceOperator::Constant(b) => b.shape(),
            SourceOperator::Scaled { base, .. } => base.shape(),
            SourceOperator::Sampled(v) => v[0].shape(),
        }
    }

    pub fn at_node(&self, i: usize) -> DMatrix<f64> {
        match self {
            SourceOperator::Constant(b) => b.clone(),
            SourceOperator::Scaled { base, signal } => base * signal[i],
            SourceOperator::Sampled(v) => v[i].clone(),
        }
    }

    /// Materializes `B(t_i)` for every node.
    pub fn node_samples(&self, n_nodes: usize) -> Vec<DMatrix<f64>> {
        (0..n_nodes).map(|i| self.at_node(i)).collect()
    }

    /// Node loads `B(t_i) * theta`.
    pub fn theta_loads(&self, theta: &DVector<f64>, n_nodes: usize) -> Vec<DVector<f64>> {
        match self {
            SourceOperator::Constant(b) => {
                let l = b * theta;
                vec![l; n_nodes]
            }
            SourceOperator::Scaled { base, signal } => {
                let l = base * theta;
                (0..n_nodes).map(|i| &l * signal[i]).collect()
            }
            SourceOperator::Sampled(v) => (0..n_nodes).map(|i| &v[i] * theta).collect(),
        }
    }
}

/// Linear time-invariant plant `dz/dt = A z + B(t) theta + eta`,
/// `y = C z + nu`, with weighted state and output spaces.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: SourceOperator,
    pub c: DMatrix<f64>,
    pub g_x: InnerProductSpace,
    pub g_y: InnerProductSpace,
}

/// `|A^T G + G A| / |G A|`, the relative skew-adjointness defect.
pub fn skew_defect(a: &DMatrix<f64>, g_x: &InnerProductSpace) -> f64 {
    let ga = g_x.gram() * a;
    let resid = a.transpose() * g_x.gram() + &ga;
    resid.norm() / ga.norm().max(f64::MIN_POSITIVE)
}

impl LtiSystem {
    /// Builds the plant; `require_skew` additionally checks that `A` is
    /// `G_X`-skew-adjoint to within [`SKEW_TOL`] relative.
    pub fn new(
        a: DMatrix<f64>,
        b: SourceOperator,
        c: DMatrix<f64>,
        g_x: InnerProductSpace,
        g_y: InnerProductSpace,
        require_skew: bool,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim("LtiSystem A", n, a.ncols()));
        }
        if g_x.dim() != n {
            return Err(Error::dim("LtiSystem state Gram", n, g_x.dim()));
        }
        if c.ncols() != n {
            return Err(Error::dim("LtiSystem C columns", n, c.ncols()));
        }
        if g_y.dim() != c.nrows() {
            return Err(Error::dim("LtiSystem output Gram", c.nrows(), g_y.dim()));
        }
        if b.shape().0 != n {
            return Err(Error::dim("LtiSystem B rows", n, b.shape().0));
        }
        if require_skew {
            let defect = skew_defect(&a, &g_x);
            if defect > SKEW_TOL {
                return Err(Error::InvalidArgument(format!(
                    "A is not G_X-skew-adjoint: relative defect {defect:.3e}"
                )));
            }
        }
        Ok(LtiSystem { a, b, c, g_x, g_y })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn param_dim(&self) -> usize {
        self.b.shape().1
    }

    /// Simulates `dz/dt = A z + B(t) theta + eta`, `y = C z + nu`.
    pub fn simulate(
        &self,
        z0: &DVector<f64>,
        theta: &DVector<f64>,
        eta: Option<&NoiseRealization>,
        nu: Option<&NoiseRealization>,
        grid: &TimeGrid,
    ) -> Result<Trajectory> {
        let loads = self.b.theta_loads(theta, grid.n_nodes());
        simulate_plant(&self.a, &self.c, loads, z0, eta, nu, grid)
    }
}

/// State Gram map for a parameter-dependent state norm.
#[derive(Clone)]
#[allow(clippy::type_complexity)]
pub enum GramMap {
    Constant(InnerProductSpace),
    ThetaDependent(Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>),
}

impl std::fmt::Debug for GramMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GramMap::Constant(s) => write!(f, "GramMap::Constant(dim={})", s.dim()),
            GramMap::ThetaDependent(_) => write!(f, "GramMap::ThetaDependent"),
        }
    }
}

/// Bilinear plant `dz/dt = A(theta) z + f(t) + eta` with
/// `A(theta) = A0 + sum_k theta_k * dA_k`, `y = C z + nu`.
///
/// The state norm may depend on the parameter; `gram_of` supplies the Gram
/// matrix for a given `theta`. The parameter space carries its own Gram
/// `g_theta` (identity for plain coefficient vectors, a mass matrix for
/// FEM-discretized functions).
#[derive(Debug, Clone)]
pub struct BilinearFamily {
    pub a0: DMatrix<f64>,
    pub delta_a: Vec<DMatrix<f64>>,
    pub load: Vec<DVector<f64>>,
    pub gram_of: GramMap,
    pub c: DMatrix<f64>,
    pub g_y: InnerProductSpace,
    pub g_theta: InnerProductSpace,
}

impl BilinearFamily {
    pub fn state_dim(&self) -> usize {
        self.a0.nrows()
    }

    pub fn param_dim(&self) -> usize {
        self.delta_a.len()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Assembles `A(theta) = A0 + sum_k theta_k dA_k`.
    pub fn a_of(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut a = self.a0.clone();
        for (k, da) in self.delta_a.iter().enumerate() {
            if theta[k] != 0.0 {
                a += da * theta[k];
            }
        }
        a
    }

    /// State space at the given parameter.
    pub fn gram_at(&self, theta: &DVector<f64>) -> Result<InnerProductSpace> {
        match &self.gram_of {
            GramMap::Constant(s) => Ok(s.clone()),
            GramMap::ThetaDependent(f) => InnerProductSpace::new(f(theta)),
        }
    }

    /// `[Lambda z] xi = (sum_k xi_k dA_k) z`, the parameter-direction source.
    pub fn lambda_apply(&self, z: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.state_dim());
        for (k, da) in self.delta_a.iter().enumerate() {
            if xi[k] != 0.0 {
                out += da * z * xi[k];
            }
        }
        out
    }

    /// The `n x p` matrix with columns `dA_k z`, so that
    /// `[Lambda z] xi = lambda_columns(z) * xi`.
    pub fn lambda_columns(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.state_dim();
        let p = self.param_dim();
        let mut out = DMatrix::zeros(n, p);
        for (k, da) in self.delta_a.iter().enumerate() {
            out.set_column(k, &(da * z));
        }
        out
    }

    /// Valid Lipschitz constant `M` with
    /// `|A(theta + xi) - A(theta)|_{L(X)} <= M |xi|_Theta`, computed as the
    /// norm of the stacked (whitened, vectorized) perturbation map via its
    /// largest singular value. This majorizes the operator norm through the
    /// Frobenius norm, so the bound is safe for every `xi`.
    pub fn delta_norm_bound(&self, at_theta: &DVector<f64>) -> Result<f64> {
        let g_x = self.gram_at(at_theta)?;
        let n = self.state_dim();
        let p = self.param_dim();
        let l = g_x.chol_l();
        let lt = l.transpose();
        let mut stacked = DMatrix::<f64>::zeros(n * n, p);
        for (k, da) in self.delta_a.iter().enumerate() {
            // whiten: L^T dA L^{-T}
            let mut w = lt.clone() * da;
            // w = w * L^{-T}  <=>  solve L w_row-systems: (L^{-T}) on the right.
            let mut wt = w.transpose();
            l.solve_lower_triangular_mut(&mut wt);
            w = wt.transpose();
            stacked.set_column(k, &DVector::from_column_slice(w.as_slice()));
        }
        // Domain whitening by L_theta^{-T}.
        let mut st = stacked.transpose();
        self.g_theta.chol_l().solve_lower_triangular_mut(&mut st);
        let whitened = st.transpose();
        Ok(whitened.singular_values().max())
    }

    /// Checks Assumption-style skew-adjointness of `A(theta)` in the
    /// `theta`-dependent Gram; returns the relative defect.
    pub fn skew_defect_at(&self, theta: &DVector<f64>) -> Result<f64> {
        let g = self.gram_at(theta)?;
        Ok(skew_defect(&self.a_of(theta), &g))
    }

    /// Simulates `dz/dt = A(theta) z + f(t) + eta`, `y = C z + nu`.
    pub fn simulate(
        &self,
        z0: &DVector<f64>,
        theta: &DVector<f64>,
        eta: Option<&NoiseRealization>,
        nu: Option<&NoiseRealization>,
        grid: &TimeGrid,
    ) -> Result<Trajectory> {
        if self.load.len() != grid.n_nodes() {
            return Err(Error::dim(
                "BilinearFamily load nodes",
                grid.n_nodes(),
                self.load.len(),
            ));
        }
        let a = self.a_of(theta);
        simulate_plant(&a, &self.c, self.load.clone(), z0, eta, nu, grid)
    }
}

fn simulate_plant(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    mut loads: Vec<DVector<f64>>,
    z0: &DVector<f64>,
    eta: Option<&NoiseRealization>,
    nu: Option<&NoiseRealization>,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    let n = a.nrows();
    if z0.len() != n {
        return Err(Error::dim("simulate initial state", n, z0.len()));
    }
    if loads.len() != grid.n_nodes() {
        return Err(Error::dim("simulate loads", grid.n_nodes(), loads.len()));
    }
    if let Some(e) = eta {
        if e.dim() != n || e.n_nodes() != grid.n_nodes() {
            return Err(Error::dim("input noise", n, e.dim()));
        }
        for (i, l) in loads.iter_mut().enumerate() {
            *l += e.at(i);
        }
    }
    let stepper = Stepper::new(a, grid.dt())?;
    let states = crate::integrate::propagate(&stepper, z0, &loads);
    let outputs = states
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let mut y = c * z;
            if let Some(v) = nu {
                y += v.at(i);
            }
            y
        })
        .collect();
    Ok(Trajectory { states, outputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn oscillator_2d() -> LtiSystem {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let b = SourceOperator::Constant(DMatrix::zeros(2, 1));
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        LtiSystem::new(
            a,
            b,
            c,
            InnerProductSpace::standard(2),
            InnerProductSpace::standard(1),
            true,
        )
        .unwrap()
    }

    #[test]
    fn zero_everything_stays_zero() {
        let sys = oscillator_2d();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let traj = sys
            .simulate(&DVector::zeros(2), &DVector::zeros(1), None, None, &grid)
            .unwrap();
        for z in &traj.states {
            assert_eq!(z.norm(), 0.0);
        }
        for y in &traj.outputs {
            assert_eq!(y.norm(), 0.0);
        }
    }

    #[test]
    fn harmonic_oscillator_matches_closed_form() {
        let sys = oscillator_2d();
        let grid = TimeGrid::new(2.0, 2000).unwrap();
        let traj = sys
            .simulate(
                &DVector::from_vec(vec![1.0, 0.0]),
                &DVector::zeros(1),
                None,
                None,
                &grid,
            )
            .unwrap();
        for (i, z) in traj.states.iter().enumerate() {
            let t = grid.node(i);
            let exact = DVector::from_vec(vec![t.cos(), -t.sin()]);
            assert!((z - exact).norm() < 1e-6, "node {i}");
        }
    }

    #[test]
    fn energy_conserved_without_noise_or_load() {
        let sys = oscillator_2d();
        let grid = TimeGrid::new(10.0, 500).unwrap();
        let z0 = DVector::from_vec(vec![0.3, -1.2]);
        let traj = sys
            .simulate(&z0, &DVector::zeros(1), None, None, &grid)
            .unwrap();
        let e0 = sys.g_x.norm(&z0);
        for z in &traj.states {
            assert!((sys.g_x.norm(z) - e0).abs() <= 1e-10 * e0);
        }
    }

    #[test]
    fn skew_flag_rejects_non_conservative_generators() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.3]);
        let r = LtiSystem::new(
            a,
            SourceOperator::Constant(DMatrix::zeros(2, 1)),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            InnerProductSpace::standard(2),
            InnerProductSpace::standard(1),
            true,
        );
        assert!(r.is_err());
    }

    #[test]
    fn zero_delta_family_reproduces_lti_bitwise() {
        let sys = oscillator_2d();
        let grid = TimeGrid::new(3.0, 120).unwrap();
        // Encode the same dynamics as a bilinear family with dA = 0 and the
        // LTI source folded into the load (B const, theta scalar 1).
        let theta_l = DVector::from_vec(vec![0.7]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let lti = LtiSystem::new(
            sys.a.clone(),
            SourceOperator::Constant(b.clone()),
            sys.c.clone(),
            sys.g_x.clone(),
            sys.g_y.clone(),
            true,
        )
        .unwrap();
        let fam = BilinearFamily {
            a0: sys.a.clone(),
            delta_a: vec![DMatrix::zeros(2, 2)],
            load: vec![&b * &theta_l; grid.n_nodes()],
            gram_of: GramMap::Constant(sys.g_x.clone()),
            c: sys.c.clone(),
            g_y: sys.g_y.clone(),
            g_theta: InnerProductSpace::standard(1),
        };
        let z0 = DVector::from_vec(vec![0.2, 0.4]);
        let t1 = lti.simulate(&z0, &theta_l, None, None, &grid).unwrap();
        let t2 = fam
            .simulate(&z0, &DVector::zeros(1), None, None, &grid)
            .unwrap();
        for (a, b) in t1.states.iter().zip(t2.states.iter()) {
            assert_eq!(a.as_slice(), b.as_slice(), "states must match bit-for-bit");
        }
    }

    #[test]
    fn lambda_apply_is_bilinear_and_matches_columns() {
        let da1 = DMatrix::identity(3, 3);
        let da2 = DMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64);
        let fam = BilinearFamily {
            a0: DMatrix::zeros(3, 3),
            delta_a: vec![da1, da2],
            load: vec![],
            gram_of: GramMap::Constant(InnerProductSpace::standard(3)),
            c: DMatrix::identity(3, 3),
            g_y: InnerProductSpace::standard(3),
            g_theta: InnerProductSpace::standard(2),
        };
        let z = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        let xi = DVector::from_vec(vec![0.5, -0.25]);
        let direct = fam.lambda_apply(&z, &xi);
        let via_cols = fam.lambda_columns(&z) * &xi;
        assert_relative_eq!(direct, via_cols, epsilon = 1e-14);
        // xi = 0 gives zero; single identity block scales.
        assert_eq!(fam.lambda_apply(&z, &DVector::zeros(2)).norm(), 0.0);
        let only_first = fam.lambda_apply(&z, &DVector::from_vec(vec![2.0, 0.0]));
        assert_relative_eq!(only_first, &z * 2.0, epsilon = 1e-14);
    }

    #[test]
    fn delta_norm_bound_dominates_random_directions() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha12Rng;
        use rand_distr::StandardNormal;
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let n = 4;
        let p = 3;
        let delta_a: Vec<_> = (0..p)
            .map(|_| DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let fam = BilinearFamily {
            a0: DMatrix::zeros(n, n),
            delta_a,
            load: vec![],
            gram_of: GramMap::Constant(InnerProductSpace::standard(n)),
            c: DMatrix::identity(n, n),
            g_y: InnerProductSpace::standard(n),
            g_theta: InnerProductSpace::standard(p),
        };
        let bound = fam.delta_norm_bound(&DVector::zeros(p)).unwrap();
        let g_x = InnerProductSpace::standard(n);
        for _ in 0..50 {
            let xi = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut da = DMatrix::zeros(n, n);
            for (k, d) in fam.delta_a.iter().enumerate() {
                da += d * xi[k];
            }
            let opn = crate::space::operator_norm(&da, &g_x, &g_x);
            assert!(opn <= bound * xi.norm() * (1.0 + 1e-12));
        }
    }
}
