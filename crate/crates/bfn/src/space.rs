//! Weighted inner-product spaces and adjoints.
//!
//! A finite-dimensional Hilbert space is carried around as its Gram matrix
//! `G`: the inner product is `<x, y> = x^T G y`. Adjoints of operators
//! between two such spaces are `Op* = G_in^{-1} Op^T G_out`, and operator
//! norms are computed after whitening both sides with the Cholesky factors
//! of the Grams.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Relative symmetry tolerance accepted when validating a Gram matrix.
pub const GRAM_SYMMETRY_TOL: f64 = 1e-12;

/// A state/output/parameter space with inner product `<x, y> = x^T G y`.
#[derive(Debug, Clone)]
pub struct InnerProductSpace {
    gram: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl InnerProductSpace {
    /// Builds the space from an SPD Gram matrix. Fails if `gram` is not
    /// symmetric to within [`GRAM_SYMMETRY_TOL`] (relative) or not positive
    /// definite.
    pub fn new(gram: DMatrix<f64>) -> Result<Self> {
        if gram.nrows() != gram.ncols() {
            return Err(Error::InvalidGram {
                context: format!("must be square, got {}x{}", gram.nrows(), gram.ncols()),
            });
        }
        let asym = (&gram - gram.transpose()).norm();
        let scale = gram.norm().max(f64::MIN_POSITIVE);
        if asym > GRAM_SYMMETRY_TOL * scale {
            return Err(Error::InvalidGram {
                context: format!("not symmetric: relative asymmetry {:.3e}", asym / scale),
            });
        }
        // Symmetrize before factoring so roundoff-level asymmetry cannot leak.
        let sym = (&gram + gram.transpose()) * 0.5;
        let chol = Cholesky::new(sym.clone()).ok_or_else(|| Error::InvalidGram {
            context: "not positive definite".into(),
        })?;
        Ok(InnerProductSpace { gram: sym, chol })
    }

    /// Euclidean space of the given dimension (`G = I`).
    pub fn standard(dim: usize) -> Self {
        let gram = DMatrix::identity(dim, dim);
        let chol = Cholesky::new(gram.clone()).expect("identity is SPD");
        InnerProductSpace { gram, chol }
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.gram * y))
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    /// Solves `G x = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    /// Solves `G X = Rhs` column-wise.
    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    /// Lower Cholesky factor `L` with `G = L L^T`.
    pub fn chol_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Whitens a vector: returns `L^T x`, so `|L^T x|_2 = |x|_G`.
    pub fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol.l().transpose() * x
    }
}

/// Adjoint of `op : (R^n, G_in) -> (R^m, G_out)` with respect to the weighted
/// inner products: `op* = G_in^{-1} op^T G_out`, so that
/// `<op x, y>_{G_out} = <x, op* y>_{G_in}` for all `x, y`.
pub fn weighted_adjoint(
    op: &DMatrix<f64>,
    g_in: &InnerProductSpace,
    g_out: &InnerProductSpace,
) -> Result<DMatrix<f64>> {
    if op.ncols() != g_in.dim() {
        return Err(Error::dim(
            "weighted_adjoint input space",
            g_in.dim(),
            op.ncols(),
        ));
    }
    if op.nrows() != g_out.dim() {
        return Err(Error::dim(
            "weighted_adjoint output space",
            g_out.dim(),
            op.nrows(),
        ));
    }
    Ok(g_in.solve_mat(&(op.transpose() * g_out.gram())))
}

/// Operator norm of `op : (R^n, G_in) -> (R^m, G_out)`:
/// the largest singular value of `L_out^T op L_in^{-T}`.
pub fn operator_norm(
    op: &DMatrix<f64>,
    g_in: &InnerProductSpace,
    g_out: &InnerProductSpace,
) -> f64 {
    // X = op * L_in^{-T}  <=>  X L_in^T = op  <=>  L_in X^T = op^T.
    let mut xt = op.transpose();
    g_in.chol_l().solve_lower_triangular_mut(&mut xt);
    let whitened = g_out.chol_l().transpose() * xt.transpose();
    whitened.singular_values().max()
}

/// Smallest eigenvalue of the pencil `W v = lambda G v` for symmetric `W`
/// and the SPD Gram `G`: the minimum of `<v, W v> / |v|_G^2`.
pub fn min_eig_pair(w: &DMatrix<f64>, space: &InnerProductSpace) -> f64 {
    let l = space.chol_l();
    // B = L^{-1} W L^{-T}
    let mut b = w.clone();
    l.solve_lower_triangular_mut(&mut b);
    let mut bt = b.transpose();
    l.solve_lower_triangular_mut(&mut bt);
    let sym = (&bt + bt.transpose()) * 0.5;
    nalgebra::SymmetricEigen::new(sym).eigenvalues.min()
}

/// Symmetric PSD square root, clamping roundoff-negative eigenvalues to zero.
pub fn spd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}
