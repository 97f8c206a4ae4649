//! Randomized test systems for the verification suites.
//!
//! A generator that is skew-adjoint in a random SPD Gram `G` is built as
//! `A = G^{-1} S` with `S` Euclidean-skew: then `A^T G + G A = S^T + S = 0`.

use crate::model::{LtiSystem, SourceOperator};
use crate::space::InnerProductSpace;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use std::ops::RangeInclusive;

/// Random SPD matrix with eigenvalues in roughly `[0.5, n + 1]`.
pub fn random_spd(rng: &mut ChaCha12Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &m * m.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5
}

/// Random Euclidean-skew matrix.
pub fn random_skew(rng: &mut ChaCha12Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&m - m.transpose()) * 0.5
}

/// Random conservative plant: `A` skew-adjoint in a random state Gram,
/// dense `C` and constant `B`, random SPD output Gram.
pub fn random_skew_system(
    rng: &mut ChaCha12Rng,
    state_dims: RangeInclusive<usize>,
    output_dims: RangeInclusive<usize>,
) -> LtiSystem {
    let n = rng.gen_range(state_dims);
    let m = rng.gen_range(output_dims);
    let p = rng.gen_range(1..=n.min(3));
    let g_x = InnerProductSpace::new(random_spd(rng, n)).expect("SPD by construction");
    let a = g_x.solve_mat(&random_skew(rng, n));
    let c = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let b = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let g_y = InnerProductSpace::new(random_spd(rng, m)).expect("SPD by construction");
    LtiSystem::new(a, SourceOperator::Constant(b), c, g_x, g_y, true)
        .expect("construction is skew by design")
}

/// Random vector with standard normal entries.
pub fn random_vector(rng: &mut ChaCha12Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}
