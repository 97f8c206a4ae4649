//! Stochastic input and measurement-noise generation.
//!
//! All randomness comes from `ChaCha12`, seeded from a master seed with one
//! independent stream per channel id, so adding a channel never perturbs the
//! draws of existing ones and identical `(seed, channel, grid)` triples give
//! bit-identical paths on every platform.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use std::io::{BufRead, Write};

/// A `(master seed, channel id)` pair addressing one independent RNG stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    pub master: u64,
    pub channel: u64,
}

impl NoiseStream {
    pub fn new(master: u64, channel: u64) -> Self {
        NoiseStream { master, channel }
    }

    /// Sub-channel `j` of this stream (used e.g. for the modes of a
    /// vector-valued noise, which consume `channel..channel + n_modes`).
    pub fn sub(&self, j: u64) -> Self {
        NoiseStream {
            master: self.master,
            channel: self.channel + j,
        }
    }

    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.master);
        rng.set_stream(self.channel);
        rng
    }
}

impl From<u64> for NoiseStream {
    fn from(master: u64) -> Self {
        NoiseStream { master, channel: 0 }
    }
}

/// A sampled (possibly vector-valued) signal on grid nodes.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    values: Vec<DVector<f64>>,
    seed: u64,
}

impl NoiseRealization {
    pub fn new(values: Vec<DVector<f64>>, seed: u64) -> Self {
        NoiseRealization { values, seed }
    }

    pub fn zeros(grid: &TimeGrid, dim: usize) -> Self {
        NoiseRealization {
            values: vec![DVector::zeros(dim); grid.n_nodes()],
            seed: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn at(&self, i: usize) -> &DVector<f64> {
        &self.values[i]
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// Scalar view of a one-dimensional realization.
    pub fn scalar(&self, i: usize) -> f64 {
        self.values[i][0]
    }

    pub fn scale_by(mut self, s: f64) -> Self {
        for v in &mut self.values {
            *v *= s;
        }
        self
    }

    /// Writes `# seed <seed>` then a `t,v0,v1,...` table with 17 significant
    /// digits, enough for an exact f64 round trip.
    pub fn to_csv<W: Write>(&self, grid: &TimeGrid, mut w: W) -> Result<()> {
        if self.n_nodes() != grid.n_nodes() {
            return Err(Error::dim("noise CSV grid", grid.n_nodes(), self.n_nodes()));
        }
        writeln!(w, "# seed {}", self.seed)?;
        let header: Vec<String> = (0..self.dim()).map(|k| format!("v{k}")).collect();
        writeln!(w, "t,{}", header.join(","))?;
        for (i, v) in self.values.iter().enumerate() {
            let row: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
            writeln!(w, "{:.16e},{}", grid.node(i), row.join(","))?;
        }
        Ok(())
    }

    /// Reads the format written by [`NoiseRealization::to_csv`]; returns the
    /// node times alongside the realization.
    pub fn from_csv<R: BufRead>(r: R) -> Result<(Vec<f64>, Self)> {
        let mut seed = 0u64;
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut saw_header = false;
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(s) = rest.trim().strip_prefix("seed") {
                    seed = s
                        .trim()
                        .parse()
                        .map_err(|e| Error::Config(format!("bad seed line: {e}")))?;
                }
                continue;
            }
            if !saw_header {
                saw_header = true;
                continue;
            }
            let mut cells = line.split(',');
            let t: f64 = cells
                .next()
                .ok_or_else(|| Error::Config("empty CSV row".into()))?
                .parse()
                .map_err(|e| Error::Config(format!("bad time cell: {e}")))?;
            let vals: std::result::Result<Vec<f64>, _> = cells.map(|c| c.parse()).collect();
            let vals = vals.map_err(|e| Error::Config(format!("bad value cell: {e}")))?;
            times.push(t);
            values.push(DVector::from_vec(vals));
        }
        Ok((times, NoiseRealization { values, seed }))
    }
}

/// Scalar input signal `u(t)`: a Gaussian process realized as `u = 4 r_1`
/// where `r` solves the 2-D SDE
/// `dr = [[0, 1], [-1.9, -2.7]] r dt + (0, 1)^T dw`,
/// `r(0) ~ N(0, (1/59.8) [[4, 2], [2, 11]])`.
///
/// Integration is Euler-Maruyama on a 10x refined grid, subsampled back to
/// the grid nodes. The initial covariance is taken verbatim from the model
/// description; note it is not the Lyapunov-stationary covariance of the
/// stated SDE (that one is `diag(1/10.26, 1/5.4)` with zero cross term), so
/// the variance of `u` relaxes from `16*4/59.8 ≈ 1.070` at `t = 0` towards
/// `16/10.26 ≈ 1.559` over a couple of time units.
pub fn sample_gp_input(stream: NoiseStream, grid: &TimeGrid) -> NoiseRealization {
    const SUBSTEPS: usize = 10;
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.9, -2.7]);
    // Cholesky factor of (1/59.8) [[4, 2], [2, 11]].
    let cov0 = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 11.0]) / 59.8;
    let l0 = cov0.cholesky().expect("init covariance is SPD").l();

    let mut rng = stream.rng();
    let mut r = &l0 * DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let dt_sub = grid.dt() / SUBSTEPS as f64;
    let sq = dt_sub.sqrt();
    let mut values = Vec::with_capacity(grid.n_nodes());
    values.push(DVector::from_vec(vec![4.0 * r[0]]));
    for _ in 0..grid.n_steps() {
        for _ in 0..SUBSTEPS {
            let dw: f64 = rng.sample::<f64, _>(StandardNormal);
            r = &r + (&a * &r) * dt_sub + DVector::from_vec(vec![0.0, sq * dw]);
        }
        values.push(DVector::from_vec(vec![4.0 * r[0]]));
    }
    NoiseRealization {
        values,
        seed: stream.master,
    }
}

/// Ornstein-Uhlenbeck output noise `v(t)`, solving
/// `dv = -(25/2) v dt + (5/2) dw`, `v(0) ~ N(0, 1/4)`, multiplied by `scale`.
///
/// Sampled with the exact transition density:
/// `v_{i+1} = e^{-12.5 dt} v_i + sigma_dt N(0,1)` with
/// `sigma_dt^2 = (1/4)(1 - e^{-25 dt})`, so the path law is exact at the
/// nodes for any step size.
pub fn sample_ou(stream: NoiseStream, grid: &TimeGrid, scale: f64) -> NoiseRealization {
    let mut rng = stream.rng();
    let dt = grid.dt();
    let decay = (-12.5 * dt).exp();
    let sigma_dt = (0.25 * (1.0 - (-25.0 * dt).exp())).sqrt();
    let mut v: f64 = 0.5 * rng.sample::<f64, _>(StandardNormal);
    let mut values = Vec::with_capacity(grid.n_nodes());
    values.push(DVector::from_vec(vec![scale * v]));
    for _ in 0..grid.n_steps() {
        v = decay * v + sigma_dt * rng.sample::<f64, _>(StandardNormal);
        values.push(DVector::from_vec(vec![scale * v]));
    }
    NoiseRealization {
        values,
        seed: stream.master,
    }
}

/// Spatially structured output noise on the measurement window:
/// `chi(t, x) = sum_{j=1}^{n_modes} (1/j) sin((2j-1) pi x / 0.2) v_j(t)`
/// with independent OU mode processes `v_j` scaled by `ou_scale`, evaluated
/// at the given `x` points. Mode `j` draws from `stream.sub(j - 1)`.
pub fn sample_spatial_noise(
    stream: NoiseStream,
    grid: &TimeGrid,
    n_modes: usize,
    x_points: &[f64],
    ou_scale: f64,
) -> NoiseRealization {
    assert!(n_modes >= 1, "need at least one mode");
    let modes: Vec<NoiseRealization> = (0..n_modes)
        .map(|j| sample_ou(stream.sub(j as u64), grid, ou_scale))
        .collect();
    let dim = x_points.len();
    let mut values = vec![DVector::zeros(dim); grid.n_nodes()];
    for (j, mode) in modes.iter().enumerate() {
        let jj = (j + 1) as f64;
        let shape: Vec<f64> = x_points
            .iter()
            .map(|&x| ((2.0 * jj - 1.0) * std::f64::consts::PI * x / 0.2).sin() / jj)
            .collect();
        for (i, v) in values.iter_mut().enumerate() {
            let c = mode.scalar(i);
            for (k, s) in shape.iter().enumerate() {
                v[k] += s * c;
            }
        }
    }
    NoiseRealization {
        values,
        seed: stream.master,
    }
}
