//! Complex linear algebra and stochastic channel generation.
//!
//! Channels are block-flat Rayleigh: the column of device `i` in round `t` is
//! `h_i ~ CN(0, Λ_i I_m)` with `Λ_i` from a free-space path-loss model and a
//! device distance drawn once per experiment. Every column comes from its own
//! stream keyed by `(round, device)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{param, Error, Result};
use crate::rng::StreamKey;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Condition-number ceiling above which a Gram matrix is treated as singular.
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// Dense complex matrix, column major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix(DMatrix<Complex64>);

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    /// Builds a matrix from its columns. All columns must share one length.
    pub fn from_columns(rows: usize, columns: &[Vec<Complex64>]) -> Result<Self> {
        if columns.iter().any(|c| c.len() != rows) {
            return Err(param("all columns must have the same length"));
        }
        Ok(Self(DMatrix::from_fn(rows, columns.len(), |r, c| columns[c][r])))
    }

    /// Builds a matrix from column-major entries.
    pub fn from_column_slice(rows: usize, cols: usize, entries: &[Complex64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(param(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                entries.len()
            )));
        }
        Ok(Self(DMatrix::from_column_slice(rows, cols, entries)))
    }

    pub fn identity_embedding(rows: usize, cols: usize) -> Self {
        Self(DMatrix::from_fn(
            rows,
            cols,
            |r, c| {
                if r == c {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            },
        ))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.0[(row, col)]
    }

    pub fn column(&self, col: usize) -> Vec<Complex64> {
        self.0.column(col).iter().copied().collect()
    }

    /// Conjugate transpose.
    pub fn hermitian(&self) -> Self {
        Self(self.0.adjoint())
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols(), "dimension mismatch in mul_vec");
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows()];
        for (c, xc) in x.iter().enumerate() {
            for (r, o) in out.iter_mut().enumerate() {
                *o += self.0[(r, c)] * xc;
            }
        }
        out
    }

    /// `H^H H`.
    pub fn gram(&self) -> DMatrix<Complex64> {
        self.0.adjoint() * &self.0
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }
}

/// Inner product `a^H b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    assert_eq!(a.len(), b.len(), "dimension mismatch in inner product");
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Receiver noise parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Noise power per complex sample (W).
    pub sigma2: f64,
    pub seed: u64,
}

impl NoiseParams {
    pub fn new(sigma2: f64, seed: u64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(param(format!("noise power must be positive, got {sigma2}")));
        }
        Ok(Self { sigma2, seed })
    }
}

/// Draws a vector of i.i.d. `CN(0, variance)` entries: real and imaginary
/// parts are independent `N(0, variance / 2)`.
pub fn sample_cscg<R: Rng + ?Sized>(dim: usize, variance: f64, rng: &mut R) -> Result<Vec<Complex64>> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(param(format!("CSCG variance must be positive, got {variance}")));
    }
    let scale = (variance / 2.0).sqrt();
    Ok((0..dim)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(scale * re, scale * im)
        })
        .collect())
}

/// Free-space power gain `(c_l / (4π f_c r))²`.
pub fn path_loss(distance: f64, carrier_freq: f64) -> Result<f64> {
    if !(distance > 0.0) || !(carrier_freq > 0.0) {
        return Err(param(format!(
            "distance and carrier frequency must be positive (got {distance} m, {carrier_freq} Hz)"
        )));
    }
    let amplitude = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * carrier_freq * distance);
    Ok(amplitude * amplitude)
}

/// Device placement, fixed for the lifetime of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub distances: Vec<f64>,
    pub path_loss: Vec<f64>,
}

impl Geometry {
    /// Distances `r_i = r_max · sqrt(U)` with `U` uniform on (0, 1], i.e.
    /// devices uniform over a disc of radius `r_max`.
    pub fn sample<R: Rng + ?Sized>(n: usize, max_distance: f64, carrier_freq: f64, rng: &mut R) -> Result<Self> {
        if !(max_distance > 0.0) {
            return Err(param("maximum distance must be positive"));
        }
        let distances: Vec<f64> = (0..n)
            .map(|_| {
                let u = 1.0 - rng.random::<f64>();
                max_distance * u.sqrt()
            })
            .collect();
        let path_loss = distances.iter().map(|&r| path_loss(r, carrier_freq)).collect::<Result<Vec<_>>>()?;
        Ok(Self { distances, path_loss })
    }

    /// Every device at unit gain; useful for normalized experiments and tests.
    pub fn unit(n: usize) -> Self {
        Self { distances: vec![1.0; n], path_loss: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

/// One round's channel matrix over the active devices.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub round: usize,
    /// Device index of each column of `h`.
    pub devices: Vec<usize>,
    /// `m x rn` channel matrix.
    pub h: ComplexMatrix,
    pub path_loss: Vec<f64>,
    pub distances: Vec<f64>,
}

impl ChannelRealization {
    pub fn antennas(&self) -> usize {
        self.h.rows()
    }

    pub fn active(&self) -> usize {
        self.h.cols()
    }

    pub fn column(&self, i: usize) -> Vec<Complex64> {
        self.h.column(i)
    }
}

/// Draws `H^(t)` for the given active set. Column `i` depends only on
/// `(key, round, device)`, so replays are bit-identical regardless of which
/// other devices are active.
pub fn sample_channel(
    round: usize,
    antennas: usize,
    geometry: &Geometry,
    active: &[usize],
    key: StreamKey,
) -> Result<ChannelRealization> {
    if antennas == 0 {
        return Err(param("antenna count must be positive"));
    }
    let mut columns = Vec::with_capacity(active.len());
    for &dev in active {
        let gain = *geometry.path_loss.get(dev).ok_or_else(|| param(format!("device {dev} outside the geometry")))?;
        let mut rng = key.round(round).index(dev).rng();
        columns.push(sample_cscg(antennas, gain, &mut rng)?);
    }
    Ok(ChannelRealization {
        round,
        devices: active.to_vec(),
        h: ComplexMatrix::from_columns(antennas, &columns)?,
        path_loss: active.iter().map(|&d| geometry.path_loss[d]).collect(),
        distances: active.iter().map(|&d| geometry.distances[d]).collect(),
    })
}

fn one_norm(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Solves `(H^H H) x = b` through a Cholesky factorization of the Gram
/// matrix, with one step of iterative refinement.
///
/// Fails with [`Error::Singular`] when the factorization breaks down or the
/// 1-norm condition number of the Gram matrix exceeds [`GRAM_CONDITION_LIMIT`].
pub fn gram_solve(h: &ComplexMatrix, b: &[Complex64]) -> Result<Vec<Complex64>> {
    if b.len() != h.cols() {
        return Err(param(format!("rhs has length {}, expected {}", b.len(), h.cols())));
    }
    let gram = h.gram();
    let chol = gram.clone().cholesky().ok_or(Error::Singular { condition: f64::INFINITY })?;
    let inverse = chol.inverse();
    let condition = one_norm(&gram) * one_norm(&inverse);
    if !condition.is_finite() || condition > GRAM_CONDITION_LIMIT {
        return Err(Error::Singular { condition });
    }
    let rhs = nalgebra::DVector::from_column_slice(b);
    let mut x = chol.solve(&rhs);
    let residual = &rhs - &gram * &x;
    x += chol.solve(&residual);
    Ok(x.iter().copied().collect())
}
