//! The analog uplink: power scaling, simultaneous transmission over the fading
//! multiple-access channel, receive combining and the noisy global update.
//!
//! Model differences are real symbols. For coordinate `j` the receiver sees
//! `y_j = Σ_i h_i s_i Δ̄_{i,j} + n_j` and estimates `Δ̂_j = Re[wᴴ y_j]`.
//! [`NoiseConvention`] fixes how much of the receiver noise power lands in
//! that real estimate.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{inner, norm, sample_cscg, ChannelRealization};
use crate::error::{param, Error, Result};
use crate::fl::{ClippedUpdate, Domain, ModelState};

/// How the complex receiver noise maps onto the real-valued estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseConvention {
    /// `n_j ~ CN(0, σ² I)`; the real part carries `‖w‖²σ²/2`.
    #[default]
    Half,
    /// The real estimate carries the full `‖w‖²σ²`, so every analytic
    /// formula can be written with `σ²` verbatim.
    Full,
}

impl NoiseConvention {
    /// Fraction of `σ²` that reaches one real coordinate of the estimate.
    pub fn real_fraction(self) -> f64 {
        match self {
            NoiseConvention::Half => 0.5,
            NoiseConvention::Full => 1.0,
        }
    }

    /// Real-domain noise variance per unit combiner energy.
    pub fn effective_sigma2(self, sigma2: f64) -> f64 {
        self.real_fraction() * sigma2
    }

    /// Variance of the complex receiver noise samples to draw.
    fn receiver_variance(self, sigma2: f64) -> f64 {
        2.0 * self.real_fraction() * sigma2
    }
}

impl std::str::FromStr for NoiseConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half" => Ok(Self::Half),
            "full" => Ok(Self::Full),
            other => Err(Error::Config(format!("unknown noise convention `{other}`"))),
        }
    }
}

/// Per-device transmit power limit `c²|s_i|² ≤ dP`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLimit {
    pub clip: f64,
    pub dim: usize,
    pub power: f64,
}

impl PowerLimit {
    pub fn budget(&self) -> f64 {
        self.dim as f64 * self.power
    }

    /// Checks every scalar against the limit, with a relative slack of 1e-9.
    pub fn audit(&self, scaling: &PowerScaling, devices: &[usize]) -> Result<()> {
        let budget = self.budget();
        for (k, s) in scaling.s.iter().enumerate() {
            let required = self.clip * self.clip * s.norm_sqr();
            if required > budget * (1.0 + 1e-9) {
                return Err(Error::PowerInfeasible { device: devices.get(k).copied().unwrap_or(k), required, budget });
            }
        }
        Ok(())
    }
}

/// Power scaling factors `s_i^(t)` of the active devices, in channel-column order.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerScaling {
    pub round: usize,
    pub s: Vec<Complex64>,
}

/// Receive combiner `w^(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    pub round: usize,
    pub w: Vec<Complex64>,
}

impl Combiner {
    pub fn new(round: usize, w: Vec<Complex64>) -> Result<Self> {
        if norm(&w) == 0.0 {
            return Err(param("combiner must have positive norm"));
        }
        Ok(Self { round, w })
    }

    pub fn norm(&self) -> f64 {
        norm(&self.w)
    }
}

/// Effective gains `wᴴ h_i s_i`.
pub fn effective_gains(w: &Combiner, channel: &ChannelRealization, scaling: &PowerScaling) -> Vec<Complex64> {
    (0..channel.active()).map(|i| inner(&w.w, &channel.column(i)) * scaling.s[i]).collect()
}

/// Channel-inversion power scaling `s_i = 1 / (wᴴ h_i)`, which aligns every
/// device to unit effective gain. When `limit` is given the result is audited
/// against the transmit power constraint.
pub fn channel_inversion_scaling(
    w: &Combiner,
    channel: &ChannelRealization,
    limit: Option<&PowerLimit>,
) -> Result<PowerScaling> {
    if w.w.len() != channel.antennas() {
        return Err(param("combiner length does not match antenna count"));
    }
    let wn = w.norm();
    let mut s = Vec::with_capacity(channel.active());
    for i in 0..channel.active() {
        let h = channel.column(i);
        let g = inner(&w.w, &h);
        if g.norm() <= 1e-14 * wn * norm(&h) || g.norm() == 0.0 {
            return Err(Error::DegenerateChannel { device: channel.devices.get(i).copied().unwrap_or(i) });
        }
        s.push(g.inv());
    }
    let scaling = PowerScaling { round: channel.round, s };
    if let Some(limit) = limit {
        limit.audit(&scaling, &channel.devices)?;
    }
    Ok(scaling)
}

/// Analytic error terms of an over-the-air aggregate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    /// Misalignment energy seen by the real estimate:
    /// `Σ_j (Σ_i Re(1 − wᴴh_i s_i) Δ̄_{i,j})²`. Together with `noise_power`
    /// it is the exact mean-square estimation error.
    pub lambda_t: f64,
    /// Per-device misalignment form `Σ_j Σ_i |(1 − wᴴh_i s_i) Δ̄_{i,j}|²`.
    pub lambda_device_sum: f64,
    /// `d ‖w‖² σ²` times the convention's real fraction.
    pub noise_power: f64,
}

impl ErrorStats {
    pub fn mse(&self) -> f64 {
        self.lambda_t + self.noise_power
    }
}

/// Over-the-air estimate of `Σ_i Δ̄_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateEstimate {
    pub delta_hat: Vec<f64>,
    pub stats: ErrorStats,
}

fn check_shapes(
    updates: &[ClippedUpdate],
    s: &PowerScaling,
    channel: &ChannelRealization,
    w: &Combiner,
) -> Result<usize> {
    if updates.len() != channel.active() || s.s.len() != channel.active() {
        return Err(param(format!(
            "{} updates and {} scalars for {} active devices",
            updates.len(),
            s.s.len(),
            channel.active()
        )));
    }
    if w.w.len() != channel.antennas() {
        return Err(param("combiner length does not match antenna count"));
    }
    let dim = updates.first().map(|u| u.delta_bar.len()).ok_or_else(|| param("no updates"))?;
    if updates.iter().any(|u| u.delta_bar.len() != dim) {
        return Err(param("updates have different dimensions"));
    }
    Ok(dim)
}

/// Misalignment and noise terms of the estimation error for `(w, s)`.
pub fn estimation_error_stats(
    updates: &[ClippedUpdate],
    s: &PowerScaling,
    channel: &ChannelRealization,
    w: &Combiner,
    sigma2: f64,
    convention: NoiseConvention,
) -> Result<ErrorStats> {
    let dim = check_shapes(updates, s, channel, w)?;
    let gains = effective_gains(w, channel, s);
    let mut lambda_t = 0.0;
    let mut lambda_device_sum = 0.0;
    for j in 0..dim {
        let mut real_err = 0.0;
        for (g, u) in gains.iter().zip(updates) {
            let mis = Complex64::new(1.0, 0.0) - g;
            real_err += mis.re * u.delta_bar[j];
            lambda_device_sum += (mis * u.delta_bar[j]).norm_sqr();
        }
        lambda_t += real_err * real_err;
    }
    let wn = w.norm();
    Ok(ErrorStats {
        lambda_t,
        lambda_device_sum,
        noise_power: dim as f64 * wn * wn * convention.effective_sigma2(sigma2),
    })
}

/// Simulates one uplink: every active device transmits `s_i Δ̄_i` symbol by
/// symbol, the receiver adds CSCG noise of power `sigma2` (none when zero)
/// and combines with `w`.
#[allow(clippy::too_many_arguments)]
pub fn air_aggregate<R: Rng + ?Sized>(
    updates: &[ClippedUpdate],
    s: &PowerScaling,
    channel: &ChannelRealization,
    w: &Combiner,
    sigma2: f64,
    convention: NoiseConvention,
    rng: &mut R,
) -> Result<AggregateEstimate> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(param(format!("noise power must be non-negative, got {sigma2}")));
    }
    let dim = check_shapes(updates, s, channel, w)?;
    let m = channel.antennas();
    let tx: Vec<Vec<Complex64>> =
        (0..channel.active()).map(|i| channel.column(i).into_iter().map(|h| h * s.s[i]).collect()).collect();
    let mut delta_hat = Vec::with_capacity(dim);
    let mut y = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..dim {
        if sigma2 > 0.0 {
            y = sample_cscg(m, convention.receiver_variance(sigma2), rng)?;
        } else {
            y.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        }
        for (col, u) in tx.iter().zip(updates) {
            let x = u.delta_bar[j];
            for (yk, hk) in y.iter_mut().zip(col) {
                *yk += hk * x;
            }
        }
        delta_hat.push(inner(&w.w, &y).re);
    }
    let stats = estimation_error_stats(updates, s, channel, w, sigma2, convention)?;
    Ok(AggregateEstimate { delta_hat, stats })
}

/// `θ − (η / rn) Δ̂`, then projection onto the domain when it is bounded.
pub fn global_update_air(
    theta: &ModelState,
    est: &AggregateEstimate,
    eta: f64,
    active: usize,
    domain: Option<&Domain>,
) -> Result<ModelState> {
    if est.delta_hat.len() != theta.dim() {
        return Err(param("estimate dimension does not match the model"));
    }
    let step = eta / active as f64;
    let mut next = ModelState { theta: theta.theta.iter().zip(&est.delta_hat).map(|(t, d)| t - step * d).collect() };
    if let Some(domain) = domain {
        domain.project(&mut next);
    }
    Ok(next)
}
