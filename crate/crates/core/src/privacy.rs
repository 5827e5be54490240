//! User-level privacy accounting: per-round cost `φ_t`, the bounded-domain
//! saturation term `Φ`, the Rényi bound and its conversion to `(ε, δ)`-DP.
//!
//! Every function takes the noise variance that actually reaches the real
//! estimate (see [`crate::aircomp::NoiseConvention::effective_sigma2`]).

use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use crate::aircomp::{effective_gains, Combiner, PowerScaling};
use crate::channel::ChannelRealization;
use crate::error::{param, Error, Result};

/// Smallest admissible slack constant.
pub const MIN_C_DELTA: f64 = 8.0;

fn log_inv_delta(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(param(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(-delta.ln())
}

/// `max_i |wᴴ h_i s_i|² / ‖w‖²`.
pub fn phi_t(w: &Combiner, channel: &ChannelRealization, s: &PowerScaling) -> Result<f64> {
    let wn = w.norm();
    if !(wn > 0.0) {
        return Err(param("combiner must have positive norm"));
    }
    Ok(phi_from_gains(&effective_gains(w, channel, s), wn))
}

/// `φ_t` from precomputed effective gains `wᴴ h_i s_i`.
pub fn phi_from_gains(gains: &[Complex64], w_norm: f64) -> f64 {
    gains.iter().map(|g| g.norm_sqr()).fold(0.0, f64::max) / (w_norm * w_norm)
}

/// `κ^(t) = (ηL / rn) Σ_i |wᴴ h_i s_i|`.
///
/// The effective gains are complex in general; their moduli are summed so the
/// contraction factor stays real and conservative.
pub fn kappa_round(gains: &[Complex64], eta: f64, smoothness: f64, active: usize) -> f64 {
    if eta == 0.0 || gains.is_empty() {
        return 0.0;
    }
    eta * smoothness / active as f64 * gains.iter().map(|g| g.norm()).sum::<f64>()
}

/// Largest `κ^(t)` over a history of rounds.
pub fn kappa_max(
    history: &[(&Combiner, &ChannelRealization, &PowerScaling)],
    eta: f64,
    smoothness: f64,
    active: usize,
) -> Result<f64> {
    if history.is_empty() {
        return Err(param("kappa_max needs at least one round"));
    }
    Ok(history
        .iter()
        .map(|(w, h, s)| kappa_round(&effective_gains(w, h, s), eta, smoothness, active))
        .fold(0.0, f64::max))
}

/// Inputs of the saturation term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationInputs {
    pub phi_last: f64,
    pub kappa_max: f64,
    pub local_steps: usize,
    pub r: f64,
    pub diameter: f64,
    pub n: usize,
    pub eta: f64,
    pub clip: f64,
    pub w_last_norm: f64,
}

/// `Φ = (√φ_{T−1} + (1+κ_max)^Q √r D n / (2ηc‖w^(T−1)‖))²`; infinite for an
/// unbounded domain.
pub fn saturation_phi(x: &SaturationInputs) -> f64 {
    if x.diameter.is_infinite() {
        return f64::INFINITY;
    }
    if x.diameter == 0.0 {
        return x.phi_last;
    }
    let shift = (1.0 + x.kappa_max).powi(x.local_steps as i32) * x.r.sqrt() * x.diameter * x.n as f64
        / (2.0 * x.eta * x.clip * x.w_last_norm);
    (x.phi_last.sqrt() + shift).powi(2)
}

/// `(2αrc²/σ²) · min_term`, where `min_term = min{Σφ_t, Φ}`.
pub fn rdp_epsilon(min_term: f64, alpha: f64, r: f64, clip: f64, sigma2: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(param(format!("Rényi order must exceed 1, got {alpha}")));
    }
    check_scale(r, clip, sigma2)?;
    Ok(2.0 * alpha * r * clip * clip / sigma2 * min_term)
}

/// `ε′ + log(1/δ)/(α−1)`.
pub fn rdp_to_dp(alpha: f64, rdp_eps: f64, delta: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(param(format!("Rényi order must exceed 1, got {alpha}")));
    }
    Ok(rdp_eps + log_inv_delta(delta)? / (alpha - 1.0))
}

fn check_scale(r: f64, clip: f64, sigma2: f64) -> Result<()> {
    if !(r > 0.0 && clip > 0.0 && sigma2 > 0.0) {
        return Err(param("r, c and sigma2 must be positive"));
    }
    Ok(())
}

fn closed_form(min_term: f64, l: f64, c_delta: f64, r: f64, clip: f64, sigma2: f64) -> f64 {
    ((2.0 * c_delta + 8.0) * l * r * clip * clip / sigma2 * min_term).sqrt()
}

/// Smallest `c_δ` that satisfies `c_δ ≥ 4ε′/log(1/δ)` with `ε′ = ε/2`, where
/// `ε` itself is evaluated at that `c_δ`.
pub fn resolve_c_delta(min_term: f64, delta: f64, r: f64, clip: f64, sigma2: f64) -> Result<f64> {
    let l = log_inv_delta(delta)?;
    check_scale(r, clip, sigma2)?;
    if min_term.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let mut c = MIN_C_DELTA;
    for _ in 0..200 {
        let next = MIN_C_DELTA.max(2.0 * closed_form(min_term, l, c, r, clip, sigma2) / l);
        if (next - c).abs() <= 1e-12 * next {
            return Ok(next);
        }
        c = next;
    }
    Ok(c)
}

/// `c_δ` that makes a target `ε` self-consistent: `max(8, 2ε/log(1/δ))`.
pub fn c_delta_for_target(epsilon: f64, delta: f64) -> Result<f64> {
    Ok(MIN_C_DELTA.max(2.0 * epsilon / log_inv_delta(delta)?))
}

/// `ε = √((2c_δ+8) log(1/δ) rc²/σ² · min_term)`.
///
/// Fails with [`Error::InconsistentCDelta`] when the supplied `c_δ` is below
/// `4ε′/log(1/δ)`; the error carries the minimal admissible value.
pub fn dp_epsilon(min_term: f64, delta: f64, c_delta: f64, r: f64, clip: f64, sigma2: f64) -> Result<f64> {
    let l = log_inv_delta(delta)?;
    check_scale(r, clip, sigma2)?;
    if !(min_term >= 0.0) {
        return Err(param(format!("privacy cost must be non-negative, got {min_term}")));
    }
    let eps = closed_form(min_term, l, c_delta, r, clip, sigma2);
    if c_delta < 2.0 * eps / l * (1.0 - 1e-12) {
        return Err(Error::InconsistentCDelta {
            given: c_delta,
            minimal: resolve_c_delta(min_term, delta, r, clip, sigma2)?,
        });
    }
    Ok(eps)
}

/// Rényi order that turns an RDP bound into `ε`-DP at the closed form.
pub fn conversion_order(epsilon: f64, delta: f64) -> Result<f64> {
    Ok(1.0 + 2.0 * log_inv_delta(delta)? / epsilon)
}

/// Per-round quantities the accountant consumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundPrivacy {
    pub phi: f64,
    pub kappa: f64,
    pub w_norm: f64,
}

impl RoundPrivacy {
    pub fn observe(w: &Combiner, channel: &ChannelRealization, s: &PowerScaling, eta: f64, smoothness: f64) -> Self {
        let gains = effective_gains(w, channel, s);
        let w_norm = w.norm();
        Self {
            phi: phi_from_gains(&gains, w_norm),
            kappa: kappa_round(&gains, eta, smoothness, channel.active()),
            w_norm,
        }
    }
}

/// Fixed parameters of an accounting run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccountantSetup {
    pub eta: f64,
    pub local_steps: usize,
    pub r: f64,
    pub n: usize,
    pub diameter: f64,
    pub clip: f64,
    /// Effective noise variance on the real estimate.
    pub sigma2: f64,
    pub delta: f64,
    /// Rényi order reported in the RDP column.
    pub alpha: f64,
    /// Fixed slack constant; `None` resolves the smallest consistent value.
    pub c_delta: Option<f64>,
}

/// One point of the privacy curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyPoint {
    #[serde(rename = "T")]
    pub t: usize,
    pub sum_phi: f64,
    #[serde(rename = "Phi")]
    pub phi_sat: f64,
    pub rdp_eps: f64,
    pub dp_eps: f64,
}

/// Accounting summary after the last round.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLedger {
    pub phi: Vec<f64>,
    pub kappa_max: f64,
    pub phi_sat: f64,
    pub rdp_eps: f64,
    pub dp_eps: f64,
    /// First horizon `T` at which `Σφ_t ≥ Φ`.
    pub burn_in_round: Option<usize>,
}

impl PrivacyLedger {
    pub fn from_rounds(rounds: &[RoundPrivacy], setup: &AccountantSetup) -> Result<Self> {
        let curve = privacy_curve(rounds.len(), rounds, setup)?;
        let last = curve.last().expect("curve is nonempty");
        Ok(Self {
            phi: rounds.iter().map(|x| x.phi).collect(),
            kappa_max: rounds.iter().map(|x| x.kappa).fold(0.0, f64::max),
            phi_sat: last.phi_sat,
            rdp_eps: last.rdp_eps,
            dp_eps: last.dp_eps,
            burn_in_round: curve.iter().find(|p| p.sum_phi >= p.phi_sat).map(|p| p.t),
        })
    }
}

/// Bound after every horizon `T = 1..=t_max`.
///
/// The horizon-`T` bound uses `Σ_{t<T} φ_t` and a saturation term built
/// from round `T−1`. That term can move with the last combiner, so the curve
/// reports the running maximum of the bound: a guarantee for horizon `T`
/// also covers every shorter one.
pub fn privacy_curve(t_max: usize, rounds: &[RoundPrivacy], setup: &AccountantSetup) -> Result<Vec<PrivacyPoint>> {
    if t_max == 0 {
        return Err(param("privacy curve needs at least one round"));
    }
    if rounds.len() < t_max {
        return Err(param(format!("{} rounds recorded, {t_max} requested", rounds.len())));
    }
    log_inv_delta(setup.delta)?;
    let mut points = Vec::with_capacity(t_max);
    let mut sum_phi = 0.0;
    let mut kappa = 0.0f64;
    let mut bound = 0.0f64;
    for (t, round) in rounds[..t_max].iter().enumerate() {
        sum_phi += round.phi;
        kappa = kappa.max(round.kappa);
        let phi_sat = saturation_phi(&SaturationInputs {
            phi_last: round.phi,
            kappa_max: kappa,
            local_steps: setup.local_steps,
            r: setup.r,
            diameter: setup.diameter,
            n: setup.n,
            eta: setup.eta,
            clip: setup.clip,
            w_last_norm: round.w_norm,
        });
        bound = bound.max(sum_phi.min(phi_sat));
        let rdp_eps = rdp_epsilon(bound, setup.alpha, setup.r, setup.clip, setup.sigma2)?;
        let c_delta = match setup.c_delta {
            Some(c) => c,
            None => resolve_c_delta(bound, setup.delta, setup.r, setup.clip, setup.sigma2)?,
        };
        let dp_eps = dp_epsilon(bound, setup.delta, c_delta, setup.r, setup.clip, setup.sigma2)?;
        points.push(PrivacyPoint { t: t + 1, sum_phi, phi_sat, rdp_eps, dp_eps });
    }
    Ok(points)
}

/// Writes the curve as CSV with header `T,sum_phi,Phi,rdp_eps,dp_eps`.
pub fn write_curve_csv<W: Write>(points: &[PrivacyPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_cscg, ComplexMatrix};
    use crate::rng::StreamKey;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn random_instance(m: usize, k: usize, seed: u64) -> (Combiner, ChannelRealization, PowerScaling) {
        let mut rng = StreamKey::new(seed).rng();
        let cols: Vec<_> = (0..k).map(|_| sample_cscg(m, 1.0, &mut rng).unwrap()).collect();
        let h = ComplexMatrix::from_columns(m, &cols).unwrap();
        let ch = ChannelRealization {
            round: 0,
            devices: (0..k).collect(),
            h,
            path_loss: vec![1.0; k],
            distances: vec![1.0; k],
        };
        let w = Combiner::new(0, sample_cscg(m, 1.0, &mut rng).unwrap()).unwrap();
        let s = PowerScaling { round: 0, s: sample_cscg(k, 1.0, &mut rng).unwrap() };
        (w, ch, s)
    }

    fn setup(diameter: f64) -> AccountantSetup {
        AccountantSetup {
            eta: 0.005,
            local_steps: 5,
            r: 1.0,
            n: 10,
            diameter,
            clip: 1.0,
            sigma2: 1.0,
            delta: 1e-5,
            alpha: 2.0,
            c_delta: None,
        }
    }

    #[test]
    fn phi_under_channel_inversion() {
        let (w, ch, _) = random_instance(4, 2, 1);
        let scale = 2.0 / w.norm();
        let w = Combiner::new(0, w.w.iter().map(|x| x * scale).collect()).unwrap();
        let s = crate::aircomp::channel_inversion_scaling(&w, &ch, None).unwrap();
        assert!(rel(phi_t(&w, &ch, &s).unwrap(), 0.25) < 1e-12);
        let zero = PowerScaling { round: 0, s: vec![c(0.0, 0.0); 2] };
        assert_eq!(phi_t(&w, &ch, &zero).unwrap(), 0.0);
    }

    #[test]
    fn phi_matches_brute_force() {
        for seed in 0..20 {
            let (w, ch, s) = random_instance(5, 3, seed);
            let mut best = 0.0f64;
            for i in 0..3 {
                let mut acc = c(0.0, 0.0);
                for k in 0..5 {
                    acc += w.w[k].conj() * ch.h.get(k, i);
                }
                best = best.max((acc * s.s[i]).norm_sqr());
            }
            let wn2: f64 = w.w.iter().map(|x| x.norm_sqr()).sum();
            assert!(rel(phi_t(&w, &ch, &s).unwrap(), best / wn2) < 1e-12);
        }
    }

    #[test]
    fn kappa_cases() {
        let (w, ch, _) = random_instance(6, 3, 2);
        let s = crate::aircomp::channel_inversion_scaling(&w, &ch, None).unwrap();
        let k = kappa_max(&[(&w, &ch, &s)], 0.005, 2.0, 3).unwrap();
        assert!((k - 0.01).abs() < 1e-14);
        assert_eq!(kappa_max(&[(&w, &ch, &s)], 0.0, 2.0, 3).unwrap(), 0.0);
        let gains = [c(0.5, 0.0), c(0.0, 2.0)];
        assert!((kappa_round(&gains, 0.1, 3.0, 2) - 0.1 * 3.0 / 2.0 * 2.5).abs() < 1e-15);
        assert!(kappa_max(&[], 0.1, 1.0, 1).is_err());
    }

    #[test]
    fn saturation_cases() {
        let base = SaturationInputs {
            phi_last: 0.3,
            kappa_max: 0.01,
            local_steps: 5,
            r: 1.0,
            diameter: f64::INFINITY,
            n: 10,
            eta: 0.005,
            clip: 0.77,
            w_last_norm: 1.2,
        };
        assert!(saturation_phi(&base).is_infinite());
        assert_eq!(saturation_phi(&SaturationInputs { diameter: 0.0, ..base }), 0.3);
        let x = SaturationInputs { diameter: 2.0, ..base };
        let shift = 1.01f64.powf(5.0) * 2.0 * 10.0 / (2.0 * 0.005 * 0.77 * 1.2);
        assert!(rel(saturation_phi(&x), (0.3f64.sqrt() + shift).powi(2)) < 1e-12);
    }

    #[test]
    fn rdp_and_conversion() {
        assert!(rel(rdp_epsilon(0.25, 3.0, 1.0, 2.0, 4.0).unwrap(), 2.0 * 3.0 * 4.0 / 4.0 * 0.25) < 1e-15);
        assert!(rel(rdp_to_dp(2.0, 1.0, (-1.0f64).exp()).unwrap(), 2.0) < 1e-15);
        assert!(rdp_to_dp(2.0, 1.0, 1.0 - 1e-15).unwrap() - 1.0 < 1e-12);
        assert!(rdp_to_dp(1.0, 1.0, 0.5).is_err());
        assert!(rdp_epsilon(1.0, 0.5, 1.0, 1.0, 1.0).is_err());
        let eps = 0.7;
        let a = conversion_order(eps, 1e-5).unwrap();
        assert!(rel(rdp_to_dp(a, eps / 2.0, 1e-5).unwrap(), eps) < 1e-12);
    }

    #[test]
    fn dp_epsilon_scaling() {
        assert_eq!(dp_epsilon(0.0, 1e-5, 8.0, 1.0, 1.0, 1.0).unwrap(), 0.0);
        let e1 = dp_epsilon(1e-3, 1e-5, 8.0, 1.0, 1.0, 1.0).unwrap();
        let e2 = dp_epsilon(1e-3, 1e-5, 8.0, 1.0, 1.0, 2.0).unwrap();
        assert!(rel(e1 / e2, 2f64.sqrt()) < 1e-12);
    }

    #[test]
    fn inconsistent_c_delta_reports_minimum() {
        let l = 1e5f64.ln();
        let k: f64 = 50.0;
        let oracle = 4.0 * k / l + (16.0 * k * k / (l * l) + 32.0 * k / l).sqrt();
        match dp_epsilon(k, 1e-5, 8.0, 1.0, 1.0, 1.0) {
            Err(Error::InconsistentCDelta { given, minimal }) => {
                assert_eq!(given, 8.0);
                assert!(rel(minimal, oracle) < 1e-9, "{minimal} vs {oracle}");
            }
            other => panic!("{other:?}"),
        }
        assert!(dp_epsilon(k, 1e-5, oracle, 1.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn resolved_c_delta_small_cost_is_eight() {
        assert_eq!(resolve_c_delta(1e-6, 1e-5, 1.0, 1.0, 1.0).unwrap(), 8.0);
        assert_eq!(c_delta_for_target(0.7, 1e-5).unwrap(), 8.0);
    }

    #[test]
    fn curve_linear_then_flat() {
        let rounds = vec![RoundPrivacy { phi: 0.1, kappa: 0.01, w_norm: 2.0 }; 60];
        let mut s = setup(1e-3);
        let phi_sat = saturation_phi(&SaturationInputs {
            phi_last: 0.1,
            kappa_max: 0.01,
            local_steps: 5,
            r: 1.0,
            diameter: 1e-3,
            n: 10,
            eta: 0.005,
            clip: 1.0,
            w_last_norm: 2.0,
        });
        let curve = privacy_curve(60, &rounds, &s).unwrap();
        let knee = (phi_sat / 0.1).ceil() as usize;
        assert!(knee > 1 && knee < 60);
        let ledger = PrivacyLedger::from_rounds(&rounds, &s).unwrap();
        assert_eq!(ledger.burn_in_round, Some(knee));
        for p in &curve[knee - 1..] {
            assert_eq!(p.rdp_eps, curve[knee - 1].rdp_eps);
        }
        assert!(curve[knee - 2].rdp_eps < curve[knee - 1].rdp_eps);
        s.diameter = f64::INFINITY;
        let open = privacy_curve(60, &rounds, &s).unwrap();
        assert!(open.windows(2).all(|p| p[1].rdp_eps > p[0].rdp_eps && p[1].dp_eps > p[0].dp_eps));
    }

    #[test]
    fn curve_csv_header() {
        let rounds = vec![RoundPrivacy { phi: 0.1, kappa: 0.0, w_norm: 1.0 }; 2];
        let curve = privacy_curve(2, &rounds, &setup(f64::INFINITY)).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&curve, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("T,sum_phi,Phi,rdp_eps,dp_eps\n1,0.1,inf,"));
    }

    proptest! {
        #[test]
        fn closed_form_matches_conversion_at_fixed_point(
            cost in 1e-6f64..1e3, log_delta in 1.0f64..30.0, r in 0.05f64..1.0,
            clip in 0.1f64..5.0, sigma2 in 1e-3f64..1e3,
        ) {
            let delta = (-log_delta).exp();
            let c_delta = resolve_c_delta(cost, delta, r, clip, sigma2).unwrap();
            let eps = dp_epsilon(cost, delta, c_delta, r, clip, sigma2).unwrap();
            let alpha = conversion_order(eps, delta).unwrap();
            let rdp = rdp_epsilon(cost, alpha, r, clip, sigma2).unwrap();
            let via_rdp = rdp_to_dp(alpha, rdp, delta).unwrap();
            if c_delta > MIN_C_DELTA {
                prop_assert!(rel(via_rdp, eps) < 1e-9, "{via_rdp} vs {eps}");
            } else {
                prop_assert!(via_rdp <= eps * (1.0 + 1e-9));
            }
        }

        #[test]
        fn curve_is_monotone_and_capped(
            phis in proptest::collection::vec(0.0f64..1.0, 1..40),
            norms in proptest::collection::vec(0.2f64..5.0, 40),
            diameter in prop_oneof![Just(f64::INFINITY), 0.0f64..1e-3],
        ) {
            let rounds: Vec<_> = phis.iter().zip(&norms)
                .map(|(&phi, &w_norm)| RoundPrivacy { phi, kappa: 0.01, w_norm }).collect();
            let s = setup(diameter);
            let curve = privacy_curve(rounds.len(), &rounds, &s).unwrap();
            for p in curve.windows(2) {
                prop_assert!(p[1].rdp_eps >= p[0].rdp_eps);
                prop_assert!(p[1].dp_eps >= p[0].dp_eps);
            }
            let cap = curve.iter().map(|p| p.phi_sat).fold(0.0, f64::max);
            let scale = 2.0 * s.alpha * s.r * s.clip * s.clip / s.sigma2;
            for p in &curve {
                prop_assert!(p.rdp_eps <= scale * cap * (1.0 + 1e-12));
            }
        }
    }
}
