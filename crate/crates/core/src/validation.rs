//! Self-checks run by `airfl validate`: each compares a solver against an
//! independent evaluation on randomized instances.

use rand::Rng;

use crate::aircomp::{
    air_aggregate, channel_inversion_scaling, estimation_error_stats, Combiner, NoiseConvention, PowerScaling,
};
use crate::beamform::{oracle_allocation, perk_condition, privacy_budget_a, solve_allocation, zf_combiner};
use crate::channel::{inner, sample_cscg, ChannelRealization, ComplexMatrix};
use crate::error::Result;
use crate::fl::{clip, ClippedUpdate};
use crate::privacy::{
    conversion_order, dp_epsilon, privacy_curve, rdp_epsilon, rdp_to_dp, resolve_c_delta, AccountantSetup, RoundPrivacy,
};
use crate::rng::{Purpose, StreamKey, StreamRng};

/// Result of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_channel(m: usize, k: usize, rng: &mut StreamRng) -> Result<ChannelRealization> {
    let cols = (0..k).map(|_| sample_cscg(m, 1.0, rng)).collect::<Result<Vec<_>>>()?;
    Ok(ChannelRealization {
        round: 0,
        devices: (0..k).collect(),
        h: ComplexMatrix::from_columns(m, &cols)?,
        path_loss: vec![1.0; k],
        distances: vec![1.0; k],
    })
}

fn zf_alignment(rng: &mut StreamRng) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.random_range(4..=64);
        let k = rng.random_range(1..=m.min(16));
        let ch = random_channel(m, k, rng)?;
        let (c, d, p) = (rng.random_range(0.1..2.0), rng.random_range(1..100), rng.random_range(1e-3..1.0));
        let zf = zf_combiner(&ch, c, d, p, None)?;
        let target = c / (d as f64 * p).sqrt();
        for i in 0..k {
            worst = worst.max((inner(&zf.w_zf, &ch.column(i)).norm() - target).abs() / target);
        }
    }
    Ok(CheckOutcome { name: "zf-alignment", passed: worst <= 1e-9, detail: format!("max relative error {worst:.3e}") })
}

fn allocation_oracle(rng: &mut StreamRng) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let t = rng.random_range(1..=8);
        let pi: Vec<f64> = (0..t).map(|_| rng.random_range(0.2..3.0)).collect();
        let a = rng.random_range(0.05..1.5) * pi.iter().map(|p| 1.0 / (p * p)).sum::<f64>();
        let fast = solve_allocation(&pi, a)?.objective();
        let slow = oracle_allocation(&pi, a)?.objective();
        worst = worst.max((fast - slow).abs() / slow);
    }
    Ok(CheckOutcome {
        name: "allocation-oracle",
        passed: worst <= 1e-4,
        detail: format!("max relative objective gap {worst:.3e}"),
    })
}

fn dp_two_path(rng: &mut StreamRng) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let cost = 10f64.powf(rng.random_range(-4.0..2.0));
        let delta = 10f64.powf(rng.random_range(-10.0..-1.0));
        let (r, c, s2) = (rng.random_range(0.1..1.0), rng.random_range(0.1..3.0), rng.random_range(0.01..10.0));
        let c_delta = resolve_c_delta(cost, delta, r, c, s2)?;
        let eps = dp_epsilon(cost, delta, c_delta, r, c, s2)?;
        let alpha = conversion_order(eps, delta)?;
        let via = rdp_to_dp(alpha, eps / 2.0, delta)?;
        worst = worst.max((via - eps).abs() / eps);
        // the Rényi bound at that order never exceeds half the target
        let rdp = rdp_epsilon(cost, alpha, r, c, s2)?;
        if rdp > eps / 2.0 * (1.0 + 1e-9) {
            worst = f64::INFINITY;
        }
    }
    Ok(CheckOutcome { name: "dp-two-path", passed: worst <= 1e-9, detail: format!("max relative gap {worst:.3e}") })
}

fn perk_dichotomy(rng: &mut StreamRng) -> Result<CheckOutcome> {
    let mut disagreements = 0;
    for _ in 0..200 {
        let m = rng.random_range(2..=12);
        let k = rng.random_range(1..=m);
        let rounds = rng.random_range(1..=5);
        let p = 10f64.powf(rng.random_range(-3.0..1.0));
        let zf = (0..rounds)
            .map(|_| zf_combiner(&random_channel(m, k, rng)?, 1.0, 4, p, None))
            .collect::<Result<Vec<_>>>()?;
        let sigma2 = 10f64.powf(rng.random_range(-3.0..3.0));
        let budget = privacy_budget_a(1.0, 1e-5, 8.0, 1.0, 1.0, sigma2)?;
        let report = perk_condition(&zf, &budget, 4, p)?;
        let pi: Vec<f64> = zf.iter().map(|z| z.pi).collect();
        if report.perk == solve_allocation(&pi, budget.a)?.scaled {
            disagreements += 1;
        }
    }
    Ok(CheckOutcome {
        name: "perk-dichotomy",
        passed: disagreements == 0,
        detail: format!("{disagreements} disagreements"),
    })
}

fn curve_knee() -> Result<CheckOutcome> {
    let phi = 0.05;
    let rounds = vec![RoundPrivacy { phi, kappa: 0.005, w_norm: 3.0 }; 200];
    let setup = AccountantSetup {
        eta: 0.005,
        local_steps: 5,
        r: 1.0,
        n: 10,
        diameter: 1e-3,
        clip: 1.0,
        sigma2: 1.0,
        delta: 1e-5,
        alpha: 2.0,
        c_delta: None,
    };
    let curve = privacy_curve(rounds.len(), &rounds, &setup)?;
    let knee = (curve[0].phi_sat / phi).ceil() as usize;
    let first_flat = curve.iter().position(|p| p.rdp_eps == curve.last().unwrap().rdp_eps).map(|i| i + 1);
    Ok(CheckOutcome {
        name: "privacy-knee",
        passed: first_flat == Some(knee),
        detail: format!("knee {knee}, first flat horizon {first_flat:?}"),
    })
}

fn mse_identity(rng: &mut StreamRng) -> Result<CheckOutcome> {
    let (m, k, d, draws) = (6, 3, 8, 4000);
    let ch = random_channel(m, k, rng)?;
    let w = Combiner::new(0, sample_cscg(m, 1.0, rng)?)?;
    let s = PowerScaling { round: 0, s: sample_cscg(k, 1.0, rng)? };
    let updates: Vec<ClippedUpdate> =
        (0..k).map(|_| clip(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(), 2.0)).collect();
    let sigma2 = 0.3;
    let stats = estimation_error_stats(&updates, &s, &ch, &w, sigma2, NoiseConvention::Half)?;
    let truth: Vec<f64> = (0..d).map(|j| updates.iter().map(|u| u.delta_bar[j]).sum()).collect();
    let errs = (0..draws)
        .map(|_| {
            let est = air_aggregate(&updates, &s, &ch, &w, sigma2, NoiseConvention::Half, rng)?;
            Ok(est.delta_hat.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = errs.iter().sum::<f64>() / draws as f64;
    let se = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (draws as f64 - 1.0) / draws as f64).sqrt();
    let z = (mean - stats.mse()).abs() / se;
    Ok(CheckOutcome { name: "mse-identity", passed: z < 5.0, detail: format!("{z:.2} standard errors") })
}

fn noiseless_alignment(rng: &mut StreamRng) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let ch = random_channel(8, 4, rng)?;
        let w = Combiner::new(0, sample_cscg(8, 1.0, rng)?)?;
        let s = channel_inversion_scaling(&w, &ch, None)?;
        let updates: Vec<ClippedUpdate> =
            (0..4).map(|_| clip(&(0..5).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(), 1.0)).collect();
        let est = air_aggregate(&updates, &s, &ch, &w, 0.0, NoiseConvention::Half, rng)?;
        for (j, v) in est.delta_hat.iter().enumerate() {
            let sum: f64 = updates.iter().map(|u| u.delta_bar[j]).sum();
            worst = worst.max((v - sum).abs() / sum.abs().max(1.0));
        }
    }
    Ok(CheckOutcome {
        name: "noiseless-aggregation",
        passed: worst <= 1e-10,
        detail: format!("max relative error {worst:.3e}"),
    })
}

/// Runs every check with streams derived from `seed`.
pub fn run_validation(seed: u64) -> Result<Vec<CheckOutcome>> {
    let key = StreamKey::new(seed).purpose(Purpose::Validation);
    Ok(vec![
        zf_alignment(&mut key.index(0).rng())?,
        allocation_oracle(&mut key.index(1).rng())?,
        dp_two_path(&mut key.index(2).rng())?,
        perk_dichotomy(&mut key.index(3).rng())?,
        curve_knee()?,
        mse_identity(&mut key.index(4).rng())?,
        noiseless_alignment(&mut key.index(5).rng())?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for check in run_validation(7).unwrap() {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
    }
}
