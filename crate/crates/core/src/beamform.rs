//! DP-constrained receive beamforming: the zero-forcing combiner, the
//! privacy budget on combiner norms, and the norm allocation across rounds.

use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use crate::aircomp::Combiner;
use crate::channel::{gram_solve, norm, ChannelRealization};
use crate::error::{param, Error, Result};

/// Zero-forcing combiner of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ZfSolution {
    pub round: usize,
    pub w_zf: Vec<Complex64>,
    /// `π_t = ‖w_ZF‖`.
    pub pi: f64,
    /// `‖H(HᴴH)⁻¹u‖`, the norm before the `c/√(dP)` factor.
    pub unscaled_norm: f64,
}

impl ZfSolution {
    pub fn combiner(&self) -> Combiner {
        Combiner { round: self.round, w: self.w_zf.clone() }
    }
}

/// `w_ZF = (c/√(dP)) H(HᴴH)⁻¹u`, with `u` all ones unless given.
pub fn zf_combiner(
    channel: &ChannelRealization,
    clip: f64,
    dim: usize,
    power: f64,
    u: Option<&[Complex64]>,
) -> Result<ZfSolution> {
    let (m, k) = (channel.antennas(), channel.active());
    if m < k {
        return Err(Error::Config(format!("zero forcing needs m ≥ rn, got m = {m}, rn = {k}")));
    }
    if !(clip > 0.0 && power > 0.0) || dim == 0 {
        return Err(param("c, d and P must be positive"));
    }
    let ones = vec![Complex64::new(1.0, 0.0); k];
    let u = u.unwrap_or(&ones);
    if u.len() != k || u.iter().any(|z| (z.norm() - 1.0).abs() > 1e-12) {
        return Err(param("u must have one unit-modulus entry per active device"));
    }
    let x = gram_solve(&channel.h, u)?;
    let v = channel.h.mul_vec(&x);
    let unscaled_norm = norm(&v);
    let scale = clip / (dim as f64 * power).sqrt();
    let w_zf: Vec<Complex64> = v.into_iter().map(|z| z * scale).collect();
    Ok(ZfSolution { round: channel.round, pi: norm(&w_zf), w_zf, unscaled_norm })
}

/// Allowed `Σ_t 1/‖w^(t)‖²` for a DP target, with the inputs that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    pub a: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub c_delta: f64,
    pub r: f64,
    pub clip: f64,
    /// Effective noise variance on the real estimate.
    pub sigma2: f64,
}

/// `A = ε²σ² / ((2c_δ+8) log(1/δ) r c²)`.
pub fn privacy_budget_a(
    epsilon: f64,
    delta: f64,
    c_delta: f64,
    r: f64,
    clip: f64,
    sigma2: f64,
) -> Result<PrivacyBudget> {
    if !(epsilon > 0.0 && c_delta >= 0.0 && r > 0.0 && clip > 0.0 && sigma2 > 0.0) {
        return Err(param("epsilon, r, c and sigma2 must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(param(format!("delta must lie in (0, 1), got {delta}")));
    }
    let a = epsilon * epsilon * sigma2 / ((2.0 * c_delta + 8.0) * (1.0 / delta).ln() * r * clip * clip);
    Ok(PrivacyBudget { a, epsilon, delta, c_delta, r, clip, sigma2 })
}

/// Outcome of the "DP for free" test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerkReport {
    /// `Σ 1/π_t² ≤ A`.
    pub perk: bool,
    /// `A − Σ 1/π_t²`.
    pub margin: f64,
    /// `Σ_t 1/‖H(HᴴH)⁻¹u‖²`.
    pub h_eff: f64,
    /// `P/σ²`.
    pub snr: f64,
    /// Largest `P/σ²` for which the ZF design is already private.
    pub snr_threshold: f64,
}

/// Checks `Σ 1/π_t² ≤ A` and its SNR form
/// `P/σ² ≤ ε² / ((2c_δ+8) log(1/δ) r d h_eff)`, which must agree.
pub fn perk_condition(zf: &[ZfSolution], budget: &PrivacyBudget, dim: usize, power: f64) -> Result<PerkReport> {
    if zf.is_empty() {
        return Err(param("perk condition needs at least one round"));
    }
    let sum_inv: f64 = zf.iter().map(|z| 1.0 / (z.pi * z.pi)).sum();
    let h_eff: f64 = zf.iter().map(|z| 1.0 / (z.unscaled_norm * z.unscaled_norm)).sum();
    let snr = power / budget.sigma2;
    let snr_threshold = budget.epsilon * budget.epsilon
        / ((2.0 * budget.c_delta + 8.0) * (1.0 / budget.delta).ln() * budget.r * dim as f64 * h_eff);
    let ratio_norm = sum_inv / budget.a;
    let ratio_snr = snr / snr_threshold;
    if (ratio_norm - ratio_snr).abs() > 1e-9 * ratio_norm.max(ratio_snr) {
        return Err(Error::Invariant(format!("perk condition forms disagree: {ratio_norm} vs {ratio_snr}")));
    }
    Ok(PerkReport { perk: sum_inv <= budget.a, margin: budget.a - sum_inv, h_eff, snr, snr_threshold })
}

/// Per-round combiner norms.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationSolution {
    pub q: Vec<f64>,
    /// Dual variable of the budget constraint; zero when it is slack.
    pub mu_star: f64,
    /// Whether the budget forced any norm above its ZF value.
    pub scaled: bool,
}

impl AllocationSolution {
    pub fn objective(&self) -> f64 {
        self.q.iter().map(|q| q * q).sum()
    }

    pub fn sum_inv_q2(&self) -> f64 {
        self.q.iter().map(|q| 1.0 / (q * q)).sum()
    }
}

fn check_inputs(pi: &[f64], a: f64) -> Result<()> {
    if pi.is_empty() {
        return Err(param("allocation needs at least one round"));
    }
    if let Some(p) = pi.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
        return Err(param(format!("combiner norms must be positive, got {p}")));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(param(format!("budget must be positive, got {a}")));
    }
    Ok(())
}

/// `h(μ) = Σ_t 1/max{π_t, μ^{1/4}}²`.
pub fn budget_usage(pi: &[f64], mu: f64) -> f64 {
    let floor = mu.sqrt();
    pi.iter().map(|p| 1.0 / (p * p).max(floor)).sum()
}

/// Minimizes `Σ q_t²` subject to `q_t ≥ π_t` and `Σ 1/q_t² ≤ A`:
/// `q_t = max{π_t, μ^{1/4}}` with `μ` found by bisection on `h(μ) = A`.
pub fn solve_allocation(pi: &[f64], a: f64) -> Result<AllocationSolution> {
    check_inputs(pi, a)?;
    if budget_usage(pi, 0.0) <= a {
        return Ok(AllocationSolution { q: pi.to_vec(), mu_star: 0.0, scaled: false });
    }
    let t = pi.len() as f64;
    let max_pi4 = pi.iter().map(|p| p.powi(4)).fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, 1.1 * max_pi4.max((t / a).powi(2)));
    if budget_usage(pi, hi) > a {
        return Err(Error::Invariant("allocation bracket does not enclose the root".into()));
    }
    let mut mu = hi;
    for _ in 0..200 {
        mu = 0.5 * (lo + hi);
        let h = budget_usage(pi, mu);
        if (h - a).abs() <= 1e-10 * a {
            break;
        }
        if h > a {
            lo = mu;
        } else {
            hi = mu;
        }
    }
    let level = mu.powf(0.25);
    Ok(AllocationSolution { q: pi.iter().map(|p| p.max(level)).collect(), mu_star: mu, scaled: true })
}

/// Causal variant: each round gets budget `A/T` on its own.
pub fn online_allocation(pi: &[f64], a: f64) -> Result<AllocationSolution> {
    check_inputs(pi, a)?;
    let per_round = a / pi.len() as f64;
    let level = per_round.powf(-0.5);
    let q: Vec<f64> = pi.iter().map(|p| p.max(level)).collect();
    let scaled = q.iter().zip(pi).any(|(q, p)| q > p);
    Ok(AllocationSolution { mu_star: if scaled { level.powi(4) } else { 0.0 }, q, scaled })
}

/// `w*^(t) = (q_t / π_t) w_ZF^(t)`.
pub fn optimal_combiners(zf: &[ZfSolution], alloc: &AllocationSolution) -> Result<Vec<Combiner>> {
    if zf.len() != alloc.q.len() {
        return Err(param(format!("{} ZF solutions for {} norms", zf.len(), alloc.q.len())));
    }
    Ok(zf
        .iter()
        .zip(&alloc.q)
        .map(|(z, q)| {
            let scale = q / z.pi;
            Combiner { round: z.round, w: z.w_zf.iter().map(|w| w * scale).collect() }
        })
        .collect())
}

/// Euclidean projection onto `{x : floor ≤ x ≤ ub, Σx ≤ a}`.
fn project(y: &[f64], ub: &[f64], floor: f64, a: f64) -> Vec<f64> {
    let clamp = |shift: f64| -> Vec<f64> { y.iter().zip(ub).map(|(v, u)| (v - shift).clamp(floor, *u)).collect() };
    let direct = clamp(0.0);
    if direct.iter().sum::<f64>() <= a {
        return direct;
    }
    let (mut lo, mut hi) = (0.0, y.iter().fold(f64::MIN, |m, v| m.max(*v)) - floor);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clamp(mid).iter().sum::<f64>() > a {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clamp(hi)
}

/// Reference solver for the allocation problem: projected gradient descent
/// with Armijo backtracking on `Σ 1/x_t` over `x_t = 1/q_t² ∈ (0, 1/π_t²]`,
/// `Σ x_t ≤ A`. Intended for small horizons.
pub fn oracle_allocation(pi: &[f64], a: f64) -> Result<AllocationSolution> {
    check_inputs(pi, a)?;
    if pi.len() > 8 {
        return Err(param("the reference solver handles at most 8 rounds"));
    }
    let ub: Vec<f64> = pi.iter().map(|p| 1.0 / (p * p)).collect();
    if ub.iter().sum::<f64>() <= a {
        return Ok(AllocationSolution { q: pi.to_vec(), mu_star: 0.0, scaled: false });
    }
    let t = pi.len() as f64;
    let floor = 1e-12 * a / t;
    let f = |x: &[f64]| x.iter().map(|v| 1.0 / v).sum::<f64>();
    let mut x = project(&ub.iter().map(|u| u.min(a / t)).collect::<Vec<_>>(), &ub, floor, a);
    let mut fx = f(&x);
    let mut step = (a / t).powi(3);
    for _ in 0..100_000 {
        let grad: Vec<f64> = x.iter().map(|v| -1.0 / (v * v)).collect();
        step *= 4.0;
        let (next, f_next) = loop {
            let trial = project(&x.iter().zip(&grad).map(|(v, g)| v - step * g).collect::<Vec<_>>(), &ub, floor, a);
            let decrease: f64 = grad.iter().zip(&trial).zip(&x).map(|((g, n), o)| g * (n - o)).sum();
            let ft = f(&trial);
            if ft <= fx + 1e-4 * decrease || step < 1e-300 {
                break (trial, ft);
            }
            step *= 0.5;
        };
        let moved = next.iter().zip(&x).map(|(n, o)| (n - o).abs()).fold(0.0, f64::max);
        let converged = fx - f_next <= 1e-15 * fx && moved <= 1e-13 * a;
        x = next;
        fx = f_next;
        if converged {
            break;
        }
    }
    let q: Vec<f64> = x.iter().map(|v| v.sqrt().recip()).collect();
    let mu_star = q.iter().fold(0.0, |m: f64, v| m.max(*v)).powi(4);
    Ok(AllocationSolution { q, mu_star, scaled: true })
}

#[derive(Serialize)]
struct AllocationRow {
    t: usize,
    pi_t: f64,
    q_t: f64,
    scaled: bool,
    mu_star: f64,
    #[serde(rename = "A")]
    a: f64,
    sum_inv_q2: f64,
}

/// Writes `t,pi_t,q_t,scaled,mu_star,A,sum_inv_q2`, one row per round.
pub fn write_allocation_csv<W: Write>(pi: &[f64], alloc: &AllocationSolution, a: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let sum_inv_q2 = alloc.sum_inv_q2();
    for (t, (p, q)) in pi.iter().zip(&alloc.q).enumerate() {
        w.serialize(AllocationRow {
            t,
            pi_t: *p,
            q_t: *q,
            scaled: alloc.scaled,
            mu_star: alloc.mu_star,
            a,
            sum_inv_q2,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{inner, sample_cscg, ComplexMatrix};
    use crate::rng::StreamKey;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn realization(h: ComplexMatrix) -> ChannelRealization {
        let k = h.cols();
        ChannelRealization { round: 0, devices: (0..k).collect(), h, path_loss: vec![1.0; k], distances: vec![1.0; k] }
    }

    fn random_channel(m: usize, k: usize, seed: u64) -> ChannelRealization {
        let mut rng = StreamKey::new(seed).rng();
        let cols: Vec<_> = (0..k).map(|_| sample_cscg(m, 1.0, &mut rng).unwrap()).collect();
        realization(ComplexMatrix::from_columns(m, &cols).unwrap())
    }

    #[test]
    fn scalar_zf() {
        let ch = realization(ComplexMatrix::from_column_slice(1, 1, &[c(2.0, 0.0)]).unwrap());
        let zf = zf_combiner(&ch, 1.0, 1, 1.0, None).unwrap();
        assert!((zf.w_zf[0] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((inner(&zf.w_zf, &ch.column(0)) - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn orthonormal_columns() {
        let ch = realization(ComplexMatrix::identity_embedding(5, 3));
        let zf = zf_combiner(&ch, 2.0, 4, 1.0, None).unwrap();
        assert!((zf.pi - 3f64.sqrt()).abs() < 1e-14);
        for i in 0..3 {
            assert!((zf.w_zf[i] - c(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn zf_alignment_on_random_instance() {
        let ch = random_channel(8, 3, 11);
        let (clip, d, p) = (0.7, 50, 2e-3);
        let zf = zf_combiner(&ch, clip, d, p, None).unwrap();
        let target = clip / (d as f64 * p).sqrt();
        for i in 0..3 {
            let g = inner(&zf.w_zf, &ch.column(i));
            assert!((g.norm() - target).abs() <= 1e-10 * target);
        }
    }

    #[test]
    fn zf_rejects_too_few_antennas() {
        assert!(matches!(zf_combiner(&random_channel(2, 3, 1), 1.0, 1, 1.0, None), Err(Error::Config(_))));
    }

    #[test]
    fn budget_scaling() {
        let a = privacy_budget_a(0.5, 1e-5, 8.0, 1.0, 1.0, 1.0).unwrap().a;
        assert!((privacy_budget_a(1.0, 1e-5, 8.0, 1.0, 1.0, 1.0).unwrap().a / a - 4.0).abs() < 1e-12);
        assert!((privacy_budget_a(0.5, 1e-5, 8.0, 1.0, 1.0, 2.0).unwrap().a / a - 2.0).abs() < 1e-12);
        assert!(privacy_budget_a(0.5, 1.0, 8.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn analytic_allocations() {
        let s = solve_allocation(&[1.0, 1.0], 1.0).unwrap();
        assert!(s.scaled);
        assert!((s.mu_star - 4.0).abs() < 1e-8);
        for q in &s.q {
            assert!((q - 2f64.sqrt()).abs() < 1e-9);
        }
        let s = solve_allocation(&[1.0, 2.0], 1.25).unwrap();
        assert_eq!((s.q.clone(), s.mu_star, s.scaled), (vec![1.0, 2.0], 0.0, false));
        let s = solve_allocation(&[1.0, 3.0], 0.5).unwrap();
        let level = (0.5f64 - 1.0 / 9.0).powi(-2).powf(0.25);
        assert!((s.q[0] - level).abs() < 1e-9 && (level - 1.6036).abs() < 1e-4);
        assert_eq!(s.q[1], 3.0);
        assert!(solve_allocation(&[0.0], 1.0).is_err());
        assert!(solve_allocation(&[1.0], -1.0).is_err());
    }

    #[test]
    fn oracle_matches_analytic() {
        let s = oracle_allocation(&[1.0, 1.0], 1.0).unwrap();
        assert!((s.objective() - 4.0).abs() < 1e-6);
        let s = oracle_allocation(&[1.0, 2.0], 1.3).unwrap();
        assert_eq!(s.q, vec![1.0, 2.0]);
    }

    #[test]
    fn combiners_rescale_zf() {
        let ch = random_channel(6, 2, 3);
        let zf = vec![zf_combiner(&ch, 1.0, 10, 1.0, None).unwrap()];
        let same =
            optimal_combiners(&zf, &AllocationSolution { q: vec![zf[0].pi], mu_star: 0.0, scaled: false }).unwrap();
        assert_eq!(same[0].w, zf[0].w_zf);
        let doubled =
            optimal_combiners(&zf, &AllocationSolution { q: vec![2.0 * zf[0].pi], mu_star: 1.0, scaled: true })
                .unwrap();
        assert!((doubled[0].norm() - 2.0 * zf[0].pi).abs() < 1e-12);
        for i in 0..2 {
            let g = inner(&doubled[0].w, &ch.column(i)).norm();
            assert!((g - 2.0 / 10f64.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn online_allocation_meets_budget() {
        let s = online_allocation(&[0.1, 5.0, 0.2], 3.0).unwrap();
        assert!(s.sum_inv_q2() <= 3.0 * (1.0 + 1e-12));
        assert_eq!(s.q[1], 5.0);
    }

    #[test]
    fn allocation_csv_columns() {
        let s = solve_allocation(&[1.0, 1.0], 1.0).unwrap();
        let mut buf = Vec::new();
        write_allocation_csv(&[1.0, 1.0], &s, 1.0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,pi_t,q_t,scaled,mu_star,A,sum_inv_q2\n0,1.0,"));
        assert_eq!(text.lines().count(), 3);
    }

    fn perk_budget(a: f64) -> PrivacyBudget {
        PrivacyBudget { a, epsilon: 1.0, delta: 1e-5, c_delta: 8.0, r: 1.0, clip: 1.0, sigma2: 1.0 }
    }

    proptest! {
        #[test]
        fn kkt_structure(pi in proptest::collection::vec(0.05f64..5.0, 1..12), frac in 0.01f64..2.0) {
            let total: f64 = pi.iter().map(|p| 1.0 / (p * p)).sum();
            let a = frac * total;
            let s = solve_allocation(&pi, a).unwrap();
            prop_assert_eq!(s.scaled, total > a);
            for (q, p) in s.q.iter().zip(&pi) {
                prop_assert!(q >= p);
                if s.scaled {
                    let level = s.mu_star.powf(0.25);
                    prop_assert!((q - p).abs() <= 1e-9 * p || (q - level).abs() <= 1e-9 * level);
                }
            }
            if s.scaled {
                prop_assert!((s.sum_inv_q2() - a).abs() <= 1e-8 * a);
            }
        }

        #[test]
        fn usage_is_nonincreasing(pi in proptest::collection::vec(0.05f64..5.0, 1..8), mut mus in proptest::collection::vec(0.0f64..1e3, 2..30)) {
            mus.sort_by(f64::total_cmp);
            for w in mus.windows(2) {
                prop_assert!(budget_usage(&pi, w[1]) <= budget_usage(&pi, w[0]));
            }
        }

        #[test]
        fn homogeneity(pi in proptest::collection::vec(0.05f64..5.0, 1..8), frac in 0.05f64..1.5, lambda in 0.1f64..10.0) {
            let a = frac * pi.iter().map(|p| 1.0 / (p * p)).sum::<f64>();
            let base = solve_allocation(&pi, a).unwrap();
            let scaled_pi: Vec<f64> = pi.iter().map(|p| p * lambda).collect();
            let scaled = solve_allocation(&scaled_pi, a / (lambda * lambda)).unwrap();
            for (q0, q1) in base.q.iter().zip(&scaled.q) {
                prop_assert!((q1 - lambda * q0).abs() <= 1e-8 * lambda * q0);
            }
        }

        #[test]
        fn perk_iff_unscaled(m in 2usize..10, k in 1usize..4, rounds in 1usize..4, log_a in -4.0f64..4.0, seed in any::<u64>()) {
            let k = k.min(m);
            let zf: Vec<_> = (0..rounds)
                .map(|t| zf_combiner(&random_channel(m, k, seed.wrapping_add(t as u64)), 1.0, 3, 1.0, None).unwrap())
                .collect();
            let budget = perk_budget(10f64.powf(log_a));
            let budget = PrivacyBudget { sigma2: budget.a * 24.0 * (1e5f64).ln(), ..budget };
            let report = perk_condition(&zf, &budget, 3, 1.0).unwrap();
            let pi: Vec<f64> = zf.iter().map(|z| z.pi).collect();
            prop_assert_eq!(report.perk, !solve_allocation(&pi, budget.a).unwrap().scaled);
        }
    }
}
