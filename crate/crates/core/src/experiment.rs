//! Monte Carlo orchestration of the four training pipelines, parameter
//! sweeps and CSV export.
//!
//! All randomness is keyed by `(seed, trial, purpose, round, device)` and
//! none of it depends on the scheme or on swept values, so runs that differ
//! only in those share every random draw.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::aircomp::{air_aggregate, channel_inversion_scaling, global_update_air, Combiner, PowerLimit, PowerScaling};
use crate::beamform::{
    online_allocation, optimal_combiners, perk_condition, privacy_budget_a, solve_allocation, zf_combiner,
    AllocationSolution, PerkReport, PrivacyBudget, ZfSolution,
};
use crate::channel::{sample_channel, ChannelRealization, Geometry};
use crate::config::{AllocationMode, Scheme, SystemConfig};
use crate::error::{param, Error, Result};
use crate::fl::{
    aggregate_noiseless, clip, global_gradient, global_loss, local_sgd, make_synthetic_task, model_diff,
    sample_active_devices, ClippedUpdate, Domain, LocalDataset, ModelState,
};
use crate::privacy::{
    c_delta_for_target, conversion_order, privacy_curve, AccountantSetup, PrivacyPoint, RoundPrivacy,
};
use crate::rng::{Purpose, StreamKey};

/// Per-round diagnostics of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub t: usize,
    /// Global training loss after the round's update.
    pub train_loss: f64,
    pub grad_norm_sq: f64,
    /// Mean clipping factor over active devices (1 = nothing clipped).
    pub clip_fraction: f64,
    /// Realized `‖Δ̂ − Σ_i Δ̄_i‖²`.
    pub mse: f64,
    pub lambda_t: f64,
    pub w_norm: f64,
    pub phi_t: f64,
    /// Privacy guarantee after this round; infinite for noiseless schemes.
    pub dp_eps: f64,
}

/// Offline combiner design for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkDesign {
    pub channels: Vec<ChannelRealization>,
    pub zf: Vec<ZfSolution>,
    pub combiners: Vec<Combiner>,
    pub scalings: Vec<PowerScaling>,
    /// Transmit power used by this trial.
    pub power: f64,
    /// Smallest path loss in the trial's geometry.
    pub lambda_min: f64,
    /// Worst-case SNR `PΛ_min/σ²` at or below which the ZF design is
    /// already private (independent of `P`).
    pub perk_snr_threshold: Option<f64>,
    /// Present when the receiver noise is positive.
    pub budget: Option<PrivacyBudget>,
    pub perk: Option<PerkReport>,
    /// Present for the privacy-constrained scheme.
    pub allocation: Option<AllocationSolution>,
}

impl LinkDesign {
    /// ZF norms `π_t`.
    pub fn pi(&self) -> Vec<f64> {
        self.zf.iter().map(|z| z.pi).collect()
    }
}

/// Everything drawn before training starts.
#[derive(Debug, Clone)]
pub struct TrialPlan {
    pub trial: usize,
    pub key: StreamKey,
    pub geometry: Geometry,
    pub datasets: Vec<LocalDataset>,
    pub smoothness: f64,
    pub active_sets: Vec<Vec<usize>>,
    pub link: Option<LinkDesign>,
}

/// Outcome of one Monte Carlo trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub metrics: Vec<RoundMetrics>,
    /// `θ^(1), …, θ^(T)`.
    pub trajectory: Vec<ModelState>,
    pub link: Option<LinkDesign>,
}

impl TrialRecord {
    pub fn final_loss(&self) -> f64 {
        self.metrics.last().map_or(f64::NAN, |m| m.train_loss)
    }

    pub fn final_dp_eps(&self) -> f64 {
        self.metrics.last().map_or(f64::NAN, |m| m.dp_eps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: SystemConfig,
    pub trials: Vec<TrialRecord>,
}

fn design_link(
    cfg: &SystemConfig,
    geometry: &Geometry,
    active_sets: &[Vec<usize>],
    key: StreamKey,
) -> Result<LinkDesign> {
    let channel_key = key.purpose(Purpose::Channel);
    let channels = active_sets
        .iter()
        .enumerate()
        .map(|(t, active)| sample_channel(t, cfg.m, geometry, active, channel_key))
        .collect::<Result<Vec<_>>>()?;
    let lambda_min = geometry.path_loss.iter().copied().fold(f64::INFINITY, f64::min);
    let power = cfg.power_for(lambda_min);
    let clip_c = cfg.clip_threshold();
    let zf = channels.iter().map(|ch| zf_combiner(ch, clip_c, cfg.d, power, None)).collect::<Result<Vec<_>>>()?;
    let sigma2 = cfg.noise_convention.effective_sigma2(cfg.sigma2);
    let (budget, perk) = if sigma2 > 0.0 {
        let eps = cfg.epsilon_target();
        let c_delta = match cfg.c_delta {
            Some(c) => c,
            None => c_delta_for_target(eps, cfg.delta)?,
        };
        let budget = privacy_budget_a(eps, cfg.delta, c_delta, cfg.r, clip_c, sigma2)?;
        let perk = perk_condition(&zf, &budget, cfg.d, power)?;
        (Some(budget), Some(perk))
    } else {
        (None, None)
    };
    let (combiners, allocation) = match (cfg.scheme, budget) {
        (Scheme::AirflDp, Some(budget)) => {
            let pi: Vec<f64> = zf.iter().map(|z| z.pi).collect();
            let alloc = match cfg.allocation {
                AllocationMode::Joint => solve_allocation(&pi, budget.a)?,
                AllocationMode::Online => online_allocation(&pi, budget.a)?,
            };
            (optimal_combiners(&zf, &alloc)?, Some(alloc))
        }
        (Scheme::AirflDp, None) => return Err(Error::Config("airfl-dp needs sigma2 > 0".into())),
        _ => (zf.iter().map(ZfSolution::combiner).collect(), None),
    };
    let limit = PowerLimit { clip: clip_c, dim: cfg.d, power };
    let scalings = combiners
        .iter()
        .zip(&channels)
        .map(|(w, ch)| channel_inversion_scaling(w, ch, Some(&limit)))
        .collect::<Result<Vec<_>>>()?;
    // the report's SNR is relative to the effective noise variance
    let perk_snr_threshold = perk.map(|p| p.snr_threshold * lambda_min * cfg.noise_convention.real_fraction());
    Ok(LinkDesign {
        channels,
        zf,
        combiners,
        scalings,
        power,
        lambda_min,
        perk_snr_threshold,
        budget,
        perk,
        allocation,
    })
}

/// Draws geometry, data, active sets and (for over-the-air schemes) the
/// channels and combiners of one trial.
pub fn plan_trial(cfg: &SystemConfig, trial: usize) -> Result<TrialPlan> {
    let key = StreamKey::new(cfg.seed).trial(trial);
    let geometry =
        Geometry::sample(cfg.n, cfg.max_distance, cfg.carrier_freq, &mut key.purpose(Purpose::Geometry).rng())?;
    let datasets = make_synthetic_task(
        cfg.task,
        cfg.d,
        cfg.n,
        cfg.n * cfg.samples_per_device,
        &mut key.purpose(Purpose::Task).rng(),
    )?;
    let smoothness = datasets[0].task.smoothness(&datasets);
    let selection = key.purpose(Purpose::Selection);
    let active_sets = (0..cfg.rounds)
        .map(|t| sample_active_devices(cfg.n, cfg.r, &mut selection.round(t).rng()))
        .collect::<Result<Vec<_>>>()?;
    let link = if cfg.scheme.over_the_air() { Some(design_link(cfg, &geometry, &active_sets, key)?) } else { None };
    Ok(TrialPlan { trial, key, geometry, datasets, smoothness, active_sets, link })
}

fn accountant(cfg: &SystemConfig) -> Result<AccountantSetup> {
    Ok(AccountantSetup {
        eta: cfg.eta,
        local_steps: cfg.local_steps,
        r: cfg.r,
        n: cfg.n,
        diameter: cfg.diameter,
        clip: cfg.clip_threshold(),
        sigma2: cfg.noise_convention.effective_sigma2(cfg.sigma2),
        delta: cfg.delta,
        alpha: conversion_order(cfg.epsilon_target(), cfg.delta)?,
        c_delta: cfg.c_delta,
    })
}

fn observe_rounds(cfg: &SystemConfig, plan: &TrialPlan, link: &LinkDesign) -> Vec<RoundPrivacy> {
    link.combiners
        .iter()
        .zip(&link.channels)
        .zip(&link.scalings)
        .map(|((w, ch), s)| RoundPrivacy::observe(w, ch, s, cfg.eta, plan.smoothness))
        .collect()
}

/// Privacy curve of a planned over-the-air trial.
pub fn privacy_points(cfg: &SystemConfig, plan: &TrialPlan) -> Result<Vec<PrivacyPoint>> {
    let link =
        plan.link.as_ref().ok_or_else(|| Error::Config("privacy accounting needs an over-the-air scheme".into()))?;
    if cfg.sigma2 == 0.0 {
        return Err(Error::Config("privacy accounting needs sigma2 > 0".into()));
    }
    privacy_curve(cfg.rounds, &observe_rounds(cfg, plan, link), &accountant(cfg)?)
}

/// Per-round privacy observations and the resulting `ε` after each round.
pub fn realized_privacy(cfg: &SystemConfig, plan: &TrialPlan) -> Result<(Vec<RoundPrivacy>, Vec<f64>)> {
    let Some(link) = &plan.link else {
        return Ok((Vec::new(), vec![f64::INFINITY; cfg.rounds]));
    };
    let rounds = observe_rounds(cfg, plan, link);
    let eps = if cfg.sigma2 > 0.0 {
        privacy_curve(cfg.rounds, &rounds, &accountant(cfg)?)?.iter().map(|p| p.dp_eps).collect()
    } else {
        vec![f64::INFINITY; cfg.rounds]
    };
    Ok((rounds, eps))
}

/// Runs one trial of the configured scheme.
pub fn run_trial(cfg: &SystemConfig, trial: usize) -> Result<TrialRecord> {
    let plan = plan_trial(cfg, trial)?;
    let (privacy, dp_eps) = realized_privacy(cfg, &plan)?;
    let clip_c = cfg.clip_threshold();
    let domain = Domain::ball(vec![0.0; cfg.d], cfg.diameter);
    let k = cfg.active_devices()?;
    let mut theta = ModelState::zeros(cfg.d);
    let mut metrics = Vec::with_capacity(cfg.rounds);
    let mut trajectory = Vec::with_capacity(cfg.rounds);
    let sgd_key = plan.key.purpose(Purpose::LocalSgd);
    let noise_key = plan.key.purpose(Purpose::Noise);
    for (t, active) in plan.active_sets.iter().enumerate() {
        let diffs = active
            .iter()
            .map(|&dev| {
                let local = local_sgd(
                    &theta,
                    &plan.datasets[dev],
                    cfg.local_steps,
                    cfg.eta,
                    cfg.batch,
                    &mut sgd_key.round(t).index(dev).rng(),
                )?;
                model_diff(&theta, &local, cfg.eta)
            })
            .collect::<Result<Vec<_>>>()?;
        let clipped: Vec<ClippedUpdate> = diffs.iter().map(|x| clip(x, clip_c)).collect();
        let mut row = RoundMetrics {
            t,
            train_loss: 0.0,
            grad_norm_sq: 0.0,
            clip_fraction: 1.0,
            mse: 0.0,
            lambda_t: 0.0,
            w_norm: 0.0,
            phi_t: 0.0,
            dp_eps: dp_eps[t],
        };
        theta = match (cfg.scheme, &plan.link) {
            (Scheme::Vanilla, _) => aggregate_noiseless(&diffs, &theta, cfg.eta, k)?,
            (Scheme::Clip, _) => {
                row.clip_fraction = mean(clipped.iter().map(|u| u.factor));
                let bars: Vec<Vec<f64>> = clipped.iter().map(|u| u.delta_bar.clone()).collect();
                aggregate_noiseless(&bars, &theta, cfg.eta, k)?
            }
            (_, Some(link)) => {
                row.clip_fraction = mean(clipped.iter().map(|u| u.factor));
                let est = air_aggregate(
                    &clipped,
                    &link.scalings[t],
                    &link.channels[t],
                    &link.combiners[t],
                    cfg.sigma2,
                    cfg.noise_convention,
                    &mut noise_key.round(t).rng(),
                )?;
                row.mse = est
                    .delta_hat
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (v - clipped.iter().map(|u| u.delta_bar[j]).sum::<f64>()).powi(2))
                    .sum();
                row.lambda_t = est.stats.lambda_t;
                row.w_norm = privacy[t].w_norm;
                row.phi_t = privacy[t].phi;
                global_update_air(&theta, &est, cfg.eta, k, None)?
            }
            (_, None) => return Err(Error::Invariant("over-the-air scheme without a link design".into())),
        };
        domain.project(&mut theta);
        row.train_loss = global_loss(&plan.datasets, &theta.theta);
        row.grad_norm_sq = global_gradient(&plan.datasets, &theta.theta).iter().map(|g| g * g).sum();
        metrics.push(row);
        trajectory.push(theta.clone());
    }
    Ok(TrialRecord { trial, metrics, trajectory, link: plan.link })
}

/// Runs every trial of `cfg` (in parallel, results in trial order).
pub fn run_experiment(cfg: &SystemConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let trials = (0..cfg.trials).into_par_iter().map(|trial| run_trial(cfg, trial)).collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult { config: cfg.clone(), trials })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    sum / count as f64
}

/// Sample mean and standard error `s/√n`. Identical values (including
/// infinities) have zero standard error.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    if values.iter().all(|v| *v == values[0]) {
        return (values[0], 0.0);
    }
    let m = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Rounds,
    EpsTilde,
    Snr,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "rounds" => Ok(Self::Rounds),
            "eps" | "eps_tilde" => Ok(Self::EpsTilde),
            "snr" => Ok(Self::Snr),
            other => Err(Error::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

impl SweepAxis {
    /// Copy of `template` with the axis set to `value`.
    pub fn apply(self, template: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut cfg = template.clone();
        match self {
            SweepAxis::Rounds => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::Config(format!("round count must be a positive integer, got {value}")));
                }
                cfg.rounds = value as usize;
            }
            SweepAxis::EpsTilde => cfg.eps_tilde = value,
            SweepAxis::Snr => cfg.snr = Some(value),
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One line of the sweep table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub scheme: Scheme,
    pub final_loss_mean: f64,
    pub final_loss_stderr: f64,
    /// Mean final `ε` over trials.
    pub dp_eps: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<(f64, ExperimentResult)>,
}

/// Runs every scheme at every axis value.
pub fn sweep(template: &SystemConfig, axis: SweepAxis, values: &[f64], schemes: &[Scheme]) -> Result<SweepOutput> {
    if values.is_empty() || schemes.is_empty() {
        return Err(Error::Config("sweep needs at least one value and one scheme".into()));
    }
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &value in values {
        for &scheme in schemes {
            let cfg = axis.apply(&SystemConfig { scheme, ..template.clone() }, value)?;
            let result = run_experiment(&cfg)?;
            let losses: Vec<f64> = result.trials.iter().map(TrialRecord::final_loss).collect();
            let eps: Vec<f64> = result.trials.iter().map(TrialRecord::final_dp_eps).collect();
            let (final_loss_mean, final_loss_stderr) = mean_stderr(&losses);
            rows.push(SweepRow {
                axis_value: value,
                scheme,
                final_loss_mean,
                final_loss_stderr,
                dp_eps: mean_stderr(&eps).0,
            });
            runs.push((value, result));
        }
    }
    Ok(SweepOutput { rows, runs })
}

#[derive(Serialize)]
struct RoundRow {
    trial: usize,
    t: usize,
    train_loss: f64,
    grad_norm_sq: f64,
    clip_fraction: f64,
    mse: f64,
    lambda_t: f64,
    w_norm: f64,
    phi_t: f64,
    dp_eps: f64,
}

const METRIC_NAMES: [&str; 8] =
    ["train_loss", "grad_norm_sq", "clip_fraction", "mse", "lambda_t", "w_norm", "phi_t", "dp_eps"];

fn metric_values(m: &RoundMetrics) -> [f64; 8] {
    [m.train_loss, m.grad_norm_sq, m.clip_fraction, m.mse, m.lambda_t, m.w_norm, m.phi_t, m.dp_eps]
}

/// Per-round rows `trial,t,train_loss,…,dp_eps`.
pub fn write_rounds_csv<W: Write>(trials: &[TrialRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for rec in trials {
        for m in &rec.metrics {
            w.serialize(RoundRow {
                trial: rec.trial,
                t: m.t,
                train_loss: m.train_loss,
                grad_norm_sq: m.grad_norm_sq,
                clip_fraction: m.clip_fraction,
                mse: m.mse,
                lambda_t: m.lambda_t,
                w_norm: m.w_norm,
                phi_t: m.phi_t,
                dp_eps: m.dp_eps,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean and standard error of every metric per round.
pub fn write_summary_csv<W: Write>(trials: &[TrialRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    for name in METRIC_NAMES {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_stderr"));
    }
    w.write_record(&header)?;
    let rounds = trials.iter().map(|r| r.metrics.len()).min().unwrap_or(0);
    for t in 0..rounds {
        let mut record = vec![t.to_string()];
        for k in 0..METRIC_NAMES.len() {
            let values: Vec<f64> = trials.iter().map(|r| metric_values(&r.metrics[t])[k]).collect();
            let (m, s) = mean_stderr(&values);
            record.push(m.to_string());
            record.push(s.to_string());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `rounds.csv` and `summary.csv` into `dir`.
pub fn emit_plotdata(trials: &[TrialRecord], dir: &Path) -> Result<()> {
    if trials.is_empty() || trials.iter().any(|t| t.metrics.is_empty()) {
        return Err(param("no metrics to write"));
    }
    std::fs::create_dir_all(dir)?;
    write_rounds_csv(trials, File::create(dir.join("rounds.csv"))?)?;
    write_summary_csv(trials, File::create(dir.join("summary.csv"))?)?;
    Ok(())
}

/// Sweep table `axis_value,scheme,final_loss_mean,final_loss_stderr,dp_eps`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-round means for every sweep run:
/// `axis_value,scheme,t,train_loss_mean,train_loss_stderr,dp_eps`.
pub fn write_sweep_rounds_csv<W: Write>(runs: &[(f64, ExperimentResult)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["axis_value", "scheme", "t", "train_loss_mean", "train_loss_stderr", "dp_eps"])?;
    for (value, result) in runs {
        let rounds = result.trials.iter().map(|r| r.metrics.len()).min().unwrap_or(0);
        for t in 0..rounds {
            let losses: Vec<f64> = result.trials.iter().map(|r| r.metrics[t].train_loss).collect();
            let eps: Vec<f64> = result.trials.iter().map(|r| r.metrics[t].dp_eps).collect();
            let (m, s) = mean_stderr(&losses);
            w.write_record([
                value.to_string(),
                result.config.scheme.to_string(),
                t.to_string(),
                m.to_string(),
                s.to_string(),
                mean_stderr(&eps).0.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scheme: Scheme) -> SystemConfig {
        SystemConfig { n: 4, m: 6, d: 8, rounds: 6, trials: 3, samples_per_device: 20, scheme, ..Default::default() }
    }

    #[test]
    fn stderr_definition() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let (m, s) = mean_stderr(&v);
        let sd = (v.iter().map(|x| (x - 2.5f64).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert_eq!(m, 2.5);
        assert!((s - sd / 2.0).abs() < 1e-15);
        assert_eq!(mean_stderr(&[f64::INFINITY; 3]), (f64::INFINITY, 0.0));
    }

    #[test]
    fn vanilla_matches_direct_fedavg() {
        let cfg = small(Scheme::Vanilla);
        let rec = run_trial(&cfg, 0).unwrap();
        let plan = plan_trial(&cfg, 0).unwrap();
        let mut theta = ModelState::zeros(cfg.d);
        for t in 0..cfg.rounds {
            let mut next = theta.theta.clone();
            for dev in 0..cfg.n {
                let mut rng = plan.key.purpose(Purpose::LocalSgd).round(t).index(dev).rng();
                let local =
                    local_sgd(&theta, &plan.datasets[dev], cfg.local_steps, cfg.eta, cfg.batch, &mut rng).unwrap();
                for ((x, l), o) in next.iter_mut().zip(&local.theta).zip(&theta.theta) {
                    *x -= (o - l) / cfg.n as f64;
                }
            }
            theta = ModelState { theta: next };
            for (a, b) in rec.trajectory[t].theta.iter().zip(&theta.theta) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
        assert!(rec.metrics.iter().all(|m| m.dp_eps.is_infinite() && m.clip_fraction == 1.0));
    }

    #[test]
    fn noiseless_zf_matches_clip() {
        let zf = run_experiment(&SystemConfig { sigma2: 0.0, ..small(Scheme::AirflZf) }).unwrap();
        let cl = run_experiment(&small(Scheme::Clip)).unwrap();
        for (a, b) in zf.trials.iter().zip(&cl.trials) {
            for (x, y) in a.trajectory.iter().zip(&b.trajectory) {
                for (u, v) in x.theta.iter().zip(&y.theta) {
                    assert!((u - v).abs() <= 1e-10 * v.abs().max(1e-3), "{u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn dp_scheme_meets_target() {
        let cfg = small(Scheme::AirflDp);
        let result = run_experiment(&cfg).unwrap();
        for rec in &result.trials {
            let eps = rec.final_dp_eps();
            assert!(eps <= cfg.epsilon_target() * (1.0 + 1e-9), "{eps}");
            assert!(rec.metrics.windows(2).all(|w| w[1].dp_eps >= w[0].dp_eps));
        }
    }

    #[test]
    fn zf_needs_enough_antennas() {
        assert!(matches!(run_experiment(&SystemConfig { m: 3, ..small(Scheme::AirflZf) }), Err(Error::Config(_))));
    }

    #[test]
    fn single_value_sweep_matches_run() {
        let cfg = small(Scheme::Clip);
        let out = sweep(&cfg, SweepAxis::EpsTilde, &[0.1], &[Scheme::Clip]).unwrap();
        let direct = run_experiment(&cfg).unwrap();
        let losses: Vec<f64> = direct.trials.iter().map(TrialRecord::final_loss).collect();
        assert_eq!(out.rows[0].final_loss_mean, mean_stderr(&losses).0);
    }

    #[test]
    fn plotdata_files() {
        let dir = tempfile::tempdir().unwrap();
        let result = run_experiment(&small(Scheme::AirflZf)).unwrap();
        emit_plotdata(&result.trials, dir.path()).unwrap();
        let rounds = std::fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
        assert!(rounds.starts_with("trial,t,train_loss,grad_norm_sq,clip_fraction,mse,lambda_t,w_norm,phi_t,dp_eps\n"));
        assert_eq!(rounds.lines().count(), 1 + 3 * 6);
        assert!(emit_plotdata(&[], dir.path()).is_err());
    }
}
