//! Experiment configuration: a flat TOML file whose keys mirror
//! [`SystemConfig`]'s fields. Missing keys take the desk-scale defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aircomp::NoiseConvention;
use crate::error::{Error, Result};
use crate::fl::{active_count, TaskKind};

/// Training pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Noiseless FedAvg without clipping.
    Vanilla,
    /// Noiseless FedAvg on clipped updates.
    Clip,
    /// Over-the-air aggregation with the zero-forcing combiner.
    AirflZf,
    /// Over-the-air aggregation with privacy-constrained combiners.
    AirflDp,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Vanilla, Scheme::Clip, Scheme::AirflZf, Scheme::AirflDp];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Vanilla => "vanilla",
            Scheme::Clip => "clip",
            Scheme::AirflZf => "airfl-zf",
            Scheme::AirflDp => "airfl-dp",
        }
    }

    pub fn over_the_air(self) -> bool {
        matches!(self, Scheme::AirflZf | Scheme::AirflDp)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

/// How the privacy budget is spread over rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationMode {
    /// Joint design over all rounds with the whole horizon's channels known.
    #[default]
    Joint,
    /// Each round spends `A/T` using only its own channel.
    Online,
}

impl std::str::FromStr for AllocationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Self::Joint),
            "online" => Ok(Self::Online),
            other => Err(Error::Config(format!("unknown allocation mode `{other}`"))),
        }
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Devices.
    pub n: usize,
    /// Receive antennas.
    pub m: usize,
    /// Model dimension.
    pub d: usize,
    /// Communication rounds `T`.
    pub rounds: usize,
    /// Local SGD steps `Q`.
    pub local_steps: usize,
    pub eta: f64,
    /// Device sampling rate; `r·n` must be an integer.
    pub r: f64,
    /// Clipping threshold; defaults to `√(0.012 d)`.
    pub clip: Option<f64>,
    /// Transmit power budget in watts.
    pub power: f64,
    /// Worst-case receive SNR `PΛ_min/σ²`; when set it overrides `power`.
    pub snr: Option<f64>,
    /// Receiver noise power in watts.
    pub sigma2: f64,
    pub delta: f64,
    /// Per-dimension target `ε/√d`.
    pub eps_tilde: f64,
    /// Slack constant; resolved automatically when absent.
    pub c_delta: Option<f64>,
    /// Diameter of the parameter domain (`inf` for unbounded).
    pub diameter: f64,
    pub task: TaskKind,
    pub scheme: Scheme,
    pub trials: usize,
    pub batch: usize,
    pub samples_per_device: usize,
    pub carrier_freq: f64,
    pub max_distance: f64,
    pub seed: u64,
    pub noise_convention: NoiseConvention,
    pub allocation: AllocationMode,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n: 10,
            m: 20,
            d: 50,
            rounds: 50,
            local_steps: 5,
            eta: 0.005,
            r: 1.0,
            clip: None,
            power: 2e-3,
            snr: None,
            sigma2: 1e-13,
            delta: 1e-5,
            eps_tilde: 0.1,
            c_delta: None,
            diameter: f64::INFINITY,
            task: TaskKind::Quadratic,
            scheme: Scheme::AirflDp,
            trials: 10,
            batch: 10,
            samples_per_device: 50,
            carrier_freq: 2.4e9,
            max_distance: 1000.0,
            seed: 1,
            noise_convention: NoiseConvention::Half,
            allocation: AllocationMode::Joint,
        }
    }
}

impl SystemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn clip_threshold(&self) -> f64 {
        self.clip.unwrap_or_else(|| (0.012 * self.d as f64).sqrt())
    }

    /// Overall target `ε = ε̃ √d`.
    pub fn epsilon_target(&self) -> f64 {
        self.eps_tilde * (self.d as f64).sqrt()
    }

    pub fn active_devices(&self) -> Result<usize> {
        active_count(self.n, self.r)
    }

    /// Transmit power for a trial whose weakest device has path loss `lambda_min`.
    pub fn power_for(&self, lambda_min: f64) -> f64 {
        match self.snr {
            Some(snr) => snr * self.sigma2 / lambda_min,
            None => self.power,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n == 0 || self.m == 0 || self.d == 0 || self.rounds == 0 || self.local_steps == 0 {
            return bad("n, m, d, rounds and local_steps must be positive".into());
        }
        if self.trials == 0 || self.batch == 0 {
            return bad("trials and batch must be positive".into());
        }
        let k = self.active_devices()?;
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip must be positive, got {c}"));
            }
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return bad(format!("power must be positive, got {}", self.power));
        }
        if let Some(snr) = self.snr {
            if !(snr > 0.0 && snr.is_finite()) {
                return bad(format!("snr must be positive, got {snr}"));
            }
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return bad(format!("sigma2 must be non-negative, got {}", self.sigma2));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.eps_tilde > 0.0 && self.eps_tilde.is_finite()) {
            return bad(format!("eps_tilde must be positive, got {}", self.eps_tilde));
        }
        if let Some(c) = self.c_delta {
            if !(c >= 0.0 && c.is_finite()) {
                return bad(format!("c_delta must be non-negative, got {c}"));
            }
        }
        if !(self.diameter >= 0.0) {
            return bad(format!("diameter must be non-negative, got {}", self.diameter));
        }
        if self.batch > self.samples_per_device {
            return bad(format!("batch {} exceeds samples_per_device {}", self.batch, self.samples_per_device));
        }
        if !(self.carrier_freq > 0.0 && self.max_distance > 0.0) {
            return bad("carrier_freq and max_distance must be positive".into());
        }
        if self.task == TaskKind::SmallMlp && self.d < 13 {
            return bad("small-mlp needs d ≥ 13".into());
        }
        if self.scheme.over_the_air() {
            if self.m < k {
                return bad(format!("zero forcing needs m ≥ rn, got m = {}, rn = {k}", self.m));
            }
            if self.scheme == Scheme::AirflDp && self.sigma2 == 0.0 {
                return bad("airfl-dp needs sigma2 > 0".into());
            }
        }
        Ok(())
    }
}
