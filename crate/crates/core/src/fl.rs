//! Federated learning core: synthetic tasks, local SGD, clipping and the
//! noiseless aggregators used by the Vanilla FL and FL-with-clipping baselines.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Which synthetic learning problem to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Logistic,
    Quadratic,
    SmallMlp,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Self::Logistic),
            "quadratic" => Ok(Self::Quadratic),
            "small-mlp" | "mlp" => Ok(Self::SmallMlp),
            other => Err(Error::Config(format!("unknown task kind `{other}`"))),
        }
    }
}

/// Norm scale of the quadratic task's common center.
pub const QUADRATIC_CENTER_NORM: f64 = 0.3;
/// Per-coordinate spread of quadratic samples around the center.
pub const QUADRATIC_SAMPLE_SPREAD: f64 = 0.05;
/// Ridge weight of the logistic task.
pub const LOGISTIC_RIDGE: f64 = 0.01;
/// Hidden width of the small MLP.
pub const MLP_HIDDEN: usize = 4;

/// One training example. Quadratic samples ignore `label`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: f64,
}

/// Loss model shared by all devices of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    /// `½‖θ − ξ‖²`
    Quadratic { dim: usize },
    /// `log(1 + exp(−y θᵀx)) + (ridge/2)‖θ‖²`, labels in {−1, +1}
    Logistic { dim: usize, ridge: f64 },
    /// One tanh hidden layer and a logistic output. Parameters are laid out as
    /// `[W1 (hidden×input, row major), b1, v, b2]`; any trailing parameters up
    /// to `dim` are inert.
    SmallMlp { dim: usize, input: usize, hidden: usize },
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Task {
    pub fn kind(&self) -> TaskKind {
        match self {
            Task::Quadratic { .. } => TaskKind::Quadratic,
            Task::Logistic { .. } => TaskKind::Logistic,
            Task::SmallMlp { .. } => TaskKind::SmallMlp,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Task::Quadratic { dim } | Task::Logistic { dim, .. } | Task::SmallMlp { dim, .. } => dim,
        }
    }

    fn mlp_forward(theta: &[f64], input: usize, hidden: usize, x: &[f64]) -> (Vec<f64>, f64) {
        let b1 = &theta[hidden * input..hidden * input + hidden];
        let v = &theta[hidden * input + hidden..hidden * input + 2 * hidden];
        let b2 = theta[hidden * input + 2 * hidden];
        let act: Vec<f64> = (0..hidden)
            .map(|k| {
                let row = &theta[k * input..(k + 1) * input];
                (row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b1[k]).tanh()
            })
            .collect();
        let out = act.iter().zip(v).map(|(a, v)| a * v).sum::<f64>() + b2;
        (act, out)
    }

    pub fn loss(&self, theta: &[f64], sample: &Sample) -> f64 {
        match *self {
            Task::Quadratic { .. } => {
                0.5 * theta.iter().zip(&sample.features).map(|(t, x)| (t - x).powi(2)).sum::<f64>()
            }
            Task::Logistic { ridge, .. } => {
                let z: f64 = theta.iter().zip(&sample.features).map(|(t, x)| t * x).sum();
                softplus(-sample.label * z) + 0.5 * ridge * theta.iter().map(|t| t * t).sum::<f64>()
            }
            Task::SmallMlp { input, hidden, .. } => {
                let (_, out) = Self::mlp_forward(theta, input, hidden, &sample.features);
                softplus(-sample.label * out)
            }
        }
    }

    /// Adds `scale · ∇ℓ(θ; sample)` into `out`.
    pub fn add_grad(&self, theta: &[f64], sample: &Sample, scale: f64, out: &mut [f64]) {
        match *self {
            Task::Quadratic { .. } => {
                for ((o, t), x) in out.iter_mut().zip(theta).zip(&sample.features) {
                    *o += scale * (t - x);
                }
            }
            Task::Logistic { ridge, .. } => {
                let z: f64 = theta.iter().zip(&sample.features).map(|(t, x)| t * x).sum();
                let coef = -sample.label * sigmoid(-sample.label * z);
                for ((o, t), x) in out.iter_mut().zip(theta).zip(&sample.features) {
                    *o += scale * (coef * x + ridge * t);
                }
            }
            Task::SmallMlp { input, hidden, .. } => {
                let (act, o) = Self::mlp_forward(theta, input, hidden, &sample.features);
                let y = sample.label;
                let dout = -y * sigmoid(-y * o);
                let v_off = hidden * input + hidden;
                for k in 0..hidden {
                    let v = theta[v_off + k];
                    let dpre = dout * v * (1.0 - act[k] * act[k]);
                    for (j, x) in sample.features.iter().enumerate() {
                        out[k * input + j] += scale * dpre * x;
                    }
                    out[hidden * input + k] += scale * dpre;
                    out[v_off + k] += scale * dout * act[k];
                }
                out[v_off + hidden] += scale * dout;
            }
        }
    }

    /// Per-sample smoothness constant `L`. Exact for the quadratic and logistic
    /// tasks; for the MLP it is a sampled power-iteration estimate with a
    /// safety factor of two.
    pub fn smoothness(&self, datasets: &[LocalDataset]) -> f64 {
        let samples = datasets.iter().flat_map(|d| d.samples.iter());
        match *self {
            Task::Quadratic { .. } => 1.0,
            Task::Logistic { ridge, .. } => {
                ridge + samples.map(|s| s.features.iter().map(|x| x * x).sum::<f64>()).fold(0.0, f64::max) / 4.0
            }
            Task::SmallMlp { dim, .. } => {
                let probe: Vec<&Sample> = samples.take(16).collect();
                let mut best: f64 = 0.0;
                for (p, s) in probe.iter().enumerate() {
                    let theta: Vec<f64> =
                        (0..dim).map(|j| 0.5 * (((p * 31 + j * 17) % 13) as f64 / 13.0 - 0.5)).collect();
                    best = best.max(self.hessian_spectral_estimate(&theta, s));
                }
                2.0 * best
            }
        }
    }

    fn hessian_spectral_estimate(&self, theta: &[f64], sample: &Sample) -> f64 {
        let dim = theta.len();
        let h = 1e-5;
        let mut v: Vec<f64> = (0..dim).map(|j| 1.0 + (j % 7) as f64 * 0.1).collect();
        let mut lambda = 0.0;
        for _ in 0..40 {
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= nv);
            let plus: Vec<f64> = theta.iter().zip(&v).map(|(t, v)| t + h * v).collect();
            let minus: Vec<f64> = theta.iter().zip(&v).map(|(t, v)| t - h * v).collect();
            let mut gp = vec![0.0; dim];
            let mut gm = vec![0.0; dim];
            self.add_grad(&plus, sample, 1.0, &mut gp);
            self.add_grad(&minus, sample, 1.0, &mut gm);
            let hv: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            lambda = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if lambda == 0.0 {
                break;
            }
            v = hv;
        }
        lambda
    }
}

/// Global model parameters `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub theta: Vec<f64>,
}

impl ModelState {
    pub fn zeros(dim: usize) -> Self {
        Self { theta: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// Data held by one device.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    pub device: usize,
    pub samples: Vec<Sample>,
    pub task: Task,
}

impl LocalDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        self.samples.iter().map(|s| self.task.loss(theta, s)).sum::<f64>() / self.len() as f64
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        let scale = 1.0 / self.len() as f64;
        for s in &self.samples {
            self.task.add_grad(theta, s, scale, &mut g);
        }
        g
    }
}

/// Global empirical loss `f(θ) = (1/n) Σ f_i(θ)`.
pub fn global_loss(datasets: &[LocalDataset], theta: &[f64]) -> f64 {
    datasets.iter().map(|d| d.loss(theta)).sum::<f64>() / datasets.len() as f64
}

pub fn global_gradient(datasets: &[LocalDataset], theta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    for d in datasets {
        for (gi, di) in g.iter_mut().zip(d.gradient(theta)) {
            *gi += di / datasets.len() as f64;
        }
    }
    g
}

/// Problem constants entering the privacy and convergence analysis.
///
/// `l` is exact for the analytic tasks. `g`, `sigma_l` and `sigma_g` are
/// evaluated empirically at a reference point, not global suprema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub l: f64,
    pub g: f64,
    pub sigma_l: f64,
    pub sigma_g: f64,
    /// Domain diameter; `f64::INFINITY` disables projection and saturation.
    pub d: f64,
    pub f_star: f64,
}

impl BoundConstants {
    pub fn estimate(datasets: &[LocalDataset], theta: &[f64], batch: usize, diameter: f64) -> Self {
        let task = &datasets[0].task;
        let global = global_gradient(datasets, theta);
        let mut g: f64 = 0.0;
        let mut sigma_l2: f64 = 0.0;
        let mut sigma_g2: f64 = 0.0;
        for d in datasets {
            let local = d.gradient(theta);
            sigma_g2 = sigma_g2.max(dist2(&local, &global));
            let mut spread = 0.0;
            for s in &d.samples {
                let mut gs = vec![0.0; theta.len()];
                task.add_grad(theta, s, 1.0, &mut gs);
                g = g.max(norm(&gs));
                spread += dist2(&gs, &local);
            }
            let n = d.len() as f64;
            let b = batch.min(d.len()).max(1) as f64;
            // mini-batch without replacement: per-sample variance × (N − B) / (B (N − 1))
            let per_sample = spread / n;
            let fpc = if n > 1.0 { (n - b) / (b * (n - 1.0)) } else { 0.0 };
            sigma_l2 = sigma_l2.max(per_sample * fpc);
        }
        let f_star = match task {
            Task::Quadratic { .. } => quadratic_optimum(datasets).1,
            _ => 0.0,
        };
        Self {
            l: task.smoothness(datasets),
            g,
            sigma_l: sigma_l2.sqrt(),
            sigma_g: sigma_g2.sqrt(),
            d: diameter,
            f_star,
        }
    }
}

/// Minimizer and minimum of the quadratic task's global loss (equal-weight
/// devices).
pub fn quadratic_optimum(datasets: &[LocalDataset]) -> (Vec<f64>, f64) {
    let dim = datasets[0].task.dim();
    let mut opt = vec![0.0; dim];
    for d in datasets {
        let w = 1.0 / (datasets.len() * d.len()) as f64;
        for s in &d.samples {
            for (o, x) in opt.iter_mut().zip(&s.features) {
                *o += w * x;
            }
        }
    }
    let f_star = global_loss(datasets, &opt);
    (opt, f_star)
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Runs `steps` mini-batch SGD steps from `theta0` on one device's data.
/// Each step draws a fresh batch uniformly without replacement.
pub fn local_sgd<R: Rng + ?Sized>(
    theta0: &ModelState,
    data: &LocalDataset,
    steps: usize,
    eta: f64,
    batch: usize,
    rng: &mut R,
) -> Result<ModelState> {
    if data.is_empty() {
        return Err(param(format!("device {} has an empty dataset", data.device)));
    }
    if steps == 0 {
        return Err(param("number of local steps must be at least 1"));
    }
    if !(eta > 0.0) {
        return Err(param("learning rate must be positive"));
    }
    if batch == 0 || batch > data.len() {
        return Err(param(format!("batch size {batch} outside 1..={}", data.len())));
    }
    let mut theta = theta0.theta.clone();
    let mut grad = vec![0.0; theta.len()];
    let scale = 1.0 / batch as f64;
    for _ in 0..steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in index::sample(rng, data.len(), batch) {
            data.task.add_grad(&theta, &data.samples[i], scale, &mut grad);
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= eta * g;
        }
    }
    Ok(ModelState { theta })
}

/// Scaled model difference `(θ⁰ − θ^Q) / η`.
pub fn model_diff(theta0: &ModelState, theta_q: &ModelState, eta: f64) -> Result<Vec<f64>> {
    if theta0.dim() != theta_q.dim() {
        return Err(param(format!("dimension mismatch: {} vs {}", theta0.dim(), theta_q.dim())));
    }
    if !(eta > 0.0) {
        return Err(param("learning rate must be positive"));
    }
    Ok(theta0.theta.iter().zip(&theta_q.theta).map(|(a, b)| (a - b) / eta).collect())
}

/// A model difference after clipping, with the factor that was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ClippedUpdate {
    pub delta_bar: Vec<f64>,
    /// `min(1, c / ‖x‖)`; 1 means the update was not clipped.
    pub factor: f64,
}

/// `x · min(1, c/‖x‖)`.
pub fn clip(x: &[f64], c: f64) -> ClippedUpdate {
    assert!(c > 0.0, "clipping threshold must be positive");
    let n = norm(x);
    let factor = if n > c { c / n } else { 1.0 };
    ClippedUpdate { delta_bar: x.iter().map(|v| v * factor).collect(), factor }
}

/// `θ − (η / rn) Σ updates`.
pub fn aggregate_noiseless(updates: &[Vec<f64>], theta: &ModelState, eta: f64, active: usize) -> Result<ModelState> {
    if updates.is_empty() {
        return Err(param("no updates to aggregate"));
    }
    if updates.len() != active {
        return Err(param(format!("expected {active} updates, got {}", updates.len())));
    }
    if let Some(u) = updates.iter().find(|u| u.len() != theta.dim()) {
        return Err(param(format!("update of dimension {} for a {}-dimensional model", u.len(), theta.dim())));
    }
    let step = eta / active as f64;
    let mut next = theta.theta.clone();
    for u in updates {
        for (t, v) in next.iter_mut().zip(u) {
            *t -= step * v;
        }
    }
    Ok(ModelState { theta: next })
}

/// Number of active devices `rn`, validated to be a positive integer.
pub fn active_count(n: usize, r: f64) -> Result<usize> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Config(format!("sampling rate must lie in (0, 1], got {r}")));
    }
    let k = r * n as f64;
    let rounded = k.round();
    if (k - rounded).abs() > 1e-9 || rounded < 1.0 {
        return Err(Error::Config(format!("r·n = {k} is not a positive integer")));
    }
    Ok(rounded as usize)
}

/// Uniform random subset of `rn` devices, returned in increasing order.
pub fn sample_active_devices<R: Rng + ?Sized>(n: usize, r: f64, rng: &mut R) -> Result<Vec<usize>> {
    let k = active_count(n, r)?;
    if k == n {
        return Ok((0..n).collect());
    }
    let mut set = index::sample(rng, n, k).into_vec();
    set.sort_unstable();
    Ok(set)
}

/// Euclidean projection onto the ball of diameter `diameter` around `center`.
pub fn project_to_ball(theta: &mut ModelState, center: &[f64], diameter: f64) {
    if !diameter.is_finite() {
        return;
    }
    let radius = diameter / 2.0;
    let offset: Vec<f64> = theta.theta.iter().zip(center).map(|(t, c)| t - c).collect();
    let n = norm(&offset);
    if n > radius {
        let s = radius / n;
        for ((t, c), o) in theta.theta.iter_mut().zip(center).zip(&offset) {
            *t = c + o * s;
        }
    }
}

/// Bounded parameter domain: a ball of the given diameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub center: Vec<f64>,
    pub diameter: f64,
}

impl Domain {
    pub fn ball(center: Vec<f64>, diameter: f64) -> Self {
        Self { center, diameter }
    }

    pub fn is_bounded(&self) -> bool {
        self.diameter.is_finite()
    }

    pub fn project(&self, theta: &mut ModelState) {
        project_to_ball(theta, &self.center, self.diameter);
    }

    pub fn contains(&self, theta: &ModelState) -> bool {
        !self.is_bounded() || dist2(&theta.theta, &self.center).sqrt() <= self.diameter / 2.0 * (1.0 + 1e-12)
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Generates a synthetic task and partitions `total_samples` i.i.d. samples
/// across `n` devices (sizes differ by at most one).
///
/// * quadratic: `ξ = v + noise`, `v ~ N(0, (0.3²/d) I)`, so `θ*` is the sample mean
/// * logistic: Gaussian mixture `x ~ N(y μ, I)` with `‖μ‖ = 1.5`, `y = ±1`
/// * small-mlp: the same mixture in `input` dimensions, tanh hidden layer
pub fn make_synthetic_task<R: Rng + ?Sized>(
    kind: TaskKind,
    d: usize,
    n: usize,
    total_samples: usize,
    rng: &mut R,
) -> Result<Vec<LocalDataset>> {
    if d == 0 || n == 0 {
        return Err(param("dimension and device count must be positive"));
    }
    if total_samples < n {
        return Err(param(format!("{total_samples} samples cannot cover {n} devices")));
    }
    let task = match kind {
        TaskKind::Quadratic => Task::Quadratic { dim: d },
        TaskKind::Logistic => Task::Logistic { dim: d, ridge: LOGISTIC_RIDGE },
        TaskKind::SmallMlp => {
            let hidden = MLP_HIDDEN;
            if d < hidden * 3 + 1 {
                return Err(param(format!("small-mlp needs d >= {}", hidden * 3 + 1)));
            }
            let input = (d - 1) / hidden - 2;
            Task::SmallMlp { dim: d, input, hidden }
        }
    };
    let samples: Vec<Sample> = match task {
        Task::Quadratic { dim } => {
            let center: Vec<f64> =
                (0..dim).map(|_| gaussian(rng) * QUADRATIC_CENTER_NORM / (dim as f64).sqrt()).collect();
            (0..total_samples)
                .map(|_| Sample {
                    features: center.iter().map(|c| c + QUADRATIC_SAMPLE_SPREAD * gaussian(rng)).collect(),
                    label: 0.0,
                })
                .collect()
        }
        Task::Logistic { dim, .. } | Task::SmallMlp { input: dim, .. } => {
            let mut mean: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
            let mn = norm(&mean).max(1e-12);
            mean.iter_mut().for_each(|m| *m *= 1.5 / mn);
            (0..total_samples)
                .map(|_| {
                    let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    Sample { features: mean.iter().map(|m| y * m + gaussian(rng)).collect(), label: y }
                })
                .collect()
        }
    };
    let mut parts: Vec<Vec<Sample>> = vec![Vec::new(); n];
    for (i, s) in samples.into_iter().enumerate() {
        parts[i % n].push(s);
    }
    Ok(parts
        .into_iter()
        .enumerate()
        .map(|(device, samples)| LocalDataset { device, samples, task: task.clone() })
        .collect())
}
