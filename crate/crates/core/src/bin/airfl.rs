//! `airfl`: simulate, sweep and inspect private over-the-air federated learning.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use airfl_core::aircomp::NoiseConvention;
use airfl_core::beamform::write_allocation_csv;
use airfl_core::config::{AllocationMode, Scheme, SystemConfig};
use airfl_core::experiment::{
    emit_plotdata, mean_stderr, plan_trial, privacy_points, run_experiment, sweep, write_sweep_csv,
    write_sweep_rounds_csv, SweepAxis, TrialRecord,
};
use airfl_core::fl::TaskKind;
use airfl_core::privacy::write_curve_csv;
use airfl_core::validation::run_validation;
use airfl_core::{Error, Result};

const ANALOGUE_NOTE: &str =
    "note: synthetic desk-scale task; losses are a qualitative analogue of image-classification accuracy";

#[derive(Parser)]
#[command(name = "airfl", version, about = "Differentially private over-the-air federated learning simulator")]
struct Cli {
    /// TOML configuration file; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the fully resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    emit_config: bool,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    d: Option<usize>,
    #[arg(long, global = true)]
    rounds: Option<usize>,
    #[arg(long, global = true)]
    local_steps: Option<usize>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    r: Option<f64>,
    #[arg(long, global = true)]
    clip: Option<f64>,
    #[arg(long, global = true)]
    power: Option<f64>,
    #[arg(long, global = true)]
    snr: Option<f64>,
    #[arg(long, global = true)]
    sigma2: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    eps_tilde: Option<f64>,
    #[arg(long, global = true)]
    c_delta: Option<f64>,
    #[arg(long, global = true)]
    diameter: Option<f64>,
    #[arg(long, global = true)]
    task: Option<TaskKind>,
    #[arg(long, global = true)]
    scheme: Option<Scheme>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    batch: Option<usize>,
    #[arg(long, global = true)]
    samples_per_device: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    noise_convention: Option<NoiseConvention>,
    #[arg(long, global = true)]
    allocation: Option<AllocationMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv and summary.csv.
    Simulate {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every scheme across values of one parameter.
    Sweep {
        /// T, eps or snr.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<Scheme>>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Privacy loss versus horizon for the first trial's combiners.
    PrivacyCurve {
        #[arg(long, default_value = "privacy_curve.csv")]
        out: PathBuf,
    },
    /// Privacy-constrained combiner norms for the first trial.
    Optimize {
        #[arg(long, default_value = "allocation.csv")]
        out: PathBuf,
    },
    /// Run the built-in oracle checks.
    Validate,
}

macro_rules! apply {
    ($cfg:ident, $o:ident, $($field:ident),*) => {
        $(if let Some(v) = $o.$field { $cfg.$field = v; })*
    };
}

fn resolve(cli: &Cli) -> Result<SystemConfig> {
    let mut cfg = match &cli.config {
        Some(path) => SystemConfig::load(path)?,
        None => SystemConfig::default(),
    };
    let o = &cli.overrides;
    apply!(cfg, o, n, m, d, rounds, local_steps, eta, r, power, sigma2, delta, eps_tilde, diameter);
    apply!(cfg, o, task, scheme, trials, batch, samples_per_device, seed, noise_convention, allocation);
    if o.clip.is_some() {
        cfg.clip = o.clip;
    }
    if o.snr.is_some() {
        cfg.snr = o.snr;
    }
    if o.c_delta.is_some() {
        cfg.c_delta = o.c_delta;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_config(cfg: &SystemConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

fn simulate(cfg: &SystemConfig, out: &Path) -> Result<()> {
    let result = run_experiment(cfg)?;
    emit_plotdata(&result.trials, out)?;
    write_config(cfg, out)?;
    let losses: Vec<f64> = result.trials.iter().map(TrialRecord::final_loss).collect();
    let (mean, se) = mean_stderr(&losses);
    println!("scheme {} | {} trials x {} rounds", cfg.scheme, cfg.trials, cfg.rounds);
    println!("final training loss {mean:.6e} +/- {se:.2e}");
    let eps: Vec<f64> = result.trials.iter().map(TrialRecord::final_dp_eps).collect();
    println!("final epsilon (mean) {:.6e}, target {:.6e}", mean_stderr(&eps).0, cfg.epsilon_target());
    if let Some(link) = result.trials[0].link.as_ref() {
        if let (Some(perk), Some(threshold)) = (link.perk, link.perk_snr_threshold) {
            let regime = if perk.perk { "privacy for free" } else { "privacy-constrained" };
            let snr = link.power * link.lambda_min / cfg.sigma2;
            println!("trial 0: {regime} (worst-case SNR {snr:.3e}, threshold {threshold:.3e})");
        }
    }
    println!("{ANALOGUE_NOTE}");
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    if cli.emit_config {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    match cli.command {
        Command::Simulate { out } => simulate(&cfg, &out),
        Command::Sweep { axis, values, schemes, out } => {
            let schemes = schemes.unwrap_or_else(|| Scheme::ALL.to_vec());
            let output = sweep(&cfg, axis, &values, &schemes)?;
            std::fs::create_dir_all(&out)?;
            write_sweep_csv(&output.rows, File::create(out.join("sweep.csv"))?)?;
            write_sweep_rounds_csv(&output.runs, File::create(out.join("sweep_rounds.csv"))?)?;
            write_config(&cfg, &out)?;
            for row in &output.rows {
                println!(
                    "{:>12.4e} {:<9} loss {:.6e} +/- {:.2e} eps {:.4e}",
                    row.axis_value, row.scheme, row.final_loss_mean, row.final_loss_stderr, row.dp_eps
                );
            }
            println!("{ANALOGUE_NOTE}");
            Ok(())
        }
        Command::PrivacyCurve { out } => {
            let cfg = if cfg.scheme.over_the_air() { cfg } else { SystemConfig { scheme: Scheme::AirflDp, ..cfg } };
            let points = privacy_points(&cfg, &plan_trial(&cfg, 0)?)?;
            write_curve_csv(&points, File::create(&out)?)?;
            let last = points.last().expect("at least one round");
            println!("T = {}: rdp_eps {:.6e}, dp_eps {:.6e}", last.t, last.rdp_eps, last.dp_eps);
            Ok(())
        }
        Command::Optimize { out } => {
            let cfg = SystemConfig { scheme: Scheme::AirflDp, ..cfg };
            let plan = plan_trial(&cfg, 0)?;
            let link = plan.link.as_ref().ok_or_else(|| Error::Invariant("missing link design".into()))?;
            let (alloc, budget, perk) = match (&link.allocation, link.budget, link.perk) {
                (Some(a), Some(b), Some(p)) => (a, b, p),
                _ => return Err(Error::Invariant("missing allocation".into())),
            };
            write_allocation_csv(&link.pi(), alloc, budget.a, File::create(&out)?)?;
            println!("A = {:.6e}, scaled = {}, mu* = {:.6e}", budget.a, alloc.scaled, alloc.mu_star);
            println!("perk condition {} (margin {:.3e})", perk.perk, perk.margin);
            Ok(())
        }
        Command::Validate => {
            let checks = run_validation(cfg.seed)?;
            for c in &checks {
                println!("{} {:<22} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().all(|c| c.passed) {
                Ok(())
            } else {
                Err(Error::Invariant("validation failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
