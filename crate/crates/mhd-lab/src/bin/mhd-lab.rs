//! Command-line front end: parses flags, merges them over an optional
//! JSON config, and dispatches to the scenario runner.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for
//! numerical aborts.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use mhd_lab::cli::{self, Overrides, ScenarioConfig};

#[derive(Parser)]
#[command(name = "mhd-lab", version, about = "Numerical laboratory for diffusion-free incompressible MHD near the vertical equilibrium")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct CommonOpts {
    /// JSON scenario config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cubic grid size per axis.
    #[arg(long)]
    n: Option<usize>,
    /// Box period per axis.
    #[arg(long)]
    period: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Magnetic-profile preset: shear | layered | gaussian-loop.
    #[arg(long)]
    preset: Option<String>,
    /// Velocity-data preset: gaussian | besov-class.
    #[arg(long)]
    velocity: Option<String>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Frequency vector, comma separated: --xi 0,0,1
    #[arg(long)]
    xi: Option<String>,
    /// Horizon for the linear-decay quadrature.
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for CSV/JSON/binary outputs and the run manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the damped-wave eigenvalue pair for one frequency.
    Dispersion(CommonOpts),
    /// Quadrature of the linearized decay rates over an admissible data class.
    DecayLinear(CommonOpts),
    /// Pseudo-spectral Eulerian run from preset data.
    SimulateEuler(CommonOpts),
    /// Lagrangian displacement run with energy diagnostics.
    SimulateLagrangian(CommonOpts),
    /// Assemble the field-straightening chart and report its residuals.
    Transform(CommonOpts),
    /// Norm table for a preset velocity field.
    Norms(CommonOpts),
    /// Run the product/interpolation inequality battery.
    CheckInequalities(CommonOpts),
}

fn parse_xi(s: &str) -> Result<[f64; 3], mhd_lab::Error> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(mhd_lab::Error::InvalidParameter(format!(
            "--xi expects three comma-separated numbers, got '{s}'"
        )));
    }
    let mut xi = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        xi[i] = p.trim().parse().map_err(|_| {
            mhd_lab::Error::InvalidParameter(format!("bad component '{p}' in --xi"))
        })?;
    }
    Ok(xi)
}

fn build_config(opts: &CommonOpts) -> Result<ScenarioConfig, mhd_lab::Error> {
    let base = match &opts.config {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::default(),
    };
    let ov = Overrides {
        n: opts.n,
        period: opts.period,
        dt: opts.dt,
        steps: opts.steps,
        snapshot_every: opts.snapshot_every,
        preset: opts.preset.clone(),
        velocity: opts.velocity.clone(),
        amplitude: opts.amplitude,
        epsilon: opts.epsilon,
        xi: match &opts.xi {
            Some(s) => Some(parse_xi(s)?),
            None => None,
        },
        t_max: opts.t_max,
        seed: opts.seed,
        output_dir: opts
            .out
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned()),
    };
    ov.apply(base)
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let (sub, opts) = match &args.command {
        Command::Dispersion(o) => (cli::Subcommand::Dispersion, o),
        Command::DecayLinear(o) => (cli::Subcommand::DecayLinear, o),
        Command::SimulateEuler(o) => (cli::Subcommand::SimulateEuler, o),
        Command::SimulateLagrangian(o) => (cli::Subcommand::SimulateLagrangian, o),
        Command::Transform(o) => (cli::Subcommand::Transform, o),
        Command::Norms(o) => (cli::Subcommand::Norms, o),
        Command::CheckInequalities(o) => (cli::Subcommand::CheckInequalities, o),
    };
    let cfg = match build_config(opts) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(cli::exit_code(&e) as u8);
        }
    };
    match cli::run(sub, &cfg) {
        Ok(out) => {
            for line in &out.lines {
                println!("{line}");
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
