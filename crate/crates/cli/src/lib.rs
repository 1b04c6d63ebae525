//! Command-line driver for quantum-ratchet scenarios.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 infeasible
//! optimisation, 4 numerical failure.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::ScenarioConfig;
use crate::output::OutputDir;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<qratchet::Error> for CliError {
    fn from(e: qratchet::Error) -> Self {
        use qratchet::Error as E;
        match e {
            E::Capacity { .. }
            | E::BasisMismatch(_)
            | E::InvalidAmplitudes { .. }
            | E::ParticleNumber(_)
            | E::InvalidArgument(_)
            | E::OutOfRange { .. } => CliError::Config(e.to_string()),
            E::NormDrift { .. } | E::NonFinite { .. } | E::Unreachable(_) | E::NotLocalized { .. } | E::NotConverged { .. } => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qratchet", version, about = "Quantum-ratchet transport scenarios")]
pub struct Cli {
    /// TOML scenario file; defaults are used for anything it omits.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving CSV tables and JSON reports.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the seed of seeded commands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the integrator step (time in units of 1/U).
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate the exact constant-hopping swap pulses.
    SwapFamily,
    /// Design a smooth swap pulse of least energy.
    Optimize,
    /// Carry an imprinted qubit along the chain.
    Transport,
    /// Double-well band structure and lattice-depth schedules.
    Bands,
    /// Compare exact control gradients with finite differences.
    GradCheck {
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

/// The scenario after applying command-line overrides.
pub fn resolve(cli: &Cli) -> Result<ScenarioConfig, CliError> {
    let mut s = match &cli.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        s.optimize.seed = seed;
        s.transport.seed = seed;
        s.grad_check.seed = seed;
    }
    if let Some(dt) = cli.dt {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CliError::Config(format!("--dt must be positive, got {dt}")));
        }
        s.swap_family.dt_times_U = Some(dt);
        s.optimize.dt_times_U = Some(dt);
        s.transport.dt_times_U = Some(dt);
        s.grad_check.dt_times_U = Some(dt);
    }
    Ok(s)
}

/// Runs one command and returns a summary for the terminal.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let scenario = resolve(cli)?;
    let mut out = OutputDir::new(&cli.out);
    let summary = match &cli.command {
        Command::SwapFamily => {
            let rows = commands::swap_family(&scenario, &mut out)?;
            let worst = rows.iter().map(|r| r.fidelity_check).fold(1.0, f64::min);
            format!("{} family members, lowest swap fidelity {worst:.12}", rows.len())
        }
        Command::Optimize => {
            let r = commands::optimize_command(&scenario, &mut out)?;
            let s = r.solution().expect("solved outcomes only");
            format!(
                "solved: F = {:.8}, swap fidelity = {:.8}, E = {:.6}, c = {:?}",
                s.fidelity,
                r.swap_fidelity.unwrap_or(f64::NAN),
                s.energy,
                s.x
            )
        }
        Command::Transport => {
            let r = commands::transport(&scenario, &mut out)?;
            format!(
                "net displacement {:+.4} sites (expected {:+}), final fidelity {:.6}",
                r.net_displacement,
                r.expected_displacement,
                r.fidelities.last().copied().unwrap_or(f64::NAN)
            )
        }
        Command::Bands => {
            let r = commands::bands(&scenario, &mut out)?;
            let mut s = format!(
                "{} points, ln J fit rms {:.4}, u spread {:.3}, single band everywhere: {}",
                r.table.points.len(),
                r.table.fit.rms,
                r.table.u_spread(),
                r.all_single_band
            );
            if let Some(sched) = &r.schedule {
                s += &format!(
                    "\nschedule: {} of {} samples clamped to the deepest barrier, round-trip rms {}",
                    r.clamped_samples,
                    sched.samples.len(),
                    r.round_trip_residual.map_or("n/a".into(), |v| format!("{v:.4}"))
                );
            }
            s
        }
        Command::GradCheck { corrupt_gradient } => {
            let r = commands::grad_check(&scenario, &mut out, *corrupt_gradient)?;
            format!("{} problems, max relative error {:e}", r.cases.len(), r.max_relative_error)
        }
    };
    let files: Vec<String> = out.written.iter().map(|p| p.display().to_string()).collect();
    Ok(format!("{summary}\nwrote {}", files.join(", ")))
}
