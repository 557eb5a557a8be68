//! Command-line front end: calibrate the plant, run closed-loop simulations,
//! sweep parameter grids, tune the sampling time, and validate tuned gain
//! sets on the validation trajectories.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Exit codes: 0 success, 1 configuration error, 2 runtime simulation fault.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ofo::ConfigError> for CliError {
    fn from(e: ofo::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("io error: {e}"))
    }
}

#[derive(Parser)]
#[command(
    name = "ofo",
    about = "Closed-loop simulator and sampling-time tuner for an online feedback \
             optimization pressure controller on a centrifugal compressor",
    version
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Plant parameter file (TOML); built-in calibrated defaults when omitted
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// Controller configuration file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for concurrent runs
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate plant constants against the reference operating data and
    /// write the parameter file plus a residual report
    Calibrate {
        /// Settling-time goal for the linearized step response, s
        #[arg(long, default_value_t = 47.5)]
        settling: f64,
    },
    /// Run one closed-loop simulation and write the trace and metrics
    Simulate {
        /// Controller gain
        #[arg(long)]
        nu: Option<f64>,
        /// Controller sampling time, s
        #[arg(long)]
        dt: Option<f64>,
        /// Setpoint: constant | sine | step | path to a t,psd CSV
        #[arg(long, default_value = "constant")]
        setpoint: String,
        /// Horizon, s
        #[arg(long, default_value_t = 200.0)]
        t_final: f64,
        /// Start from the validation operating point instead of the
        /// calibrated steady state
        #[arg(long)]
        from_validation_state: bool,
    },
    /// Evaluate a Cartesian (nu, dt) grid and write it as CSV
    Sweep {
        /// Comma-separated gain values
        #[arg(long, default_value = "0.001,0.1,1,10,1000")]
        nu_values: String,
        /// Comma-separated sampling times, s
        #[arg(long, default_value = "0.005,0.05,0.5,5,50")]
        dt_values: String,
        #[arg(long, default_value = "constant")]
        setpoint: String,
        #[arg(long, default_value_t = 200.0)]
        t_final: f64,
    },
    /// Maximize the sampling time under error/oscillation thresholds,
    /// once per threshold pair
    Tune {
        /// Threshold pair "beta1,beta2"; repeat for a schedule
        #[arg(long = "beta", required = true)]
        betas: Vec<String>,
        #[arg(long, default_value = "constant")]
        setpoint: String,
        #[arg(long, default_value_t = 100)]
        budget: usize,
        #[arg(long, default_value_t = 200.0)]
        t_final: f64,
    },
    /// Run named gain sets against the validation trajectories from the
    /// validation initial state and tabulate the errors
    Validate {
        /// Gain set "NAME=nu,dt"; repeatable
        #[arg(long = "set", required = true)]
        sets: Vec<String>,
        /// Validation trajectories to run (comma-separated: step, sine)
        #[arg(long, default_value = "step,sine")]
        trajectories: String,
        #[arg(long, default_value_t = 200.0)]
        t_final: f64,
    },
}

fn main() -> ExitCode {
    // usage problems are configuration errors: exit 1, not clap's default 2
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: could not size the worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Calibrate { settling } => commands::calibrate(&cli.common, *settling),
        Command::Simulate {
            nu,
            dt,
            setpoint,
            t_final,
            from_validation_state,
        } => commands::simulate(
            &cli.common,
            *nu,
            *dt,
            setpoint,
            *t_final,
            *from_validation_state,
        ),
        Command::Sweep {
            nu_values,
            dt_values,
            setpoint,
            t_final,
        } => commands::sweep(&cli.common, nu_values, dt_values, setpoint, *t_final),
        Command::Tune {
            betas,
            setpoint,
            budget,
            t_final,
        } => commands::tune(&cli.common, betas, setpoint, *budget, *t_final),
        Command::Validate {
            sets,
            trajectories,
            t_final,
        } => commands::validate(&cli.common, sets, trajectories, *t_final),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
