//! Command-line front end for `rdmc`.
//!
//! [`parse_invocation`] turns an argument vector into a [`RunManifest`] with
//! every default resolved, and [`execute`] runs it. Exit codes: 0 on success,
//! 1 on a computation or I/O error, 2 on a usage error.

mod manifest;
mod run;

use std::path::PathBuf;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use rdmc::data::{TargetOutcome, Thresholds};
use rdmc::kernels::KernelSpec;
use rdmc::llr::{EstimatorMethod, DEFAULT_GRID_POINTS};
use rdmc::simulation::{SimConfig, XDistribution};
use rdmc::threshold::DEFAULT_RESOLUTION;

pub use manifest::{
    BandwidthChoice, CellSet, CommandSpec, CostSource, DensitySpec, FeatureChoice, Interpretation,
    RunManifest,
};
pub use run::{execute, execute_with_artifacts, Artifacts};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum UsageError {
    /// Help or version output; not an error for the caller.
    #[error("{0}")]
    Display(String),
    #[error("{0}")]
    Invalid(String),
}

impl UsageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            UsageError::Display(_) => EXIT_OK,
            UsageError::Invalid(_) => EXIT_USAGE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rdmc", version, about = "Counterfactual curves between two regression-discontinuity thresholds")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Kernel: epanechnikov, gaussian or triangular.
    #[arg(long, global = true, default_value = "epanechnikov", value_parser = parse_kernel)]
    kernel: KernelSpec,

    /// Number of evaluation points between the thresholds.
    #[arg(long, global = true, default_value_t = DEFAULT_GRID_POINTS)]
    grid: usize,

    /// Lower threshold (group 0).
    #[arg(long, global = true, default_value_t = 2.0, allow_negative_numbers = true)]
    c0: f64,

    /// Upper threshold (group 1).
    #[arg(long, global = true, default_value_t = 6.0, allow_negative_numbers = true)]
    c1: f64,

    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Primary output table. A `<out>.manifest.json` sidecar is written next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TargetArg {
    G0,
    G1,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum XDistArg {
    Normal,
    Lognormal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CellsArg {
    Table1,
    Table2,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a dataset from the simulation design.
    Simulate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_enum)]
        x_dist: Option<XDistArg>,
        /// JSON file with a full simulation configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Estimate g0 and/or g1 on the grid.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Covariate columns; defaults to every column other than x, d, z, y.
        #[arg(long, value_delimiter = ',')]
        covariates: Option<Vec<String>>,
        #[arg(long, value_enum, default_value = "both")]
        target: TargetArg,
        /// naive, ipw, ipw0, ipw1 or dr.
        #[arg(long, default_value = "dr", value_parser = parse_method)]
        method: EstimatorMethod,
        /// Fixed bandwidth; cross-validated when absent.
        #[arg(long)]
        bandwidth: Option<f64>,
        /// Refine the cross-validated bandwidth between grid neighbours.
        #[arg(long, conflicts_with = "bandwidth")]
        refine: bool,
        /// Propensity terms, e.g. `1,x,w1,w2`; defaults to all covariates.
        #[arg(long)]
        propensity_spec: Option<String>,
        /// Outcome terms, e.g. `1,x,x^2,w1,w2`; defaults to all covariates and x².
        #[arg(long)]
        outcome_spec: Option<String>,
        /// kde, normal:MEAN,SD, lognormal:MU,SIGMA or uniform:LO,HI.
        #[arg(long, default_value = "kde")]
        density: DensitySpec,
        /// Skip the plug-in variance of doubly robust fits.
        #[arg(long)]
        no_variance: bool,
    },
    /// Cross-validation profile over a bandwidth grid.
    Bandwidth {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        covariates: Option<Vec<String>>,
        #[arg(long, value_enum, default_value = "g0")]
        target: TargetArg,
        #[arg(long, default_value = "dr", value_parser = parse_method)]
        method: EstimatorMethod,
        /// Candidate bandwidths; a log-spaced default grid when absent.
        #[arg(long, value_delimiter = ',')]
        h_grid: Option<Vec<f64>>,
        #[arg(long)]
        refine: bool,
        #[arg(long)]
        propensity_spec: Option<String>,
        #[arg(long)]
        outcome_spec: Option<String>,
    },
    /// Treatment effect g1 - g0 with pointwise confidence bounds.
    Effect {
        #[arg(long)]
        g0: PathBuf,
        #[arg(long)]
        g1: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Net-benefit maximising threshold between c0 and c1.
    #[command(group(ArgGroup::new("cost").required(true).args(["mc", "mc_table"])))]
    Threshold {
        #[arg(long)]
        g0: PathBuf,
        #[arg(long)]
        g1: PathBuf,
        /// Constant marginal cost of treatment.
        #[arg(long, conflicts_with = "mc_table", allow_negative_numbers = true)]
        mc: Option<f64>,
        /// Table with columns x, mc.
        #[arg(long)]
        mc_table: Option<PathBuf>,
        /// Dataset for the kernel density estimate of the running variable.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "kde")]
        density: DensitySpec,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
    },
    /// Monte Carlo comparison of the estimators.
    Bench {
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, value_enum, default_value = "table1")]
        cells: CellsArg,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fixed bandwidth for every cell instead of cross-validation.
        #[arg(long)]
        bandwidth: Option<f64>,
    },
}

fn parse_kernel(s: &str) -> Result<KernelSpec, String> {
    s.parse().map_err(|e: rdmc::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<EstimatorMethod, String> {
    s.parse().map_err(|e: rdmc::Error| e.to_string())
}

fn single_target(t: TargetArg) -> Result<TargetOutcome, UsageError> {
    match t {
        TargetArg::G0 => Ok(TargetOutcome::Y0),
        TargetArg::G1 => Ok(TargetOutcome::Y1),
        TargetArg::Both => Err(UsageError::Invalid("this command takes a single target".into())),
    }
}

fn feature_choice(s: Option<String>) -> Result<FeatureChoice, UsageError> {
    match s {
        None => Ok(FeatureChoice::Full),
        Some(s) => {
            s.parse::<rdmc::nuisance::FeatureSpec>()
                .map_err(|e| UsageError::Invalid(format!("invalid feature spec `{s}`: {e}")))?;
            Ok(FeatureChoice::Custom(s))
        }
    }
}

fn positive(name: &str, v: Option<f64>) -> Result<(), UsageError> {
    match v {
        Some(h) if !(h > 0.0 && h.is_finite()) => {
            Err(UsageError::Invalid(format!("--{name} must be positive, got {h}")))
        }
        _ => Ok(()),
    }
}

fn sim_config(
    config: Option<PathBuf>,
    n: Option<usize>,
    x_dist: Option<XDistArg>,
    t: Thresholds,
) -> Result<SimConfig, UsageError> {
    let mut cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| UsageError::Invalid(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| UsageError::Invalid(format!("invalid configuration {}: {e}", path.display())))?
        }
        None => SimConfig::default(),
    };
    if let Some(n) = n {
        cfg.n = n;
    }
    if let Some(d) = x_dist {
        cfg.x_dist = match d {
            XDistArg::Normal => XDistribution::Normal,
            XDistArg::Lognormal => XDistribution::LogNormal,
        };
    }
    cfg.c0 = t.c0;
    cfg.c1 = t.c1;
    cfg.validate().map_err(|e| UsageError::Invalid(e.to_string()))?;
    Ok(cfg)
}

/// Parses `argv` (including the program name) into a validated manifest.
pub fn parse_invocation<I, T>(argv: I) -> Result<RunManifest, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            UsageError::Display(e.to_string())
        }
        _ => UsageError::Invalid(e.to_string()),
    })?;
    let thresholds = Thresholds::new(cli.c0, cli.c1).map_err(|e| UsageError::Invalid(e.to_string()))?;
    if cli.grid < 2 {
        return Err(UsageError::Invalid("--grid needs at least 2 points".into()));
    }
    let output = cli
        .out
        .ok_or_else(|| UsageError::Invalid("the --out <path> argument is required".into()))?;

    let command = match cli.command {
        Command::Simulate { n, x_dist, config } => CommandSpec::Simulate {
            config: sim_config(config, n, x_dist, thresholds)?,
        },
        Command::Fit {
            data,
            covariates,
            target,
            method,
            bandwidth,
            refine,
            propensity_spec,
            outcome_spec,
            density,
            no_variance,
        } => {
            positive("bandwidth", bandwidth)?;
            let targets = match target {
                TargetArg::Both => TargetOutcome::BOTH.to_vec(),
                t => vec![single_target(t)?],
            };
            CommandSpec::Fit {
                data,
                covariates,
                targets,
                method,
                bandwidth: match bandwidth {
                    Some(h) => BandwidthChoice::Fixed { h },
                    None => BandwidthChoice::Lscv { refine },
                },
                propensity_spec: feature_choice(propensity_spec)?,
                outcome_spec: feature_choice(outcome_spec)?,
                density,
                variance: !no_variance && method.kind == rdmc::llr::MethodKind::Dr,
            }
        }
        Command::Bandwidth {
            data,
            covariates,
            target,
            method,
            h_grid,
            refine,
            propensity_spec,
            outcome_spec,
        } => {
            if let Some(g) = &h_grid {
                for &h in g {
                    positive("h-grid", Some(h))?;
                }
            }
            CommandSpec::Bandwidth {
                data,
                covariates,
                target: single_target(target)?,
                method,
                h_grid,
                refine,
                propensity_spec: feature_choice(propensity_spec)?,
                outcome_spec: feature_choice(outcome_spec)?,
            }
        }
        Command::Effect { g0, g1, level } => {
            if !(level > 0.0 && level < 1.0) {
                return Err(UsageError::Invalid(format!("--level must lie in (0, 1), got {level}")));
            }
            CommandSpec::Effect { g0, g1, level }
        }
        Command::Threshold {
            g0,
            g1,
            mc,
            mc_table,
            data,
            density,
            resolution,
        } => {
            if density == DensitySpec::Kde && data.is_none() {
                return Err(UsageError::Invalid(
                    "--density kde needs --data; pass --data or an analytic --density".into(),
                ));
            }
            if resolution < 2 {
                return Err(UsageError::Invalid("--resolution needs at least 2 points".into()));
            }
            let cost = match (mc, mc_table) {
                (Some(value), None) => CostSource::Constant { value },
                (None, Some(path)) => CostSource::Table { path },
                _ => unreachable!("clap enforces exactly one cost source"),
            };
            CommandSpec::Threshold {
                g0,
                g1,
                cost,
                density,
                data,
                resolution,
            }
        }
        Command::Bench {
            reps,
            cells,
            n,
            config,
            bandwidth,
        } => {
            if reps == 0 {
                return Err(UsageError::Invalid("--reps must be at least 1".into()));
            }
            positive("bandwidth", bandwidth)?;
            CommandSpec::Bench {
                config: sim_config(config, n, None, thresholds)?,
                replications: reps,
                cells: match cells {
                    CellsArg::Table1 => CellSet::Table1,
                    CellsArg::Table2 => CellSet::Table2,
                    CellsArg::All => CellSet::All,
                },
                bandwidth,
            }
        }
    };

    Ok(RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command,
        kernel: cli.kernel,
        grid_points: cli.grid,
        thresholds,
        seed: cli.seed,
        output,
        interpretation: Interpretation::default(),
    })
}
