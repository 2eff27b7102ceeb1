use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rdmc::data::{TargetOutcome, Thresholds};
use rdmc::inference::{AnalyticDensity, Density, KernelDensity};
use rdmc::kernels::KernelSpec;
use rdmc::llr::EstimatorMethod;
use rdmc::nuisance::FeatureSpec;
use rdmc::simulation::{BenchCell, SimConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything needed to reproduce one invocation, with defaults resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: CommandSpec,
    pub kernel: KernelSpec,
    pub grid_points: usize,
    pub thresholds: Thresholds,
    pub seed: u64,
    pub output: PathBuf,
    pub interpretation: Interpretation,
}

impl RunManifest {
    pub fn name(&self) -> &'static str {
        match self.command {
            CommandSpec::Simulate { .. } => "simulate",
            CommandSpec::Fit { .. } => "fit",
            CommandSpec::Bandwidth { .. } => "bandwidth",
            CommandSpec::Effect { .. } => "effect",
            CommandSpec::Threshold { .. } => "threshold",
            CommandSpec::Bench { .. } => "bench",
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn inputs(&self) -> Vec<&Path> {
        match &self.command {
            CommandSpec::Simulate { .. } | CommandSpec::Bench { .. } => vec![],
            CommandSpec::Fit { data, .. } | CommandSpec::Bandwidth { data, .. } => vec![data],
            CommandSpec::Effect { g0, g1, .. } => vec![g0, g1],
            CommandSpec::Threshold {
                g0, g1, data, cost, ..
            } => {
                let mut v: Vec<&Path> = vec![g0, g1];
                v.extend(data.as_deref());
                if let CostSource::Table { path } = cost {
                    v.push(path);
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum CommandSpec {
    Simulate {
        config: SimConfig,
    },
    Fit {
        data: PathBuf,
        covariates: Option<Vec<String>>,
        targets: Vec<TargetOutcome>,
        method: EstimatorMethod,
        bandwidth: BandwidthChoice,
        propensity_spec: FeatureChoice,
        outcome_spec: FeatureChoice,
        density: DensitySpec,
        variance: bool,
    },
    Bandwidth {
        data: PathBuf,
        covariates: Option<Vec<String>>,
        target: TargetOutcome,
        method: EstimatorMethod,
        h_grid: Option<Vec<f64>>,
        refine: bool,
        propensity_spec: FeatureChoice,
        outcome_spec: FeatureChoice,
    },
    Effect {
        g0: PathBuf,
        g1: PathBuf,
        level: f64,
    },
    Threshold {
        g0: PathBuf,
        g1: PathBuf,
        cost: CostSource,
        density: DensitySpec,
        data: Option<PathBuf>,
        resolution: usize,
    },
    Bench {
        config: SimConfig,
        replications: usize,
        cells: CellSet,
        bandwidth: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandwidthChoice {
    Fixed { h: f64 },
    Lscv { refine: bool },
}

/// A nuisance feature set, or the full default for the dataset's covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureChoice {
    Full,
    Custom(String),
}

impl FeatureChoice {
    pub fn resolve(&self, full: FeatureSpec) -> rdmc::Result<FeatureSpec> {
        match self {
            FeatureChoice::Full => Ok(full),
            FeatureChoice::Custom(s) => s.parse(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSource {
    Constant { value: f64 },
    Table { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellSet {
    Table1,
    Table2,
    All,
}

impl CellSet {
    pub fn cells(self) -> Vec<BenchCell> {
        match self {
            CellSet::Table1 => BenchCell::table1(),
            CellSet::Table2 => BenchCell::table2(),
            CellSet::All => BenchCell::all(),
        }
    }
}

/// Density of the running variable used for variances and the threshold objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DensitySpec {
    /// Gaussian kernel density estimate over all units.
    Kde,
    Analytic(AnalyticDensity),
}

impl DensitySpec {
    pub fn build(&self, xs: Option<&[f64]>) -> rdmc::Result<Box<dyn Density>> {
        match self {
            DensitySpec::Analytic(d) => Ok(Box::new(*d)),
            DensitySpec::Kde => {
                let xs = xs.ok_or_else(|| {
                    rdmc::Error::Configuration("a kernel density estimate needs a dataset".into())
                })?;
                let kde: KernelDensity = rdmc::inference::kde_fit(xs)?;
                Ok(Box::new(kde))
            }
        }
    }
}

impl FromStr for DensitySpec {
    type Err = String;

    /// `kde`, `normal:MEAN,SD`, `lognormal:MU,SIGMA` or `uniform:LO,HI`.
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "kde" {
            return Ok(DensitySpec::Kde);
        }
        let (kind, params) = s
            .split_once(':')
            .ok_or_else(|| format!("unknown density `{s}`"))?;
        let v: Vec<f64> = params
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number `{p}`")))
            .collect::<Result<_, _>>()?;
        let [a, b] = v[..] else {
            return Err(format!("`{kind}` takes two parameters"));
        };
        let d = match kind {
            "normal" if b > 0.0 => AnalyticDensity::Normal { mean: a, sd: b },
            "lognormal" if b > 0.0 => AnalyticDensity::LogNormal { mu: a, sigma: b },
            "uniform" if a < b => AnalyticDensity::Uniform { lo: a, hi: b },
            "normal" | "lognormal" | "uniform" => return Err(format!("invalid parameters for `{kind}`")),
            _ => return Err(format!("unknown density `{kind}`")),
        };
        Ok(DensitySpec::Analytic(d))
    }
}

impl fmt::Display for DensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensitySpec::Kde => write!(f, "kde"),
            DensitySpec::Analytic(AnalyticDensity::Normal { mean, sd }) => write!(f, "normal:{mean},{sd}"),
            DensitySpec::Analytic(AnalyticDensity::LogNormal { mu, sigma }) => write!(f, "lognormal:{mu},{sigma}"),
            DensitySpec::Analytic(AnalyticDensity::Uniform { lo, hi }) => write!(f, "uniform:{lo},{hi}"),
        }
    }
}

/// Readings of points the method leaves open. Recorded so outputs can be
/// traced to the choices that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    pub working_variance: String,
    pub lscv_range: String,
    pub lscv_nuisance: String,
    pub mise: String,
    pub threshold_objective: String,
    pub propensity_floor: f64,
    pub variance_sample_size: String,
}

impl Default for Interpretation {
    fn default() -> Self {
        Self {
            working_variance: "constant".into(),
            lscv_range: "held-out units observing the target inside its estimation range (g0: x < c1, g1: x > c0) for both sum and normalizer".into(),
            lscv_nuisance: "fitted once on all units and held fixed across folds".into(),
            mise: "squared error weighted by the running-variable density".into(),
            threshold_objective: "integral of g0 f below c plus integral of (g1 - mc) f above c".into(),
            propensity_floor: rdmc::nuisance::PROPENSITY_CLIP,
            variance_sample_size: "all units; density over all units".into(),
        }
    }
}
