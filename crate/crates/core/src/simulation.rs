//! Monte Carlo design with two covariates correlated with the running
//! variable, a logit model for group membership and quadratic potential
//! outcomes.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{select_bandwidth, BandwidthSearch};
use crate::data::{Dataset, Thresholds, TargetOutcome, UnitRecord};
use crate::error::{Error, Result};
use crate::inference::{AnalyticDensity, Density};
use crate::kernels::KernelSpec;
use crate::llr::{estimate_curve, linspace, Curve, EstimatorMethod, MethodKind, Nuisance, DEFAULT_GRID_POINTS};
use crate::nuisance::{fit_outcome, fit_propensity, FeatureSpec, OutcomeFit, PropensityFit, Term};

/// Largest share of absent curve values that [`integrated_squared_error`] fills in.
pub const MAX_ABSENT_SHARE: f64 = 0.2;
/// Share of failed replications above which a benchmark cell is degraded.
pub const MAX_FAILED_SHARE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XDistribution {
    #[default]
    Normal,
    /// Log-normal with mean `mu_x` and standard deviation `sigma_x`.
    LogNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub mu_x: f64,
    pub sigma_x: f64,
    pub eta0: [f64; 2],
    pub eta1: [f64; 2],
    pub sigma_xi: f64,
    /// Logit coefficients on `(1, x, w1, w2)`.
    pub gamma: [f64; 4],
    /// Outcome coefficients on `(1, x, x², w1, w2)`.
    pub beta0: [f64; 5],
    pub beta1: [f64; 5],
    pub sigma_eps: f64,
    pub c0: f64,
    pub c1: f64,
    #[serde(default)]
    pub x_dist: XDistribution,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            mu_x: 4.0,
            sigma_x: 1.7,
            eta0: [-1.5, 2.4],
            eta1: [0.6, 0.4],
            sigma_xi: 2.0,
            gamma: [0.8, 0.5, 2.0, -0.8],
            beta0: [0.0, 16.0, -1.0, 42.0, 36.0],
            beta1: [80.0, -2.0, 2.0, 40.0, 48.0],
            sigma_eps: 10.0,
            c0: 2.0,
            c1: 6.0,
            x_dist: XDistribution::Normal,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        Thresholds::new(self.c0, self.c1)?;
        for (name, s) in [
            ("sigma_x", self.sigma_x),
            ("sigma_xi", self.sigma_xi),
            ("sigma_eps", self.sigma_eps),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Configuration(format!("{name} must be positive, got {s}")));
            }
        }
        if self.x_dist == XDistribution::LogNormal && !(self.mu_x > 0.0) {
            return Err(Error::Configuration("log-normal running variable needs mu_x > 0".into()));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            c0: self.c0,
            c1: self.c1,
        }
    }

    pub fn beta(&self, target: TargetOutcome) -> &[f64; 5] {
        match target {
            TargetOutcome::Y0 => &self.beta0,
            TargetOutcome::Y1 => &self.beta1,
        }
    }

    /// Density of the running variable.
    pub fn x_density(&self) -> AnalyticDensity {
        match self.x_dist {
            XDistribution::Normal => AnalyticDensity::Normal {
                mean: self.mu_x,
                sd: self.sigma_x,
            },
            XDistribution::LogNormal => {
                let (mu, sigma) = self.lognormal_params();
                AnalyticDensity::LogNormal { mu, sigma }
            }
        }
    }

    fn lognormal_params(&self) -> (f64, f64) {
        let s2 = (1.0 + (self.sigma_x / self.mu_x).powi(2)).ln();
        (self.mu_x.ln() - 0.5 * s2, s2.sqrt())
    }

    /// True `Pr(D = 1 | x, w)`.
    pub fn propensity(&self, x: f64, w: &[f64]) -> f64 {
        let g = &self.gamma;
        let eta = g[0] + g[1] * x + g[2] * w[0] + g[3] * w[1];
        1.0 / (1.0 + (-eta).exp())
    }

    /// `E(Y_j | x, w)`.
    pub fn outcome_mean(&self, target: TargetOutcome, x: f64, w: &[f64]) -> f64 {
        let b = self.beta(target);
        b[0] + b[1] * x + b[2] * x * x + b[3] * w[0] + b[4] * w[1]
    }
}

/// Draws one dataset. The same `(config, seed)` always gives the same data.
pub fn generate(config: &SimConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let xi = Normal::new(0.0, config.sigma_xi).expect("validated");
    let eps = Normal::new(0.0, config.sigma_eps).expect("validated");
    let normal_x = Normal::new(config.mu_x, config.sigma_x).expect("validated");
    let lognormal_x = {
        let (mu, sigma) = if config.x_dist == XDistribution::LogNormal {
            config.lognormal_params()
        } else {
            (0.0, 1.0)
        };
        LogNormal::new(mu, sigma).expect("validated")
    };
    let t = config.thresholds();
    let units = (0..config.n)
        .map(|_| {
            let x = match config.x_dist {
                XDistribution::Normal => normal_x.sample(&mut rng),
                XDistribution::LogNormal => lognormal_x.sample(&mut rng),
            };
            let w = vec![
                config.eta0[0] + config.eta1[0] * x + xi.sample(&mut rng),
                config.eta0[1] + config.eta1[1] * x + xi.sample(&mut rng),
            ];
            let d = rng.random_bool(config.propensity(x, &w));
            let y0 = config.outcome_mean(TargetOutcome::Y0, x, &w) + eps.sample(&mut rng);
            let y1 = config.outcome_mean(TargetOutcome::Y1, x, &w) + eps.sample(&mut rng);
            let z = t.assign(d, x);
            UnitRecord::derived(x, w, d, if z { y1 } else { y0 }, &t)
        })
        .collect();
    Dataset::new(units, t, vec!["w1".into(), "w2".into()])
}

/// `g_j(x) = E_{W|X}[E(Y_j | X, W)]`, a quadratic in `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueCurve {
    /// Coefficients on `(1, x, x²)`.
    pub coefficients: [f64; 3],
}

impl TrueCurve {
    pub fn at(&self, x: f64) -> f64 {
        let [a, b, c] = self.coefficients;
        a + b * x + c * x * x
    }
}

/// Substitutes `E(W | X = x) = eta0 + eta1 x` into the outcome mean.
pub fn true_curve(config: &SimConfig, target: TargetOutcome) -> TrueCurve {
    let b = config.beta(target);
    let (e0, e1) = (config.eta0, config.eta1);
    TrueCurve {
        coefficients: [
            b[0] + b[3] * e0[0] + b[4] * e0[1],
            b[1] + b[3] * e1[0] + b[4] * e1[1],
            b[2],
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IseResult {
    pub ise: f64,
    /// Grid values inside `[lo, hi]` that were absent and filled in.
    pub interpolated: usize,
}

/// `∫_lo^hi (ĝ - g)² f dx` by the trapezoid rule on the curve grid. Absent
/// values are linearly interpolated from the nearest present neighbours.
pub fn integrated_squared_error(
    curve: &Curve,
    truth: impl Fn(f64) -> f64,
    density: &dyn Density,
    lo: f64,
    hi: f64,
) -> Result<IseResult> {
    let grid = &curve.grid;
    if !(lo < hi) || grid.is_empty() || grid[0] > lo || grid[grid.len() - 1] < hi {
        return Err(Error::Alignment(format!(
            "curve grid does not cover [{lo}, {hi}]"
        )));
    }
    let first = grid.partition_point(|&x| x <= lo) - 1;
    let last = grid.partition_point(|&x| x < hi);
    let idx: Vec<usize> = (first..=last).collect();
    let absent = idx.iter().filter(|&&k| curve.values[k].is_none()).count();
    if absent as f64 > MAX_ABSENT_SHARE * idx.len() as f64 {
        return Err(Error::UnreliableIse {
            absent,
            total: idx.len(),
        });
    }
    let filled = fill_absent(grid, &curve.values)?;
    let xs: Vec<f64> = idx.iter().map(|&k| grid[k]).collect();
    let ys: Vec<f64> = idx
        .iter()
        .map(|&k| (filled[k] - truth(grid[k])).powi(2) * density.pdf(grid[k]))
        .collect();
    Ok(IseResult {
        ise: trapezoid_between(&xs, &ys, lo, hi),
        interpolated: absent,
    })
}

fn fill_absent(grid: &[f64], values: &[Option<f64>]) -> Result<Vec<f64>> {
    let present: Vec<usize> = (0..values.len()).filter(|&k| values[k].is_some()).collect();
    if present.is_empty() {
        return Err(Error::UnreliableIse {
            absent: values.len(),
            total: values.len(),
        });
    }
    Ok((0..values.len())
        .map(|k| {
            if let Some(v) = values[k] {
                return v;
            }
            let after = present.partition_point(|&p| p < k);
            match (after.checked_sub(1).map(|i| present[i]), present.get(after)) {
                (Some(a), Some(&b)) => {
                    let (va, vb) = (values[a].unwrap(), values[b].unwrap());
                    va + (grid[k] - grid[a]) / (grid[b] - grid[a]) * (vb - va)
                }
                (Some(a), None) => values[a].unwrap(),
                (None, Some(&b)) => values[b].unwrap(),
                (None, None) => unreachable!(),
            }
        })
        .collect())
}

/// Trapezoid integral over `[lo, hi]`, where `xs` brackets the interval and
/// the integrand is linear between nodes.
fn trapezoid_between(xs: &[f64], ys: &[f64], lo: f64, hi: f64) -> f64 {
    let lerp = |k: usize, x: f64| {
        ys[k] + (x - xs[k]) / (xs[k + 1] - xs[k]) * (ys[k + 1] - ys[k])
    };
    if xs.len() == 1 {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0..xs.len() - 1 {
        let a = xs[k].max(lo);
        let b = xs[k + 1].min(hi);
        if b > a {
            total += 0.5 * (b - a) * (lerp(k, a) + lerp(k, b));
        }
    }
    total
}

/// One estimator/nuisance combination of the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub label: String,
    pub target: TargetOutcome,
    pub method: EstimatorMethod,
    /// Fit the propensity model without `w1`.
    pub propensity_wrong: bool,
    /// Fit the outcome model without `x²`.
    pub outcome_wrong: bool,
}

impl BenchCell {
    pub fn new(label: &str, target: TargetOutcome, method: EstimatorMethod) -> Self {
        Self {
            label: label.into(),
            target,
            method,
            propensity_wrong: false,
            outcome_wrong: false,
        }
    }

    fn wrong(mut self, propensity: bool, outcome: bool) -> Self {
        self.propensity_wrong = propensity;
        self.outcome_wrong = outcome;
        self
    }

    /// Naive, IPW and DR for both targets with correct nuisance models.
    pub fn table1() -> Vec<Self> {
        TargetOutcome::BOTH
            .into_iter()
            .flat_map(|t| {
                [
                    Self::new("naive", t, EstimatorMethod::naive()),
                    Self::new("ipw", t, EstimatorMethod::ipw_default(t)),
                    Self::new("dr", t, EstimatorMethod::dr()),
                ]
            })
            .collect()
    }

    /// Misspecified nuisance models for `g0`.
    pub fn table2() -> Vec<Self> {
        let t = TargetOutcome::Y0;
        vec![
            Self::new("ipw(pi wrong)", t, EstimatorMethod::ipw_default(t)).wrong(true, false),
            Self::new("dr(pi wrong)", t, EstimatorMethod::dr()).wrong(true, false),
            Self::new("dr(delta wrong)", t, EstimatorMethod::dr()).wrong(false, true),
            Self::new("dr(both wrong)", t, EstimatorMethod::dr()).wrong(true, true),
        ]
    }

    pub fn all() -> Vec<Self> {
        let mut v = Self::table1();
        v.extend(Self::table2());
        v
    }

    pub fn nuisance_label(&self) -> String {
        let uses_pi = self.method.kind != MethodKind::Naive;
        let uses_delta = self.method.kind == MethodKind::Dr;
        let tag = |used: bool, wrong: bool| match (used, wrong) {
            (false, _) => "none",
            (true, false) => "correct",
            (true, true) => "wrong",
        };
        format!(
            "pi={};delta={}",
            tag(uses_pi, self.propensity_wrong),
            tag(uses_delta, self.outcome_wrong)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub kernel: KernelSpec,
    pub grid_points: usize,
    /// Skips cross-validation and uses this bandwidth everywhere.
    pub fixed_bandwidth: Option<f64>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::Epanechnikov,
            grid_points: DEFAULT_GRID_POINTS,
            fixed_bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub label: String,
    pub nuisance: String,
    pub target: TargetOutcome,
    pub method: String,
    pub mise: f64,
    /// Standard deviation of the per-replication ISE.
    pub ise_sd: Option<f64>,
    pub mean_bandwidth: f64,
    pub replications: usize,
    pub failed: usize,
    pub base_seed: u64,
    pub degraded: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: SimConfig,
    pub options: BenchOptions,
    pub records: Vec<CellRecord>,
    pub replications: usize,
    pub base_seed: u64,
    pub degraded: bool,
    pub elapsed_secs: f64,
}

impl BenchmarkReport {
    pub fn record(&self, label: &str, target: TargetOutcome) -> Option<&CellRecord> {
        self.records
            .iter()
            .find(|r| r.label == label && r.target == target)
    }
}

/// Nuisance fits for one replication, fitted once and shared across cells.
struct ReplicationFits {
    propensity: [Option<PropensityFit>; 2],
    outcome: [[Option<OutcomeFit>; 2]; 2],
}

impl ReplicationFits {
    fn new(ds: &Dataset, cells: &[BenchCell]) -> Result<Self> {
        let m = ds.dim();
        let mut fits = Self {
            propensity: [None, None],
            outcome: [[None, None], [None, None]],
        };
        for c in cells {
            if c.method.kind == MethodKind::Naive {
                continue;
            }
            let p = &mut fits.propensity[c.propensity_wrong as usize];
            if p.is_none() {
                let mut spec = FeatureSpec::full_propensity(m);
                if c.propensity_wrong {
                    spec = spec.without(Term::W(0));
                }
                *p = Some(fit_propensity(ds, &spec)?);
            }
            if c.method.kind == MethodKind::Dr {
                let o = &mut fits.outcome[c.target.index() as usize][c.outcome_wrong as usize];
                if o.is_none() {
                    let mut spec = FeatureSpec::full_outcome(m);
                    if c.outcome_wrong {
                        spec = spec.without(Term::XSquared);
                    }
                    *o = Some(fit_outcome(ds, c.target, &spec)?);
                }
            }
        }
        Ok(fits)
    }

    fn nuisance(&self, c: &BenchCell) -> Nuisance<'_> {
        Nuisance::new(
            self.propensity[c.propensity_wrong as usize].as_ref(),
            self.outcome[c.target.index() as usize][c.outcome_wrong as usize].as_ref(),
        )
    }
}

/// Estimates one cell on one dataset; returns (curve, bandwidth).
pub fn estimate_cell(
    ds: &Dataset,
    cell: &BenchCell,
    nuisance: Nuisance<'_>,
    options: &BenchOptions,
) -> Result<(Curve, f64)> {
    let h = match options.fixed_bandwidth {
        Some(h) => h,
        None => {
            let search = BandwidthSearch::default_for(ds, cell.target)?;
            select_bandwidth(ds, cell.target, cell.method, &search, nuisance, options.kernel)?.h
        }
    };
    let t = ds.thresholds();
    let grid = linspace(t.c0, t.c1, options.grid_points);
    let curve = estimate_curve(ds, cell.target, cell.method, h, nuisance, &grid, options.kernel)?;
    Ok((curve, h))
}

/// Runs `replications` datasets with seeds `base_seed + r` through every
/// cell and averages the integrated squared errors into MISEs.
pub fn run_benchmark(
    config: &SimConfig,
    replications: usize,
    base_seed: u64,
    cells: &[BenchCell],
    options: &BenchOptions,
) -> Result<BenchmarkReport> {
    config.validate()?;
    if replications == 0 {
        return Err(Error::Configuration("at least one replication is required".into()));
    }
    if cells.is_empty() {
        return Err(Error::Configuration("no benchmark cells selected".into()));
    }
    let start = Instant::now();
    let density = config.x_density();
    let t = config.thresholds();
    let truths = [
        true_curve(config, TargetOutcome::Y0),
        true_curve(config, TargetOutcome::Y1),
    ];

    // rows: replication, columns: cell; merged by index below
    let results: Vec<Vec<std::result::Result<(f64, f64), String>>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let seed = base_seed.wrapping_add(r as u64);
            let prepared = generate(config, seed).and_then(|ds| {
                let fits = ReplicationFits::new(&ds, cells)?;
                Ok((ds, fits))
            });
            let (ds, fits) = match prepared {
                Ok(v) => v,
                Err(e) => return vec![Err(format!("seed {seed}: {e}")); cells.len()],
            };
            cells
                .par_iter()
                .map(|c| {
                    let truth = truths[c.target.index() as usize];
                    estimate_cell(&ds, c, fits.nuisance(c), options)
                        .and_then(|(curve, h)| {
                            integrated_squared_error(&curve, |x| truth.at(x), &density, t.c0, t.c1)
                                .map(|ise| (ise.ise, h))
                        })
                        .map_err(|e| format!("seed {seed}: {e}"))
                })
                .collect()
        })
        .collect();

    let records: Vec<CellRecord> = cells
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let mut ises = Vec::new();
            let mut hs = 0.0;
            let mut failures = Vec::new();
            for row in &results {
                match &row[j] {
                    Ok((ise, h)) => {
                        ises.push(*ise);
                        hs += h;
                    }
                    Err(e) => failures.push(e.clone()),
                }
            }
            let k = ises.len() as f64;
            let mise = if ises.is_empty() { f64::NAN } else { ises.iter().sum::<f64>() / k };
            let ise_sd = (ises.len() > 1).then(|| {
                (ises.iter().map(|v| (v - mise).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            });
            CellRecord {
                label: c.label.clone(),
                nuisance: c.nuisance_label(),
                target: c.target,
                method: c.method.label(),
                mise,
                ise_sd,
                mean_bandwidth: if ises.is_empty() { f64::NAN } else { hs / k },
                replications,
                failed: failures.len(),
                base_seed,
                degraded: failures.len() as f64 > MAX_FAILED_SHARE * replications as f64,
                failures,
            }
        })
        .collect();
    Ok(BenchmarkReport {
        config: config.clone(),
        options: *options,
        degraded: records.iter().any(|r| r.degraded),
        records,
        replications,
        base_seed,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate;
    use approx::assert_relative_eq;

    #[test]
    fn default_true_curves() {
        let c = SimConfig::default();
        let g0 = true_curve(&c, TargetOutcome::Y0);
        let g1 = true_curve(&c, TargetOutcome::Y1);
        assert_relative_eq!(g0.coefficients[0], 23.4, epsilon = 1e-12);
        assert_relative_eq!(g0.coefficients[1], 55.6, epsilon = 1e-12);
        assert_eq!(g0.coefficients[2], -1.0);
        assert_relative_eq!(g1.coefficients[0], 135.2, epsilon = 1e-12);
        assert_relative_eq!(g1.coefficients[1], 41.2, epsilon = 1e-12);
        assert_relative_eq!(g0.at(4.0), 229.8, epsilon = 1e-10);
        assert_relative_eq!(g1.at(4.0), 332.0, epsilon = 1e-10);
        assert_relative_eq!(g0.at(0.0), 23.4, epsilon = 1e-12);

        let zero = SimConfig {
            beta0: [0.0; 5],
            ..SimConfig::default()
        };
        assert_eq!(true_curve(&zero, TargetOutcome::Y0).at(3.3), 0.0);
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let c = SimConfig {
            n: 500,
            ..SimConfig::default()
        };
        let a = generate(&c, 7).unwrap();
        let b = generate(&c, 7).unwrap();
        assert_eq!(a.units(), b.units());
        assert!(validate(&a).is_empty());
        let other = generate(&c, 8).unwrap();
        let xs: std::collections::HashSet<u64> = a.units().iter().map(|u| u.x.to_bits()).collect();
        assert!(other.units().iter().all(|u| !xs.contains(&u.x.to_bits())));
    }

    #[test]
    fn running_variable_moments() {
        let c = SimConfig {
            n: 100_000,
            ..SimConfig::default()
        };
        let ds = generate(&c, 1).unwrap();
        let n = ds.len() as f64;
        let mean = ds.units().iter().map(|u| u.x).sum::<f64>() / n;
        let sd = (ds.units().iter().map(|u| (u.x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 4.0).abs() < 0.02, "{mean}");
        assert!((sd - 1.7).abs() < 0.02, "{sd}");
    }

    #[test]
    fn lognormal_moments() {
        let c = SimConfig {
            n: 100_000,
            x_dist: XDistribution::LogNormal,
            ..SimConfig::default()
        };
        let ds = generate(&c, 3).unwrap();
        let n = ds.len() as f64;
        let mean = ds.units().iter().map(|u| u.x).sum::<f64>() / n;
        assert!((mean - 4.0).abs() < 0.03, "{mean}");
        assert!(ds.units().iter().all(|u| u.x > 0.0));
    }

    #[test]
    fn propensity_calibration() {
        let c = SimConfig {
            n: 100_000,
            ..SimConfig::default()
        };
        let ds = generate(&c, 2).unwrap();
        let mut bins = [(0.0, 0.0, 0usize); 10];
        for u in ds.units() {
            let p = c.propensity(u.x, &u.w);
            let b = ((p * 10.0) as usize).min(9);
            bins[b].0 += p;
            bins[b].1 += u.d as u8 as f64;
            bins[b].2 += 1;
        }
        for (sp, sd, k) in bins {
            if k >= 2000 {
                let k = k as f64;
                assert!((sp / k - sd / k).abs() < 0.02, "{} vs {}", sp / k, sd / k);
            }
        }
    }

    #[test]
    fn ise_oracles() {
        let c = SimConfig::default();
        let t = c.thresholds();
        let g0 = true_curve(&c, TargetOutcome::Y0);
        let grid = linspace(2.0, 6.0, 201);
        let d = c.x_density();
        let exact = Curve::from_fn(grid.clone(), |x| g0.at(x), TargetOutcome::Y0, t);
        assert_eq!(integrated_squared_error(&exact, |x| g0.at(x), &d, 2.0, 6.0).unwrap().ise, 0.0);
        let shifted = Curve::from_fn(grid.clone(), |x| g0.at(x) + 5.0, TargetOutcome::Y0, t);
        let ise = integrated_squared_error(&shifted, |x| g0.at(x), &d, 2.0, 6.0).unwrap().ise;
        assert_relative_eq!(ise, 25.0 * 0.760_593_121_2, max_relative = 1e-4);

        // a linear curve is recovered exactly by interpolation
        let line = Curve::from_fn(grid.clone(), |x| 3.0 * x, TargetOutcome::Y0, t);
        let full = integrated_squared_error(&line, |x| x * x, &d, 2.0, 6.0).unwrap().ise;
        let mut holes = line.clone();
        for k in (10..200).step_by(10) {
            holes.values[k] = None;
        }
        let r = integrated_squared_error(&holes, |x| x * x, &d, 2.0, 6.0).unwrap();
        assert_eq!(r.interpolated, 19);
        assert_relative_eq!(r.ise, full, max_relative = 1e-12);
        for k in 0..60 {
            holes.values[k] = None;
        }
        assert!(matches!(
            integrated_squared_error(&holes, |x| g0.at(x), &d, 2.0, 6.0),
            Err(Error::UnreliableIse { .. })
        ));
    }

    #[test]
    fn trapezoid_agrees_with_simpson() {
        let f = |x: f64| (x * 0.7).sin() * (-(x - 4.0).powi(2) / 4.0).exp();
        let xs = linspace(2.0, 6.0, 201);
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let trap = trapezoid_between(&xs, &ys, 2.0, 6.0);
        let h = 0.02;
        let simpson = (0..=200)
            .map(|k| {
                let w = if k == 0 || k == 200 { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                w * ys[k]
            })
            .sum::<f64>()
            * h
            / 3.0;
        assert!(((trap - simpson) / simpson).abs() < 1e-4);
        // partial cells
        let part = trapezoid_between(&xs, &ys, 2.01, 5.99);
        assert!((part - trap).abs() < 0.02 * f(2.0).abs().max(f(6.0).abs()) + 1e-3);
    }

    #[test]
    fn benchmark_is_reproducible() {
        let c = SimConfig {
            n: 400,
            ..SimConfig::default()
        };
        let opts = BenchOptions {
            fixed_bandwidth: Some(1.0),
            grid_points: 41,
            ..BenchOptions::default()
        };
        let cells = BenchCell::table1();
        let a = run_benchmark(&c, 1, 9, &cells, &opts).unwrap();
        let b = run_benchmark(&c, 1, 9, &cells, &opts).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), 6);
        assert!(a.records.iter().all(|r| r.mise >= 0.0));

        // a replication's result does not depend on the others
        let two = run_benchmark(&c, 2, 8, &cells, &opts).unwrap();
        let one = run_benchmark(&c, 1, 9, &cells, &opts).unwrap();
        let eight = run_benchmark(&c, 1, 8, &cells, &opts).unwrap();
        for j in 0..6 {
            let avg = 0.5 * (one.records[j].mise + eight.records[j].mise);
            assert_relative_eq!(two.records[j].mise, avg, max_relative = 1e-12);
        }
    }

    #[test]
    fn cell_labels() {
        let t2 = BenchCell::table2();
        assert_eq!(t2[0].nuisance_label(), "pi=wrong;delta=none");
        assert_eq!(t2[3].nuisance_label(), "pi=wrong;delta=wrong");
        assert_eq!(BenchCell::table1()[0].nuisance_label(), "pi=none;delta=none");
        assert_eq!(BenchCell::all().len(), 10);
    }
}
