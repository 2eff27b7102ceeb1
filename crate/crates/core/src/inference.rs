//! Treatment effect curves, density estimation, the plug-in asymptotic
//! variance of the doubly-robust estimator and pointwise confidence bands.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, LogNormal, Normal};

use crate::data::{Dataset, TargetOutcome};
use crate::error::{Error, Result};
use crate::kernels::{check_bandwidth, KernelSpec};
use crate::llr::{build_sample, Curve, EstimatorMethod, MethodKind, Nuisance, PointFailure};
use crate::nuisance::{OutcomeFit, PropensityFit};

/// Densities below this are treated as zero when dividing by `f_X`.
pub const DENSITY_FLOOR: f64 = 1e-8;

/// A probability density on the real line.
pub trait Density: Send + Sync {
    fn pdf(&self, x: f64) -> f64;
}

impl<D: Density + ?Sized> Density for &D {
    fn pdf(&self, x: f64) -> f64 {
        (**self).pdf(x)
    }
}

/// Densities known in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnalyticDensity {
    Normal { mean: f64, sd: f64 },
    /// `log X ~ Normal(mu, sigma²)`.
    LogNormal { mu: f64, sigma: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl AnalyticDensity {
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            AnalyticDensity::Normal { mean, sd } => normal(mean, sd).cdf(x),
            AnalyticDensity::LogNormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    lognormal(mu, sigma).cdf(x)
                }
            }
            AnalyticDensity::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }
}

fn normal(mean: f64, sd: f64) -> Normal {
    Normal::new(mean, sd).expect("normal parameters checked by the caller")
}

fn lognormal(mu: f64, sigma: f64) -> LogNormal {
    LogNormal::new(mu, sigma).expect("log-normal parameters checked by the caller")
}

impl Density for AnalyticDensity {
    fn pdf(&self, x: f64) -> f64 {
        match *self {
            AnalyticDensity::Normal { mean, sd } => normal(mean, sd).pdf(x),
            AnalyticDensity::LogNormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    lognormal(mu, sigma).pdf(x)
                }
            }
            AnalyticDensity::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDensity {
    /// Sorted sample.
    xs: Vec<f64>,
    bandwidth: f64,
}

impl KernelDensity {
    pub fn with_bandwidth(mut xs: Vec<f64>, bandwidth: f64) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        if xs.is_empty() || xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateSample(
                "density sample must be nonempty and finite".into(),
            ));
        }
        xs.sort_by(f64::total_cmp);
        Ok(Self { xs, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n(&self) -> usize {
        self.xs.len()
    }
}

impl Density for KernelDensity {
    fn pdf(&self, x: f64) -> f64 {
        let k = KernelSpec::Gaussian;
        let h = self.bandwidth;
        let reach = k.support_radius() * h;
        let lo = self.xs.partition_point(|&v| v < x - reach);
        let hi = self.xs.partition_point(|&v| v <= x + reach);
        let sum: f64 = self.xs[lo..hi].iter().map(|&v| k.value((x - v) / h)).sum();
        sum / (self.xs.len() as f64 * h)
    }
}

/// Sample quantile, linear interpolation between order statistics (type 7).
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Gaussian KDE with bandwidth `0.9 min(sd, IQR/1.34) n^(-1/5)`.
pub fn kde_fit(xs: &[f64]) -> Result<KernelDensity> {
    let mut sorted = xs.to_vec();
    if sorted.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateSample("non-finite value in density sample".into()));
    }
    sorted.sort_by(f64::total_cmp);
    if sorted.len() < 2 || sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateSample(
            "density estimation needs at least 2 distinct values".into(),
        ));
    }
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let bandwidth = 0.9 * spread * n.powf(-0.2);
    KernelDensity::with_bandwidth(sorted, bandwidth)
}

/// `τ(x) = g_1(x) - g_0(x)` between the thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCurve {
    pub grid: Vec<f64>,
    pub tau: Vec<Option<f64>>,
    pub variance: Option<Vec<Option<f64>>>,
    pub ci_lower: Option<Vec<Option<f64>>>,
    pub ci_upper: Option<Vec<Option<f64>>>,
    pub level: Option<f64>,
}

impl EffectCurve {
    /// Adds a pointwise normal-approximation band.
    pub fn with_band(mut self, level: f64) -> Result<Self> {
        let b = band(&self.tau, self.variance.as_deref(), level)?;
        self.ci_lower = Some(b.lower);
        self.ci_upper = Some(b.upper);
        self.level = Some(level);
        Ok(self)
    }

    /// Standard errors where the variance is present.
    pub fn standard_errors(&self) -> Option<Vec<Option<f64>>> {
        self.variance
            .as_ref()
            .map(|v| v.iter().map(|v| v.map(f64::sqrt)).collect())
    }
}

/// Differences two curves on a common grid strictly inside `(c0, c1)`. The
/// variance, when both curves carry one, is the sum of the two.
pub fn effect_curve(curve0: &Curve, curve1: &Curve) -> Result<EffectCurve> {
    if curve0.target != TargetOutcome::Y0 || curve1.target != TargetOutcome::Y1 {
        return Err(Error::Alignment("effect curve needs a g0 curve and a g1 curve".into()));
    }
    if curve0.thresholds != curve1.thresholds {
        return Err(Error::Alignment("curves were estimated with different thresholds".into()));
    }
    if curve0.grid.len() != curve1.grid.len()
        || curve0.grid.iter().zip(&curve1.grid).any(|(a, b)| a.to_bits() != b.to_bits())
    {
        return Err(Error::Alignment("curves are not on the same grid".into()));
    }
    let t = curve0.thresholds;
    if let Some(&x) = curve0.grid.iter().find(|&&x| !(x > t.c0 && x < t.c1)) {
        return Err(Error::Alignment(format!(
            "grid point {x} is not strictly between the thresholds ({}, {})",
            t.c0, t.c1
        )));
    }
    let tau = curve0
        .values
        .iter()
        .zip(&curve1.values)
        .map(|(a, b)| Some(b.as_ref()? - a.as_ref()?))
        .collect();
    let variance = match (&curve0.variance, &curve1.variance) {
        (Some(v0), Some(v1)) => Some(
            v0.iter()
                .zip(v1)
                .map(|(a, b)| Some(a.as_ref()? + b.as_ref()?))
                .collect(),
        ),
        _ => None,
    };
    Ok(EffectCurve {
        grid: curve0.grid.clone(),
        tau,
        variance,
        ci_lower: None,
        ci_upper: None,
        level: None,
    })
}

/// Pointwise variance of a doubly-robust curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseVariance {
    pub values: Vec<Option<f64>>,
    pub failures: Vec<PointFailure>,
}

/// Plug-in variance `Ŵ(x) / (n h)` with `Ŵ(x) = r_K m̂₂(x) / f̂(x)`, where
/// `m̂₂` is the Nadaraya–Watson average of the squared influence terms
/// `ψ_i = (r_i/p_i)(Y_i - ĝ(X_i)) - (r_i/p_i - 1)(δ̂(X_i, W_i) - ĝ(X_i))`.
/// `ĝ(X_i)` is the local line fitted at `x`, `n` counts all units and
/// `f̂` is the density of the running variable over all units.
#[allow(clippy::too_many_arguments)]
pub fn dr_variance(
    dataset: &Dataset,
    target: TargetOutcome,
    curve: &Curve,
    pfit: &PropensityFit,
    ofit: &OutcomeFit,
    kernel: KernelSpec,
    h: f64,
    density: &dyn Density,
) -> Result<PointwiseVariance> {
    check_bandwidth(h)?;
    if curve.method.kind != MethodKind::Dr || curve.target != target {
        return Err(Error::Configuration(
            "plug-in variance applies to a doubly-robust curve of the same target".into(),
        ));
    }
    if curve.bandwidth != h || curve.kernel != kernel {
        return Err(Error::Configuration(format!(
            "curve was estimated with h = {} ({}), variance requested with h = {h} ({kernel})",
            curve.bandwidth, curve.kernel
        )));
    }
    let sample = build_sample(dataset, target, EstimatorMethod::dr(), Nuisance::both(pfit, ofit))?;
    let n = dataset.len() as f64;
    let r_k = kernel.constants().r;
    let points: Vec<std::result::Result<Option<f64>, String>> = curve
        .grid
        .par_iter()
        .zip(curve.values.par_iter().zip(curve.slopes.par_iter()))
        .map(|(&x, (&a0, &a1))| {
            let (Some(a0), Some(a1)) = (a0, a1) else {
                return Ok(None);
            };
            let f = density.pdf(x);
            if !(f >= DENSITY_FLOOR) {
                return Err(Error::DensityFloor { x, density: f }.to_string());
            }
            let (lo, hi) = sample.window(x, kernel.support_radius() * h);
            let (mut sw, mut swp) = (0.0, 0.0);
            for i in lo..hi {
                let u = sample.xs[i] - x;
                let k = kernel.value(u / h);
                let psi = sample.ys[i] - a0 - a1 * u;
                sw += k;
                swp += k * psi * psi;
            }
            if !(sw > 0.0) {
                return Err(format!("no kernel mass for the variance at x = {x}"));
            }
            Ok(Some(r_k * (swp / sw) / f / (n * h)))
        })
        .collect();
    let mut values = Vec::with_capacity(points.len());
    let mut failures = Vec::new();
    for (&x, p) in curve.grid.iter().zip(points) {
        match p {
            Ok(v) => values.push(v),
            Err(message) => {
                values.push(None);
                failures.push(PointFailure { x, message });
            }
        }
    }
    Ok(PointwiseVariance { values, failures })
}

/// Pointwise confidence bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    pub level: f64,
}

/// `value ± z_{(1+level)/2} sqrt(variance)`.
pub fn confidence_band(curve: &Curve, level: f64) -> Result<Band> {
    band(&curve.values, curve.variance.as_deref(), level)
}

fn band(values: &[Option<f64>], variance: Option<&[Option<f64>]>, level: f64) -> Result<Band> {
    let variance =
        variance.ok_or_else(|| Error::Configuration("confidence band needs a variance".into()))?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let z = Normal::standard().inverse_cdf(0.5 * (1.0 + level));
    let (lower, upper) = values
        .iter()
        .zip(variance)
        .map(|(v, s2)| match (v, s2) {
            (Some(v), Some(s2)) => {
                let half = z * s2.max(0.0).sqrt();
                (Some(v - half), Some(v + half))
            }
            _ => (None, None),
        })
        .unzip();
    Ok(Band { lower, upper, level })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Thresholds, UnitRecord};
    use crate::llr::{estimate_curve, linspace};
    use crate::nuisance::{FeatureSpec, Link};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn th() -> Thresholds {
        Thresholds::new(2.0, 6.0).unwrap()
    }

    fn curve(target: TargetOutcome, grid: Vec<f64>, f: impl Fn(f64) -> f64) -> Curve {
        Curve::from_fn(grid, f, target, th())
    }

    #[test]
    fn identical_curves_give_zero_effect() {
        let grid = linspace(2.5, 5.5, 7);
        let e = effect_curve(
            &curve(TargetOutcome::Y0, grid.clone(), |x| x * x),
            &curve(TargetOutcome::Y1, grid, |x| x * x),
        )
        .unwrap();
        assert!(e.tau.iter().all(|t| *t == Some(0.0)));
        assert!(e.variance.is_none());
    }

    #[test]
    fn effect_grid_must_be_interior_and_shared() {
        let g = linspace(2.0, 6.0, 5);
        let r = effect_curve(
            &curve(TargetOutcome::Y0, g.clone(), |_| 0.0),
            &curve(TargetOutcome::Y1, g, |_| 0.0),
        );
        assert!(matches!(r, Err(Error::Alignment(_))));
        let r = effect_curve(
            &curve(TargetOutcome::Y0, linspace(3.0, 5.0, 5), |_| 0.0),
            &curve(TargetOutcome::Y1, linspace(3.0, 5.0, 6), |_| 0.0),
        );
        assert!(matches!(r, Err(Error::Alignment(_))));
    }

    #[test]
    fn effect_variance_is_sum() {
        let g = linspace(3.0, 5.0, 3);
        let mut a = curve(TargetOutcome::Y0, g.clone(), |_| 1.0);
        let mut b = curve(TargetOutcome::Y1, g, |_| 4.0);
        a.variance = Some(vec![Some(1.0), Some(2.0), None]);
        b.variance = Some(vec![Some(0.5), Some(0.5), Some(1.0)]);
        let e = effect_curve(&a, &b).unwrap().with_band(0.95).unwrap();
        assert_eq!(e.variance, Some(vec![Some(1.5), Some(2.5), None]));
        assert_eq!(e.tau, vec![Some(3.0); 3]);
        assert_eq!(e.ci_lower.as_ref().unwrap()[2], None);
    }

    #[test]
    fn band_arithmetic() {
        let mut c = curve(TargetOutcome::Y0, vec![1.0, 2.0], |_| 10.0);
        assert!(matches!(confidence_band(&c, 0.95), Err(Error::Configuration(_))));
        c.variance = Some(vec![Some(4.0), Some(0.0)]);
        let b = confidence_band(&c, 0.95).unwrap();
        assert_relative_eq!(b.lower[0].unwrap(), 6.08, epsilon = 1e-3);
        assert_relative_eq!(b.upper[0].unwrap(), 13.92, epsilon = 1e-3);
        assert_eq!((b.lower[1], b.upper[1]), (Some(10.0), Some(10.0)));
        assert!(confidence_band(&c, 1.0).is_err());
    }

    #[test]
    fn kde_standard_normal() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f = kde_fit(&xs).unwrap();
        assert!((f.pdf(0.0) - 0.398_942_280_4).abs() < 0.03);
        // trapezoid mass over a wide range
        let grid = linspace(-8.0, 8.0, 4001);
        let dx = grid[1] - grid[0];
        let mass: f64 = grid.windows(2).map(|w| 0.5 * (f.pdf(w[0]) + f.pdf(w[1])) * dx).sum();
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
        assert_eq!(f.n(), 10_000);
    }

    #[test]
    fn kde_degenerate() {
        assert!(matches!(kde_fit(&[3.0; 10]), Err(Error::DegenerateSample(_))));
        assert!(matches!(kde_fit(&[3.0]), Err(Error::DegenerateSample(_))));
        assert!(kde_fit(&[1.0, 2.0]).is_ok());
    }

    #[test]
    fn type7_quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 4.0);
        assert_eq!(quantile(&s, 0.5), 2.5);
        assert_eq!(quantile(&s, 0.25), 1.75);
    }

    #[test]
    fn analytic_densities() {
        let n = AnalyticDensity::Normal { mean: 4.0, sd: 1.7 };
        // erf(2 / (1.7 sqrt 2))
        assert_relative_eq!(n.cdf(6.0) - n.cdf(2.0), 0.760_593_121, epsilon = 1e-8);
        let u = AnalyticDensity::Uniform { lo: 2.0, hi: 6.0 };
        assert_eq!(u.pdf(3.0), 0.25);
        assert_eq!(u.pdf(7.0), 0.0);
        let l = AnalyticDensity::LogNormal { mu: 0.0, sigma: 1.0 };
        assert_eq!(l.pdf(-1.0), 0.0);
        assert_relative_eq!(l.cdf(1.0), 0.5, epsilon = 1e-12);
    }

    struct Scaled<D>(D, f64);
    impl<D: Density> Density for Scaled<D> {
        fn pdf(&self, x: f64) -> f64 {
            self.1 * self.0.pdf(x)
        }
    }

    fn observed_dataset() -> Dataset {
        // every unit in group 1 and below c1, so Y0 is always observed
        let t = th();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let units = (0..400)
            .map(|i| {
                let x = 5.9 * i as f64 / 400.0;
                let e: f64 = StandardNormal.sample(&mut rng);
                UnitRecord::derived(x, vec![0.0], true, 1.0 + x + e, &t)
            })
            .collect();
        Dataset::new(units, t, vec!["w1".into()]).unwrap()
    }

    #[test]
    fn fully_observed_reduces_to_textbook_variance() {
        let ds = observed_dataset();
        let p = PropensityFit::fixed(vec![40.0], FeatureSpec::intercept_only(), Link::Logit, 1).unwrap();
        let o = OutcomeFit::fixed(vec![0.0], FeatureSpec::intercept_only(), TargetOutcome::Y0, 1).unwrap();
        let k = KernelSpec::Epanechnikov;
        let h = 0.8;
        let grid = linspace(2.5, 5.0, 6);
        let c = estimate_curve(&ds, TargetOutcome::Y0, EstimatorMethod::dr(), h, Nuisance::both(&p, &o), &grid, k).unwrap();
        let dens = AnalyticDensity::Uniform { lo: 0.0, hi: 5.9 };
        let v = dr_variance(&ds, TargetOutcome::Y0, &c, &p, &o, k, h, &dens).unwrap();
        for (j, &x) in grid.iter().enumerate() {
            let (a0, a1) = (c.values[j].unwrap(), c.slopes[j].unwrap());
            let (mut sw, mut s) = (0.0, 0.0);
            for u in ds.units() {
                let w = k.value((u.x - x) / h);
                sw += w;
                s += w * (u.y - a0 - a1 * (u.x - x)).powi(2);
            }
            let want = 0.6 * (s / sw) / dens.pdf(x) / (400.0 * h);
            assert_relative_eq!(v.values[j].unwrap(), want, max_relative = 1e-10);
        }

        let doubled = dr_variance(&ds, TargetOutcome::Y0, &c, &p, &o, k, h, &Scaled(dens, 2.0)).unwrap();
        for (a, b) in v.values.iter().zip(&doubled.values) {
            assert_relative_eq!(a.unwrap(), 2.0 * b.unwrap(), max_relative = 1e-14);
        }

        let tiny = dr_variance(&ds, TargetOutcome::Y0, &c, &p, &o, k, h, &Scaled(dens, 1e-12)).unwrap();
        assert_eq!(tiny.failures.len(), grid.len());

        assert!(dr_variance(&ds, TargetOutcome::Y0, &c, &p, &o, k, 0.5, &dens).is_err());
    }
}
