//! Local linear curve estimators for `g_j(x)`: naive complete-case, inverse
//! probability weighted, and the doubly-robust augmented estimator.
//!
//! With a constant working variance the doubly-robust estimating equation
//! for `g_j` at `x` is linear in the local coefficients and reduces to
//! weighted least squares of a pseudo-outcome on `(1, X_i - x)` with the plain
//! kernel weight. For a unit whose realized outcome is `Y_j` (`r = 1`) and
//! whose group membership probability is `p` (`π̂` in group 1, `1 - π̂` in
//! group 0),
//!
//! ```text
//! ỹ = (r / p) y - (r / p - 1) δ̂_j(x, w)
//! ```
//!
//! so units missing `Y_j` contribute `δ̂_j` and complete cases contribute an
//! inverse-weighted residual correction around it. The equivalence with the
//! unit-by-unit estimating equation is checked by the integration tests.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Thresholds, TargetOutcome, UnitRecord};
use crate::error::{Error, Result};
use crate::kernels::{check_bandwidth, KernelSpec};
use crate::nuisance::{group_probability, OutcomeFit, PropensityFit};

/// Local normal equations with a scaled condition number above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Number of points in the default reporting grid on `[c0, c1]`.
pub const DEFAULT_GRID_POINTS: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Naive,
    Ipw,
    Dr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EstimatorMethod {
    pub kind: MethodKind,
    /// Group whose complete cases the IPW estimator uses (`true` = group 1).
    pub ipw_group: Option<bool>,
}

impl EstimatorMethod {
    pub fn naive() -> Self {
        Self {
            kind: MethodKind::Naive,
            ipw_group: None,
        }
    }

    pub fn dr() -> Self {
        Self {
            kind: MethodKind::Dr,
            ipw_group: None,
        }
    }

    pub fn ipw(group: bool) -> Self {
        Self {
            kind: MethodKind::Ipw,
            ipw_group: Some(group),
        }
    }

    /// IPW on the group that observes `Y_j` throughout the estimation range:
    /// group 1 for `g_0` (untreated below `c1`), group 0 for `g_1`.
    pub fn ipw_default(target: TargetOutcome) -> Self {
        Self::ipw(target == TargetOutcome::Y0)
    }

    fn check(&self) -> Result<()> {
        match (self.kind, self.ipw_group) {
            (MethodKind::Ipw, None) => Err(Error::Configuration("ipw requires a group".into())),
            (MethodKind::Naive | MethodKind::Dr, Some(_)) => Err(Error::Configuration(
                "ipw_group is only meaningful for ipw".into(),
            )),
            _ => Ok(()),
        }
    }

    /// `naive`, `ipw0`, `ipw1` or `dr`.
    pub fn label(&self) -> String {
        match (self.kind, self.ipw_group) {
            (MethodKind::Naive, _) => "naive".into(),
            (MethodKind::Dr, _) => "dr".into(),
            (MethodKind::Ipw, g) => format!("ipw{}", u8::from(g.unwrap_or(false))),
        }
    }
}

impl fmt::Display for EstimatorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for EstimatorMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Self::naive()),
            "dr" => Ok(Self::dr()),
            "ipw0" => Ok(Self::ipw(false)),
            "ipw1" => Ok(Self::ipw(true)),
            other => Err(Error::Domain(format!(
                "unknown method `{other}` (expected naive, ipw0, ipw1 or dr)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub x: f64,
    pub message: String,
}

/// Estimated curve on a grid. Grid points where the local fit failed carry
/// `None` and an entry in `failures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub grid: Vec<f64>,
    /// `ĝ_j(x)`, the local intercept.
    pub values: Vec<Option<f64>>,
    /// Local slope at each grid point.
    pub slopes: Vec<Option<f64>>,
    /// Pointwise variance of `ĝ_j(x)`, when computed.
    pub variance: Option<Vec<Option<f64>>>,
    pub target: TargetOutcome,
    pub bandwidth: f64,
    pub method: EstimatorMethod,
    pub kernel: KernelSpec,
    pub thresholds: Thresholds,
    pub failures: Vec<PointFailure>,
}

impl Curve {
    /// Tabulates a known function; used for true curves and tests.
    pub fn from_fn(
        grid: Vec<f64>,
        f: impl Fn(f64) -> f64,
        target: TargetOutcome,
        thresholds: Thresholds,
    ) -> Self {
        let values = grid.iter().map(|&x| Some(f(x))).collect();
        let slopes = vec![None; grid.len()];
        Self {
            grid,
            values,
            slopes,
            variance: None,
            target,
            bandwidth: f64::NAN,
            method: EstimatorMethod::naive(),
            kernel: KernelSpec::default(),
            thresholds,
            failures: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Value at grid point `k`, if the fit there succeeded.
    pub fn value(&self, k: usize) -> Option<f64> {
        self.values[k]
    }

    /// The sub-curve at grid points strictly between the thresholds.
    pub fn interior(&self) -> Curve {
        let t = self.thresholds;
        let keep: Vec<usize> = (0..self.grid.len())
            .filter(|&k| self.grid[k] > t.c0 && self.grid[k] < t.c1)
            .collect();
        let pick = |v: &Vec<Option<f64>>| keep.iter().map(|&k| v[k]).collect::<Vec<_>>();
        Curve {
            grid: keep.iter().map(|&k| self.grid[k]).collect(),
            values: pick(&self.values),
            slopes: pick(&self.slopes),
            variance: self.variance.as_ref().map(pick),
            failures: self
                .failures
                .iter()
                .filter(|f| f.x > t.c0 && f.x < t.c1)
                .cloned()
                .collect(),
            ..self.clone()
        }
    }
}

/// `n` equispaced points on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|k| if k == n - 1 { hi } else { lo + k as f64 * step })
                .collect()
        }
    }
}

pub fn default_grid(thresholds: &Thresholds) -> Vec<f64> {
    linspace(thresholds.c0, thresholds.c1, DEFAULT_GRID_POINTS)
}

/// `ỹ = (r/p) y - (r/p - 1) δ̂_j(x, w)` for a unit in the estimation range of `g_j`.
pub fn pseudo_outcome(
    unit: &UnitRecord,
    thresholds: &Thresholds,
    target: TargetOutcome,
    pfit: &PropensityFit,
    ofit: &OutcomeFit,
) -> Result<f64> {
    if !thresholds.in_range(target, unit.x) {
        return Err(Error::Domain(format!(
            "unit at x = {} is outside the estimation range of {target}",
            unit.x
        )));
    }
    let pi = pfit.predict(unit.x, &unit.w)?;
    let delta = ofit.predict(unit.x, &unit.w)?;
    Ok(pseudo_value(unit, target, pi, delta))
}

#[inline]
fn pseudo_value(unit: &UnitRecord, target: TargetOutcome, pi: f64, delta: f64) -> f64 {
    if !target.observed_when(unit.z) {
        return delta;
    }
    let ratio = 1.0 / group_probability(pi, unit.d);
    ratio * unit.y - (ratio - 1.0) * delta
}

/// Kernel-weighted moments of `(1, u)` and `(1, u) y` with `u = x_i - x0`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Moments {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub t0: f64,
    pub t1: f64,
    /// Distinct abscissae with positive weight.
    pub distinct: usize,
}

/// Observations entering one estimating equation, sorted by `x`.
#[derive(Debug, Clone)]
pub(crate) struct Sample {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Per-unit weight multiplying the kernel weight.
    pub mult: Vec<f64>,
    /// Originating unit index in the dataset.
    pub ids: Vec<usize>,
}

impl Sample {
    pub(crate) fn from_triples(mut rows: Vec<(usize, f64, f64, f64)>) -> Self {
        // stable: ties in x keep dataset order
        rows.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut s = Sample {
            xs: Vec::with_capacity(rows.len()),
            ys: Vec::with_capacity(rows.len()),
            mult: Vec::with_capacity(rows.len()),
            ids: Vec::with_capacity(rows.len()),
        };
        for (id, x, y, m) in rows {
            s.ids.push(id);
            s.xs.push(x);
            s.ys.push(y);
            s.mult.push(m);
        }
        s
    }

    pub(crate) fn position_of(&self, unit: usize) -> Option<usize> {
        self.ids.iter().position(|&id| id == unit)
    }

    /// Index range whose points can carry positive weight at `x0`.
    pub(crate) fn window(&self, x0: f64, reach: f64) -> (usize, usize) {
        let reach = reach * (1.0 + 1e-9);
        let lo = self.xs.partition_point(|&x| x < x0 - reach);
        let hi = self.xs.partition_point(|&x| x <= x0 + reach);
        (lo, hi)
    }

    pub(crate) fn moments(&self, x0: f64, h: f64, kernel: KernelSpec, skip: Option<usize>) -> Moments {
        let (lo, hi) = self.window(x0, kernel.support_radius() * h);
        let mut m = Moments::default();
        let mut last_x = f64::NAN;
        for i in lo..hi {
            if Some(i) == skip {
                continue;
            }
            let u = self.xs[i] - x0;
            let k = kernel.value(u / h) / h * self.mult[i];
            if k <= 0.0 {
                continue;
            }
            if self.xs[i] != last_x {
                m.distinct += 1;
                last_x = self.xs[i];
            }
            let ku = k * u;
            m.s0 += k;
            m.s1 += ku;
            m.s2 += ku * u;
            m.t0 += k * self.ys[i];
            m.t1 += ku * self.ys[i];
        }
        m
    }

    pub(crate) fn solve(
        &self,
        x0: f64,
        h: f64,
        kernel: KernelSpec,
        skip: Option<usize>,
    ) -> Result<(f64, f64)> {
        solve_moments(&self.moments(x0, h, kernel, skip), x0, h)
    }
}

/// Solves the 2×2 weighted normal equations for `(α0, α1)`.
pub(crate) fn solve_moments(m: &Moments, x0: f64, h: f64) -> Result<(f64, f64)> {
    if m.distinct < 2 {
        return Err(Error::InsufficientSupport {
            x0,
            distinct: m.distinct,
        });
    }
    // Condition number of the matrix in bandwidth units, so it does not depend on the scale of x.
    let (a, b, c) = (m.s0, m.s1 / h, m.s2 / (h * h));
    let tr = a + c;
    let det_scaled = a * c - b * b;
    let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
    let lmax = 0.5 * (tr + disc);
    let lmin = det_scaled / lmax;
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Conditioning { x0, condition });
    }
    let det = m.s0 * m.s2 - m.s1 * m.s1;
    let alpha0 = (m.s2 * m.t0 - m.s1 * m.t1) / det;
    let alpha1 = (m.s0 * m.t1 - m.s1 * m.t0) / det;
    Ok((alpha0, alpha1))
}

/// Minimizes `Σ K_h(x_i - x0) [y_i - α0 - α1 (x_i - x0)]²`.
pub fn local_linear_solve(
    samples: &[(f64, f64)],
    x0: f64,
    h: f64,
    kernel: KernelSpec,
) -> Result<(f64, f64)> {
    check_bandwidth(h)?;
    let rows = samples
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| (i, x, y, 1.0))
        .collect();
    Sample::from_triples(rows).solve(x0, h, kernel, None)
}

/// Fitted nuisance models, either of which may be absent.
#[derive(Debug, Clone, Copy, Default)]
pub struct Nuisance<'a> {
    pub propensity: Option<&'a PropensityFit>,
    pub outcome: Option<&'a OutcomeFit>,
}

impl<'a> Nuisance<'a> {
    pub fn new(propensity: Option<&'a PropensityFit>, outcome: Option<&'a OutcomeFit>) -> Self {
        Self {
            propensity,
            outcome,
        }
    }

    pub fn both(propensity: &'a PropensityFit, outcome: &'a OutcomeFit) -> Self {
        Self::new(Some(propensity), Some(outcome))
    }

    pub fn none() -> Self {
        Self::default()
    }
}

/// Assembles the observations and weights of one estimating equation.
pub(crate) fn build_sample(
    dataset: &Dataset,
    target: TargetOutcome,
    method: EstimatorMethod,
    nuisance: Nuisance<'_>,
) -> Result<Sample> {
    method.check()?;
    let t = dataset.thresholds();
    let in_range = dataset
        .units()
        .iter()
        .enumerate()
        .filter(|(_, u)| t.in_range(target, u.x));
    let rows: Vec<(usize, f64, f64, f64)> = match method.kind {
        MethodKind::Naive => in_range
            .filter(|(_, u)| target.observed_when(u.z))
            .map(|(i, u)| (i, u.x, u.y, 1.0))
            .collect(),
        MethodKind::Ipw => {
            let pfit = nuisance
                .propensity
                .ok_or_else(|| Error::Configuration("ipw requires a propensity fit".into()))?;
            check_fit_dims(dataset, Some(pfit), None)?;
            let group = method.ipw_group.unwrap_or(false);
            in_range
                .filter(|(_, u)| u.d == group && target.observed_when(u.z))
                .map(|(i, u)| {
                    let pi = pfit.predict_unchecked(u.x, &u.w);
                    (i, u.x, u.y, 1.0 / group_probability(pi, u.d))
                })
                .collect()
        }
        MethodKind::Dr => {
            let (pfit, ofit) = match (nuisance.propensity, nuisance.outcome) {
                (Some(p), Some(o)) => (p, o),
                _ => {
                    return Err(Error::Configuration(
                        "dr requires both a propensity and an outcome fit".into(),
                    ))
                }
            };
            check_fit_dims(dataset, Some(pfit), Some(ofit))?;
            in_range
                .map(|(i, u)| {
                    let pi = pfit.predict_unchecked(u.x, &u.w);
                    let delta = ofit.predict_unchecked(u.x, &u.w);
                    (i, u.x, pseudo_value(u, target, pi, delta), 1.0)
                })
                .collect()
        }
    };
    Ok(Sample::from_triples(rows))
}

fn check_fit_dims(
    dataset: &Dataset,
    pfit: Option<&PropensityFit>,
    ofit: Option<&OutcomeFit>,
) -> Result<()> {
    let m = dataset.dim();
    if pfit.is_some_and(|p| p.dim != m) || ofit.is_some_and(|o| o.dim != m) {
        return Err(Error::Domain(format!(
            "nuisance fit covariate dimension differs from the dataset's ({m})"
        )));
    }
    Ok(())
}

fn check_grid(dataset: &Dataset, target: TargetOutcome, grid: &[f64]) -> Result<()> {
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain("grid must be strictly increasing".into()));
    }
    let t = dataset.thresholds();
    let xs = dataset.units().iter().map(|u| u.x);
    let (lo, hi) = match target {
        TargetOutcome::Y0 => (xs.fold(f64::INFINITY, f64::min), t.c1),
        TargetOutcome::Y1 => (t.c0, xs.fold(f64::NEG_INFINITY, f64::max)),
    };
    if let Some(&x) = grid.iter().find(|&&x| !(x >= lo && x <= hi)) {
        return Err(Error::Domain(format!(
            "grid point {x} outside the estimation range [{lo}, {hi}] of {target}"
        )));
    }
    Ok(())
}

/// Estimates `g_j` on `grid`. Grid points with insufficient kernel support are
/// recorded as failures instead of failing the whole curve.
#[allow(clippy::too_many_arguments)]
pub fn estimate_curve(
    dataset: &Dataset,
    target: TargetOutcome,
    method: EstimatorMethod,
    h: f64,
    nuisance: Nuisance<'_>,
    grid: &[f64],
    kernel: KernelSpec,
) -> Result<Curve> {
    check_bandwidth(h)?;
    check_grid(dataset, target, grid)?;
    let sample = build_sample(dataset, target, method, nuisance)?;
    let fits: Vec<Result<(f64, f64)>> = grid
        .par_iter()
        .map(|&x0| sample.solve(x0, h, kernel, None))
        .collect();

    let mut values = Vec::with_capacity(grid.len());
    let mut slopes = Vec::with_capacity(grid.len());
    let mut failures = Vec::new();
    for (&x, fit) in grid.iter().zip(fits) {
        match fit {
            Ok((a0, a1)) => {
                values.push(Some(a0));
                slopes.push(Some(a1));
            }
            Err(e) => {
                values.push(None);
                slopes.push(None);
                failures.push(PointFailure {
                    x,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(Curve {
        grid: grid.to_vec(),
        values,
        slopes,
        variance: None,
        target,
        bandwidth: h,
        method,
        kernel,
        thresholds: dataset.thresholds(),
        failures,
    })
}

/// `ĝ_{j,-i}(X_i)`: the estimate at unit `i`'s running variable with unit `i`
/// dropped from the estimating equation. Nuisance fits are held fixed.
#[allow(clippy::too_many_arguments)]
pub fn loo_estimate(
    dataset: &Dataset,
    target: TargetOutcome,
    method: EstimatorMethod,
    h: f64,
    nuisance: Nuisance<'_>,
    i: usize,
    kernel: KernelSpec,
) -> Result<f64> {
    check_bandwidth(h)?;
    let unit = dataset
        .units()
        .get(i)
        .ok_or_else(|| Error::Domain(format!("unit index {i} out of bounds")))?;
    let t = dataset.thresholds();
    if !(target.observed_when(unit.z) && t.in_range(target, unit.x)) {
        return Err(Error::Domain(format!(
            "unit {i} does not observe {target} inside the estimation range"
        )));
    }
    let sample = build_sample(dataset, target, method, nuisance)?;
    let skip = sample.position_of(i);
    sample.solve(unit.x, h, kernel, skip).map(|(a0, _)| a0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::{FeatureSpec, Link};
    use approx::assert_relative_eq;

    fn th() -> Thresholds {
        Thresholds::new(2.0, 6.0).unwrap()
    }

    fn pfit_const(pi: f64) -> PropensityFit {
        let g = (pi / (1.0 - pi)).ln();
        PropensityFit::fixed(vec![g], FeatureSpec::intercept_only(), Link::Logit, 0).unwrap()
    }

    fn ofit_const(target: TargetOutcome, v: f64) -> OutcomeFit {
        OutcomeFit::fixed(vec![v], FeatureSpec::intercept_only(), target, 0).unwrap()
    }

    #[test]
    fn pseudo_outcome_cases() {
        let t = th();
        let p = pfit_const(0.5);
        let o = ofit_const(TargetOutcome::Y0, 8.0);
        // group 0 above c0: Y_0 missing
        let missing = UnitRecord::derived(3.0, vec![], false, 100.0, &t);
        assert_eq!(pseudo_outcome(&missing, &t, TargetOutcome::Y0, &p, &o).unwrap(), 8.0);
        // group 1 below c1: observed with p = 0.5
        let seen = UnitRecord::derived(3.0, vec![], true, 10.0, &t);
        assert_relative_eq!(
            pseudo_outcome(&seen, &t, TargetOutcome::Y0, &p, &o).unwrap(),
            12.0,
            epsilon = 1e-12
        );
        // outside the range of g_0
        let far = UnitRecord::derived(7.0, vec![], true, 10.0, &t);
        assert!(pseudo_outcome(&far, &t, TargetOutcome::Y0, &p, &o).is_err());
        // p = 1 collapses the weights
        assert_eq!(pseudo_value(&seen, TargetOutcome::Y0, 1.0, 8.0), 10.0);
    }

    #[test]
    fn linear_data_is_reproduced() {
        let samples: Vec<(f64, f64)> = (0..30).map(|i| {
            let x = i as f64 * 0.37 - 2.0;
            (x, 2.0 + 3.0 * x)
        }).collect();
        for kernel in KernelSpec::ALL {
            for (x0, h) in [(0.0, 0.8), (3.3, 2.0), (-1.9, 0.5)] {
                let (a0, a1) = local_linear_solve(&samples, x0, h, kernel).unwrap();
                assert_relative_eq!(a0, 2.0 + 3.0 * x0, epsilon = 1e-10);
                assert_relative_eq!(a1, 3.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn three_points_match_hand_assembled_system() {
        let pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 4.0)];
        let phi = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
        // weights at x0 = 1, h = 1: φ(1), φ(0), φ(1); u = -1, 0, 1
        let (wa, wb) = (phi(1.0), phi(0.0));
        let s0 = 2.0 * wa + wb;
        let s2 = 2.0 * wa;
        let t0 = wb * 1.0 + wa * 4.0;
        let t1 = wa * 4.0;
        // s1 = 0 by symmetry
        let (a0, a1) = (t0 / s0, t1 / s2);
        let got = local_linear_solve(&pts, 1.0, 1.0, KernelSpec::Gaussian).unwrap();
        assert_relative_eq!(got.0, a0, epsilon = 1e-12);
        assert_relative_eq!(got.1, a1, epsilon = 1e-12);
    }

    #[test]
    fn single_point_is_insufficient_support() {
        let pts = [(0.0, 1.0), (5.0, 2.0)];
        match local_linear_solve(&pts, 0.0, 1.0, KernelSpec::Epanechnikov) {
            Err(Error::InsufficientSupport { x0, distinct }) => {
                assert_eq!(x0, 0.0);
                assert_eq!(distinct, 1);
            }
            other => panic!("expected insufficient support, got {other:?}"),
        }
        // duplicated abscissa is still one distinct point
        let dup = [(0.0, 1.0), (0.0, 2.0)];
        assert!(local_linear_solve(&dup, 0.0, 1.0, KernelSpec::Epanechnikov).is_err());
    }

    #[test]
    fn nearly_coincident_points_are_ill_conditioned() {
        let pts = [(0.0, 1.0), (1e-9, 2.0)];
        assert!(matches!(
            local_linear_solve(&pts, 0.0, 1.0, KernelSpec::Gaussian),
            Err(Error::Conditioning { .. })
        ));
    }

    #[test]
    fn method_labels_round_trip() {
        for m in [
            EstimatorMethod::naive(),
            EstimatorMethod::dr(),
            EstimatorMethod::ipw(false),
            EstimatorMethod::ipw(true),
        ] {
            assert_eq!(m.label().parse::<EstimatorMethod>().unwrap(), m);
        }
        assert_eq!(EstimatorMethod::ipw_default(TargetOutcome::Y0), EstimatorMethod::ipw(true));
        assert_eq!(EstimatorMethod::ipw_default(TargetOutcome::Y1), EstimatorMethod::ipw(false));
    }

    #[test]
    fn linspace_hits_endpoints() {
        let g = linspace(2.0, 6.0, 201);
        assert_eq!(g[0], 2.0);
        assert_eq!(g[200], 6.0);
        assert_relative_eq!(g[100], 4.0, epsilon = 1e-15);
    }

    fn small_dataset() -> Dataset {
        let t = th();
        let units = (0..60)
            .map(|i| {
                let x = i as f64 * 0.13;
                let d = i % 3 == 0;
                let y = (x * 1.7).sin() * 5.0 + if d { 1.0 } else { 0.0 };
                UnitRecord::derived(x, vec![(i % 7) as f64], d, y, &t)
            })
            .collect();
        Dataset::new(units, t, vec!["w1".into()]).unwrap()
    }

    #[test]
    fn dr_gram_matrix_equals_unweighted_all_units_gram() {
        let ds = small_dataset();
        let p = PropensityFit::fixed(vec![-0.3, 0.2, 0.1], "1,x,w1".parse().unwrap(), Link::Logit, 1).unwrap();
        let o = OutcomeFit::fixed(vec![1.0, 0.5], "1,x".parse().unwrap(), TargetOutcome::Y0, 1).unwrap();
        let dr = build_sample(&ds, TargetOutcome::Y0, EstimatorMethod::dr(), Nuisance::both(&p, &o)).unwrap();
        let t = ds.thresholds();
        let all = Sample::from_triples(
            ds.units()
                .iter()
                .enumerate()
                .filter(|(_, u)| u.x < t.c1)
                .map(|(i, u)| (i, u.x, u.y, 1.0))
                .collect(),
        );
        for x0 in [0.5, 2.0, 4.4, 6.0] {
            let a = dr.moments(x0, 0.9, KernelSpec::Epanechnikov, None);
            let b = all.moments(x0, 0.9, KernelSpec::Epanechnikov, None);
            assert_eq!((a.s0, a.s1, a.s2), (b.s0, b.s1, b.s2));
        }
    }

    #[test]
    fn missing_fits_are_configuration_errors() {
        let ds = small_dataset();
        let grid = default_grid(&ds.thresholds());
        for m in [EstimatorMethod::dr(), EstimatorMethod::ipw(true)] {
            assert!(matches!(
                estimate_curve(&ds, TargetOutcome::Y0, m, 1.0, Nuisance::none(), &grid, KernelSpec::Epanechnikov),
                Err(Error::Configuration(_))
            ));
        }
        let bad = EstimatorMethod { kind: MethodKind::Dr, ipw_group: Some(true) };
        assert!(estimate_curve(&ds, TargetOutcome::Y0, bad, 1.0, Nuisance::none(), &grid, KernelSpec::Epanechnikov).is_err());
    }

    #[test]
    fn grid_outside_range_is_rejected() {
        let ds = small_dataset();
        let grid = [3.0, 6.5];
        assert!(matches!(
            estimate_curve(&ds, TargetOutcome::Y0, EstimatorMethod::naive(), 1.0, Nuisance::none(), &grid, KernelSpec::Epanechnikov),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn small_bandwidth_records_point_failures() {
        let ds = small_dataset();
        let grid = default_grid(&ds.thresholds());
        let c = estimate_curve(&ds, TargetOutcome::Y0, EstimatorMethod::naive(), 0.25, Nuisance::none(), &grid, KernelSpec::Epanechnikov).unwrap();
        assert!(!c.failures.is_empty());
        assert_eq!(c.values.iter().filter(|v| v.is_none()).count(), c.failures.len());
        assert!(c.values.iter().any(|v| v.is_some()));
    }

    #[test]
    fn loo_far_unit_does_not_matter() {
        let pts: Vec<(f64, f64)> = vec![(0.0, 1.0), (0.3, 1.5), (0.5, 0.2), (0.9, 3.0)];
        let t = Thresholds::new(10.0, 20.0).unwrap();
        let mut units: Vec<UnitRecord> = pts
            .iter()
            .map(|&(x, y)| UnitRecord::derived(x, vec![], false, y, &t))
            .collect();
        units.push(UnitRecord::derived(8.0, vec![], false, 50.0, &t));
        let ds = Dataset::new(units, t, vec![]).unwrap();
        let kernel = KernelSpec::Epanechnikov;
        // Leaving out the far unit 4 does not change the fit at unit 1.
        let full = estimate_curve(&ds, TargetOutcome::Y0, EstimatorMethod::naive(), 1.0, Nuisance::none(), &[0.3], kernel).unwrap();
        let loo_far = estimate_curve(&ds.without_unit(4), TargetOutcome::Y0, EstimatorMethod::naive(), 1.0, Nuisance::none(), &[0.3], kernel).unwrap();
        assert_eq!(full.values[0], loo_far.values[0]);
        // Leaving out unit 1 equals a plain solve on the other near points.
        let loo = loo_estimate(&ds, TargetOutcome::Y0, EstimatorMethod::naive(), 1.0, Nuisance::none(), 1, kernel).unwrap();
        let rest = [(0.0, 1.0), (0.5, 0.2), (0.9, 3.0)];
        assert_eq!(loo, local_linear_solve(&rest, 0.3, 1.0, kernel).unwrap().0);
    }

    #[test]
    fn loo_of_middle_point_in_three() {
        let t = Thresholds::new(10.0, 20.0).unwrap();
        let units = [(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]
            .iter()
            .map(|&(x, y)| UnitRecord::derived(x, vec![], true, y, &t))
            .collect();
        let ds = Dataset::new(units, t, vec![]).unwrap();
        let v = loo_estimate(&ds, TargetOutcome::Y0, EstimatorMethod::naive(), 3.0, Nuisance::none(), 1, KernelSpec::Triangular).unwrap();
        let oracle = local_linear_solve(&[(0.0, 1.0), (2.0, 5.0)], 1.0, 3.0, KernelSpec::Triangular).unwrap().0;
        assert_eq!(v, oracle);
        assert_relative_eq!(v, 3.0, epsilon = 1e-12);
        assert!(loo_estimate(&ds, TargetOutcome::Y1, EstimatorMethod::naive(), 3.0, Nuisance::none(), 1, KernelSpec::Triangular).is_err());
    }
}
