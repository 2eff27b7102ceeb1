//! Cost-effectiveness optimal threshold between `c0` and `c1`.
//!
//! Moving the threshold of the high-threshold group to `c` treats its units
//! with `X > c`. Up to terms that do not depend on `c`, the net benefit is
//!
//! ```text
//! B(c) = ∫_{c0}^{c} g0 f dx + ∫_{c}^{c1} (g1 - MC) f dx
//! ```
//!
//! and `B'(c) = -(τ(c) - MC(c)) f(c)`.

use serde::{Deserialize, Serialize};

use crate::data::Thresholds;
use crate::error::{Error, Result};
use crate::inference::Density;
use crate::llr::{linspace, Curve};

pub const DEFAULT_RESOLUTION: usize = 1001;

/// Marginal cost of treatment per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CostSpec {
    Constant { value: f64 },
    /// Linear interpolation between tabulated points.
    Tabulated { xs: Vec<f64>, mc: Vec<f64> },
}

impl CostSpec {
    pub fn constant(value: f64) -> Self {
        CostSpec::Constant { value }
    }

    pub fn tabulated(xs: Vec<f64>, mc: Vec<f64>) -> Result<Self> {
        if xs.len() != mc.len() || xs.len() < 2 {
            return Err(Error::Configuration(
                "cost table needs at least two (x, MC) rows of equal length".into(),
            ));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) || mc.iter().chain(&xs).any(|v| !v.is_finite()) {
            return Err(Error::Configuration(
                "cost table x must be finite and strictly increasing".into(),
            ));
        }
        Ok(CostSpec::Tabulated { xs, mc })
    }

    /// `MC(x)`; tabulated costs are not extrapolated.
    pub fn at(&self, x: f64) -> Result<f64> {
        match self {
            CostSpec::Constant { value } => Ok(*value),
            CostSpec::Tabulated { xs, mc } => {
                if !(x >= xs[0] && x <= xs[xs.len() - 1]) {
                    return Err(Error::Domain(format!(
                        "cost table covers [{}, {}], asked for {x}",
                        xs[0],
                        xs[xs.len() - 1]
                    )));
                }
                let k = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
                let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
                Ok(mc[k - 1] + t * (mc[k] - mc[k - 1]))
            }
        }
    }

    fn check_covers(&self, t: &Thresholds) -> Result<()> {
        if let CostSpec::Tabulated { xs, .. } = self {
            if xs[0] > t.c0 || xs[xs.len() - 1] < t.c1 {
                return Err(Error::Configuration(format!(
                    "cost table [{}, {}] does not cover [{}, {}]",
                    xs[0],
                    xs[xs.len() - 1],
                    t.c0,
                    t.c1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryFlag {
    Interior,
    AtC0,
    AtC1,
}

impl BoundaryFlag {
    pub fn label(self) -> &'static str {
        match self {
            BoundaryFlag::Interior => "interior",
            BoundaryFlag::AtC0 => "at_c0",
            BoundaryFlag::AtC1 => "at_c1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub c_opt: f64,
    pub objective_at_opt: f64,
    pub objective_profile: Vec<(f64, f64)>,
    pub boundary_flag: BoundaryFlag,
}

/// Running trapezoid integrals of `g0 f` and `(g1 - MC) f` over the grid
/// points in `[c0, c1]`.
struct Objective {
    thresholds: Thresholds,
    xs: Vec<f64>,
    below: Vec<f64>,
    above: Vec<f64>,
    cum_below: Vec<f64>,
    cum_above: Vec<f64>,
}

impl Objective {
    fn new(g0: &Curve, g1: &Curve, density: &dyn Density, cost: &CostSpec) -> Result<Self> {
        if g0.thresholds != g1.thresholds {
            return Err(Error::Alignment("curves were estimated with different thresholds".into()));
        }
        if g0.grid.len() != g1.grid.len()
            || g0.grid.iter().zip(&g1.grid).any(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Err(Error::Alignment("g0 and g1 curves are not on the same grid".into()));
        }
        let t = g0.thresholds;
        cost.check_covers(&t)?;
        let grid = &g0.grid;
        if grid.is_empty() || grid[0] > t.c0 || grid[grid.len() - 1] < t.c1 {
            return Err(Error::Alignment(format!(
                "curve grid does not cover [{}, {}]",
                t.c0, t.c1
            )));
        }
        // cells that intersect [c0, c1]
        let first = grid.partition_point(|&x| x <= t.c0) - 1;
        let last = grid.partition_point(|&x| x < t.c1);
        let mut xs = Vec::new();
        let mut below = Vec::new();
        let mut above = Vec::new();
        for k in first..=last {
            let (Some(v0), Some(v1)) = (g0.values[k], g1.values[k]) else {
                return Err(Error::Alignment(format!(
                    "curve value absent at grid point {}",
                    grid[k]
                )));
            };
            let f = density.pdf(grid[k]);
            xs.push(grid[k]);
            below.push(v0 * f);
            above.push((v1 - cost.at(grid[k].clamp(t.c0, t.c1))?) * f);
        }
        let mut obj = Self {
            thresholds: t,
            xs,
            below,
            above,
            cum_below: Vec::new(),
            cum_above: Vec::new(),
        };
        // grid ends outside [c0, c1] are replaced by the interpolated values at c0 and c1
        obj.clip_to(t.c0, t.c1);
        obj.cum_below = cumulative(&obj.xs, &obj.below);
        obj.cum_above = cumulative(&obj.xs, &obj.above);
        Ok(obj)
    }

    fn clip_to(&mut self, lo: f64, hi: f64) {
        let n = self.xs.len();
        if n >= 2 && self.xs[n - 1] > hi {
            let (b, a) = (self.interp(&self.below, hi), self.interp(&self.above, hi));
            self.xs[n - 1] = hi;
            self.below[n - 1] = b;
            self.above[n - 1] = a;
        }
        if n >= 2 && self.xs[0] < lo {
            let (b, a) = (self.interp(&self.below, lo), self.interp(&self.above, lo));
            self.xs[0] = lo;
            self.below[0] = b;
            self.above[0] = a;
        }
    }

    /// Cell index `k` with `xs[k] <= c <= xs[k+1]`.
    fn cell(&self, c: f64) -> usize {
        self.xs
            .partition_point(|&x| x <= c)
            .saturating_sub(1)
            .min(self.xs.len().saturating_sub(2))
    }

    fn interp(&self, ys: &[f64], c: f64) -> f64 {
        if self.xs.len() == 1 {
            return ys[0];
        }
        let k = self.cell(c);
        let t = (c - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
        ys[k] + t * (ys[k + 1] - ys[k])
    }

    /// `∫_{xs[0]}^{c}` of the linear interpolant of `ys`.
    fn integral_to(&self, ys: &[f64], cum: &[f64], c: f64) -> f64 {
        if self.xs.len() == 1 {
            return 0.0;
        }
        let k = self.cell(c);
        let yc = self.interp(ys, c);
        cum[k] + 0.5 * (c - self.xs[k]) * (ys[k] + yc)
    }

    fn value(&self, c: f64) -> Result<f64> {
        let t = self.thresholds;
        if !(c >= t.c0 && c <= t.c1) {
            return Err(Error::Domain(format!(
                "threshold {c} outside [{}, {}]",
                t.c0, t.c1
            )));
        }
        if c == t.c1 {
            return Ok(self.cum_below[self.xs.len() - 1]);
        }
        let below = self.integral_to(&self.below, &self.cum_below, c);
        let above_total = self.cum_above[self.xs.len() - 1];
        let above = above_total - self.integral_to(&self.above, &self.cum_above, c);
        Ok(below + above)
    }
}

fn cumulative(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..xs.len() {
        acc += 0.5 * (xs[k] - xs[k - 1]) * (ys[k] + ys[k - 1]);
        out.push(acc);
    }
    out
}

/// `∫_{c0}^{c} ĝ0 f + ∫_{c}^{c1} (ĝ1 - MC) f` by the trapezoid rule on the curve grid.
pub fn net_benefit(
    c: f64,
    g0: &Curve,
    g1: &Curve,
    density: &dyn Density,
    cost: &CostSpec,
) -> Result<f64> {
    Objective::new(g0, g1, density, cost)?.value(c)
}

/// Maximizes the net benefit on `resolution` equispaced thresholds in
/// `[c0, c1]`. Ties go to the smaller threshold.
pub fn optimize_threshold(
    g0: &Curve,
    g1: &Curve,
    density: &dyn Density,
    cost: &CostSpec,
    resolution: usize,
) -> Result<ThresholdResult> {
    if resolution < 2 {
        return Err(Error::Configuration("threshold resolution must be at least 2".into()));
    }
    let obj = Objective::new(g0, g1, density, cost)?;
    let t = obj.thresholds;
    let profile = linspace(t.c0, t.c1, resolution)
        .into_iter()
        .map(|c| obj.value(c).map(|v| (c, v)))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (k, &(_, v)) in profile.iter().enumerate() {
        if v > profile[best].1 {
            best = k;
        }
    }
    let boundary_flag = match best {
        0 => BoundaryFlag::AtC0,
        k if k == resolution - 1 => BoundaryFlag::AtC1,
        _ => BoundaryFlag::Interior,
    };
    Ok(ThresholdResult {
        c_opt: profile[best].0,
        objective_at_opt: profile[best].1,
        objective_profile: profile,
        boundary_flag,
    })
}
