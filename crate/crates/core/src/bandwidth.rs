//! Least-squares cross-validation of the local linear bandwidth.
//!
//! `LSCV_j(h)` is the mean of `(Y_i - ĝ_{j,-i}(X_i))²` over units that observe
//! `Y_j` inside the estimation range of `g_j` (`X_i < c1` for `g_0`,
//! `X_i > c0` for `g_1`). The nuisance fits are held fixed across folds and
//! bandwidths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TargetOutcome};
use crate::error::{Error, Result};
use crate::kernels::{check_bandwidth, KernelSpec};
use crate::llr::{build_sample, EstimatorMethod, Nuisance, Sample};

/// Number of bandwidths in the default search grid.
pub const DEFAULT_GRID_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSearch {
    pub h_grid: Vec<f64>,
    /// Golden-section refinement between the grid neighbours of the minimizer.
    pub refine: bool,
}

impl BandwidthSearch {
    pub fn new(h_grid: Vec<f64>, refine: bool) -> Result<Self> {
        if h_grid.is_empty() {
            return Err(Error::Configuration("bandwidth grid is empty".into()));
        }
        if h_grid.iter().any(|&h| !(h > 0.0 && h.is_finite()))
            || h_grid.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(Error::Configuration(
                "bandwidth grid must be positive and strictly increasing".into(),
            ));
        }
        Ok(Self { h_grid, refine })
    }

    /// 20 log-spaced values from `0.1 σ` to `2 σ`, `σ` the sample standard
    /// deviation of the running variable inside the estimation range.
    pub fn default_for(dataset: &Dataset, target: TargetOutcome) -> Result<Self> {
        let t = dataset.thresholds();
        let xs: Vec<f64> = dataset
            .units()
            .iter()
            .map(|u| u.x)
            .filter(|&x| t.in_range(target, x))
            .collect();
        if xs.len() < 2 {
            return Err(Error::SampleSize {
                needed: 2,
                found: xs.len(),
            });
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        if !(sd > 0.0) {
            return Err(Error::DegenerateSample("running variable is constant".into()));
        }
        Self::new(log_grid(0.1 * sd, 2.0 * sd, DEFAULT_GRID_LEN), false)
    }
}

/// `n` log-spaced values on `[lo, hi]`, endpoints exact.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| match k {
            0 => lo,
            k if k == n - 1 => hi,
            k => (a + (b - a) * k as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LscvScore {
    pub h: f64,
    pub score: f64,
    /// Held-out units that entered the mean.
    pub n_used: usize,
    /// Held-out units whose leave-one-out fit failed.
    pub n_excluded: usize,
}

/// The sample of the estimating equation plus the held-out units.
struct Folds {
    sample: Sample,
    /// (x_i, y_i, position of unit i in the sample if it is part of it)
    held_out: Vec<(f64, f64, Option<usize>)>,
}

impl Folds {
    fn new(
        dataset: &Dataset,
        target: TargetOutcome,
        method: EstimatorMethod,
        nuisance: Nuisance<'_>,
    ) -> Result<Self> {
        let sample = build_sample(dataset, target, method, nuisance)?;
        let mut position = vec![None; dataset.len()];
        for (pos, &id) in sample.ids.iter().enumerate() {
            position[id] = Some(pos);
        }
        let t = dataset.thresholds();
        let held_out: Vec<_> = dataset
            .units()
            .iter()
            .enumerate()
            .filter(|(_, u)| target.observed_when(u.z) && t.in_range(target, u.x))
            .map(|(i, u)| (u.x, u.y, position[i]))
            .collect();
        if held_out.len() < 2 {
            return Err(Error::SampleSize {
                needed: 2,
                found: held_out.len(),
            });
        }
        Ok(Self { sample, held_out })
    }

    fn score(&self, h: f64, kernel: KernelSpec) -> Result<LscvScore> {
        check_bandwidth(h)?;
        let residuals: Vec<Option<f64>> = self
            .held_out
            .par_iter()
            .map(|&(x, y, skip)| {
                self.sample
                    .solve(x, h, kernel, skip)
                    .ok()
                    .map(|(a0, _)| (y - a0) * (y - a0))
            })
            .collect();
        // sequential sum keeps the result independent of scheduling
        let mut sum = 0.0;
        let mut used = 0;
        for r in residuals.iter().flatten() {
            sum += r;
            used += 1;
        }
        if used == 0 {
            return Err(Error::BandwidthInfeasible { h });
        }
        Ok(LscvScore {
            h,
            score: sum / used as f64,
            n_used: used,
            n_excluded: residuals.len() - used,
        })
    }
}

pub fn lscv_score(
    dataset: &Dataset,
    target: TargetOutcome,
    method: EstimatorMethod,
    h: f64,
    nuisance: Nuisance<'_>,
    kernel: KernelSpec,
) -> Result<LscvScore> {
    Folds::new(dataset, target, method, nuisance)?.score(h, kernel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub h: f64,
    pub score: Option<f64>,
    pub n_excluded: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub h: f64,
    pub score: f64,
    /// Scores on the search grid, in grid order.
    pub profile: Vec<ProfileEntry>,
}

/// Minimizes `LSCV_j` over the search grid. Equal scores resolve to the larger bandwidth.
pub fn select_bandwidth(
    dataset: &Dataset,
    target: TargetOutcome,
    method: EstimatorMethod,
    search: &BandwidthSearch,
    nuisance: Nuisance<'_>,
    kernel: KernelSpec,
) -> Result<BandwidthSelection> {
    let search = BandwidthSearch::new(search.h_grid.clone(), search.refine)?;
    let folds = Folds::new(dataset, target, method, nuisance)?;
    let profile: Vec<ProfileEntry> = search
        .h_grid
        .iter()
        .map(|&h| match folds.score(h, kernel) {
            Ok(s) => ProfileEntry {
                h,
                score: Some(s.score),
                n_excluded: s.n_excluded,
                error: None,
            },
            Err(e) => ProfileEntry {
                h,
                score: None,
                n_excluded: folds.held_out.len(),
                error: Some(e.to_string()),
            },
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (k, e) in profile.iter().enumerate() {
        if let Some(s) = e.score {
            if best.is_none_or(|(_, b)| s <= b) {
                best = Some((k, s));
            }
        }
    }
    let Some((k, mut best_score)) = best else {
        let detail: Vec<String> = profile
            .iter()
            .map(|e| format!("h={}: {}", e.h, e.error.as_deref().unwrap_or("?")))
            .collect();
        return Err(Error::Selection(detail.join("; ")));
    };
    let mut best_h = search.h_grid[k];

    if search.refine && search.h_grid.len() > 1 {
        let lo = search.h_grid[k.saturating_sub(1)];
        let hi = search.h_grid[(k + 1).min(search.h_grid.len() - 1)];
        let objective = |h: f64| folds.score(h, kernel).map_or(f64::INFINITY, |s| s.score);
        let (h, s) = golden_section(objective, lo, hi, 1e-3 * best_h);
        if s < best_score || (s == best_score && h > best_h) {
            best_h = h;
            best_score = s;
        }
    }
    Ok(BandwidthSelection {
        h: best_h,
        score: best_score,
        profile,
    })
}

/// Golden-section minimization on `[a, b]` down to bracket width `tol`.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
