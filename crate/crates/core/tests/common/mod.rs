#![allow(dead_code)]

use rdmc::data::{Dataset, TargetOutcome};
use rdmc::kernels::KernelSpec;
use rdmc::llr::{local_linear_solve, pseudo_outcome, EstimatorMethod, MethodKind};
use rdmc::nuisance::{OutcomeFit, PropensityFit, PROPENSITY_CLIP};
use rdmc::simulation::{generate, SimConfig};

/// Sum over units of `U_i(α) - A_i(α)`, term by term, with `V ≡ 1` and
/// `G(u) = (1, u)`.
#[allow(clippy::too_many_arguments)]
fn lambda(
    ds: &Dataset,
    target: TargetOutcome,
    pfit: &PropensityFit,
    ofit: &OutcomeFit,
    x: f64,
    h: f64,
    kernel: KernelSpec,
    alpha: [f64; 2],
) -> [f64; 2] {
    let t = ds.thresholds();
    let mut total = [0.0; 2];
    for u in ds.units() {
        let in_range = match target {
            TargetOutcome::Y0 => u.x < t.c1,
            TargetOutcome::Y1 => u.x > t.c0,
        };
        if !in_range {
            continue;
        }
        let d = if u.d { 1.0 } else { 0.0 };
        let z = if u.z { 1.0 } else { 0.0 };
        // indicator that the target outcome is the observed one
        let r = match target {
            TargetOutcome::Y0 => 1.0 - z,
            TargetOutcome::Y1 => z,
        };
        let pi = pfit.predict(u.x, &u.w).unwrap();
        // the same floor the library applies before inverting
        let (pi1, pi0) = (pi.max(PROPENSITY_CLIP), (1.0 - pi).max(PROPENSITY_CLIP));
        let delta = ofit.predict(u.x, &u.w).unwrap();
        let k = kernel.value((u.x - x) / h) / h;
        let g = [1.0, u.x - x];
        let fit = alpha[0] + alpha[1] * (u.x - x);

        let u_ipw = d * (r * d / pi1 * k) * (u.y - fit)
            + (1.0 - d) * (r * (1.0 - d) / pi0 * k) * (u.y - fit);
        let a_aug = d * ((r * d / pi1 - 1.0) * k) * (delta - fit)
            + (1.0 - d) * ((r * (1.0 - d) / pi0 - 1.0) * k) * (delta - fit);
        for j in 0..2 {
            total[j] += g[j] * (u_ipw - a_aug);
        }
    }
    total
}

/// Root of the doubly robust estimating equation at `x`. The equation is
/// affine in `α`, so three evaluations determine it; solved by Cramer's rule.
pub fn literal_dr(
    ds: &Dataset,
    target: TargetOutcome,
    pfit: &PropensityFit,
    ofit: &OutcomeFit,
    x: f64,
    h: f64,
    kernel: KernelSpec,
) -> (f64, f64) {
    let eval = |a| lambda(ds, target, pfit, ofit, x, h, kernel, a);
    let b = eval([0.0, 0.0]);
    let e0 = eval([1.0, 0.0]);
    let e1 = eval([0.0, 1.0]);
    // Λ(α) = b - Mα
    let m = [[b[0] - e0[0], b[0] - e1[0]], [b[1] - e0[1], b[1] - e1[1]]];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let a0 = (b[0] * m[1][1] - m[0][1] * b[1]) / det;
    let a1 = (m[0][0] * b[1] - b[0] * m[1][0]) / det;
    (a0, a1)
}

/// Observations of the unweighted estimating equation (naive or doubly robust).
pub fn equation_pairs(
    ds: &Dataset,
    target: TargetOutcome,
    method: EstimatorMethod,
    pfit: Option<&PropensityFit>,
    ofit: Option<&OutcomeFit>,
) -> Vec<(f64, f64)> {
    let t = ds.thresholds();
    ds.units()
        .iter()
        .filter(|u| t.in_range(target, u.x))
        .filter_map(|u| match method.kind {
            MethodKind::Naive => target.observed_when(u.z).then_some((u.x, u.y)),
            MethodKind::Dr => Some((
                u.x,
                pseudo_outcome(u, &t, target, pfit.unwrap(), ofit.unwrap()).unwrap(),
            )),
            MethodKind::Ipw => panic!("weighted equation"),
        })
        .collect()
}

/// Leave-one-out criterion computed by physically removing each unit and
/// refitting on what remains.
pub fn removal_lscv(
    ds: &Dataset,
    target: TargetOutcome,
    method: EstimatorMethod,
    pfit: Option<&PropensityFit>,
    ofit: Option<&OutcomeFit>,
    h: f64,
    kernel: KernelSpec,
) -> (f64, usize) {
    let t = ds.thresholds();
    let mut sum = 0.0;
    let mut used = 0;
    for (i, u) in ds.units().iter().enumerate() {
        if !(target.observed_when(u.z) && t.in_range(target, u.x)) {
            continue;
        }
        let reduced = ds.without_unit(i);
        let pairs = equation_pairs(&reduced, target, method, pfit, ofit);
        if let Ok((a0, _)) = local_linear_solve(&pairs, u.x, h, kernel) {
            sum += (u.y - a0) * (u.y - a0);
            used += 1;
        }
    }
    (sum / used as f64, used)
}

pub fn small_dataset(n: usize, seed: u64) -> Dataset {
    generate(&SimConfig { n, ..SimConfig::default() }, seed).unwrap()
}
