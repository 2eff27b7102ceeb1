//! Parametric nuisance models: the group-membership propensity
//! `π(x, w) = Pr(D = 1 | x, w)` and the outcome regressions `δ_j(x, w)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{Dataset, TargetOutcome};
use crate::error::{Error, Result};

/// Floor on the probability of a unit's own group before it is inverted.
pub const PROPENSITY_CLIP: f64 = 1e-6;

/// Probability of the group the unit belongs to, `π` or `1 - π`, floored at
/// [`PROPENSITY_CLIP`].
#[inline]
pub fn group_probability(pi: f64, d: bool) -> f64 {
    let p = if d { pi } else { 1.0 - pi };
    p.max(PROPENSITY_CLIP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Intercept,
    X,
    XSquared,
    /// Covariate column, 0-based. Written `w1`, `w2`, ... (1-based).
    W(usize),
}

impl Term {
    #[inline]
    fn eval(self, x: f64, w: &[f64]) -> f64 {
        match self {
            Term::Intercept => 1.0,
            Term::X => x,
            Term::XSquared => x * x,
            Term::W(k) => w[k],
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => f.write_str("1"),
            Term::X => f.write_str("x"),
            Term::XSquared => f.write_str("x^2"),
            Term::W(k) => write!(f, "w{}", k + 1),
        }
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(Term::Intercept),
            "x" => Ok(Term::X),
            "x^2" => Ok(Term::XSquared),
            other => other
                .strip_prefix('w')
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(|k| Term::W(k - 1))
                .ok_or_else(|| Error::Domain(format!("unknown feature term `{other}`"))),
        }
    }
}

/// Ordered list of regressors. Serializes as e.g. `["1","x","x^2","w1","w2"]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct FeatureSpec {
    terms: Vec<Term>,
}

impl FeatureSpec {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Domain("feature spec has no terms".into()));
        }
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(Error::Domain(format!("duplicate feature term `{t}`")));
            }
        }
        Ok(Self { terms })
    }

    /// `{1, x, w1, ..., wm}`: the logit index of the simulation design.
    pub fn full_propensity(m: usize) -> Self {
        let mut terms = vec![Term::Intercept, Term::X];
        terms.extend((0..m).map(Term::W));
        Self { terms }
    }

    /// `{1, x, x², w1, ..., wm}`: the outcome mean of the simulation design.
    pub fn full_outcome(m: usize) -> Self {
        let mut terms = vec![Term::Intercept, Term::X, Term::XSquared];
        terms.extend((0..m).map(Term::W));
        Self { terms }
    }

    pub fn intercept_only() -> Self {
        Self {
            terms: vec![Term::Intercept],
        }
    }

    /// Copy with `term` dropped (no-op if absent).
    pub fn without(&self, term: Term) -> Self {
        Self {
            terms: self.terms.iter().copied().filter(|&t| t != term).collect(),
        }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn check_dim(&self, m: usize) -> Result<()> {
        match self.terms.iter().find(|t| matches!(t, Term::W(k) if *k >= m)) {
            Some(t) => Err(Error::Domain(format!(
                "feature `{t}` references a covariate beyond dimension {m}"
            ))),
            None => Ok(()),
        }
    }

    #[inline]
    fn linear_predictor(&self, coef: &[f64], x: f64, w: &[f64]) -> f64 {
        self.terms
            .iter()
            .zip(coef)
            .map(|(t, c)| c * t.eval(x, w))
            .sum()
    }

    fn design_row(&self, x: f64, w: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.terms.iter().map(|t| t.eval(x, w)));
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.terms.iter().map(|t| t.to_string()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for FeatureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let terms = s
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<Term>>>()?;
        Self::new(terms)
    }
}

impl TryFrom<Vec<String>> for FeatureSpec {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v.iter().map(|s| s.parse()).collect::<Result<_>>()?)
    }
}

impl From<FeatureSpec> for Vec<String> {
    fn from(s: FeatureSpec) -> Self {
        s.terms.iter().map(|t| t.to_string()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Logit,
    Probit,
}

impl Link {
    fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Logit => 1.0 / (1.0 + (-eta).exp()),
            Link::Probit => 0.5 * erfc(-eta / std::f64::consts::SQRT_2),
        }
    }
}

/// Which units enter the propensity likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityUnits {
    #[default]
    All,
    /// Only units in the estimation range of the given target.
    EstimationRange(TargetOutcome),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub link: Link,
    pub units: PropensityUnits,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Convergence tolerance on the infinity norm of the parameter step.
    pub step_tol: f64,
    /// Convergence tolerance on the infinity norm of the score divided by the
    /// number of units.
    pub score_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            link: Link::Logit,
            units: PropensityUnits::All,
            max_iter: 100,
            max_halvings: 30,
            step_tol: 1e-10,
            score_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    pub gamma: Vec<f64>,
    pub spec: FeatureSpec,
    pub link: Link,
    pub converged: bool,
    pub iterations: usize,
    /// Infinity norm of the score at the returned estimate.
    pub score_norm: f64,
    pub log_likelihood: f64,
    /// Covariate dimension the fit expects.
    pub dim: usize,
}

impl PropensityFit {
    /// A fit with fixed coefficients, e.g. the true selection model.
    pub fn fixed(gamma: Vec<f64>, spec: FeatureSpec, link: Link, dim: usize) -> Result<Self> {
        if gamma.len() != spec.len() {
            return Err(Error::Domain(format!(
                "{} coefficients for {} terms",
                gamma.len(),
                spec.len()
            )));
        }
        spec.check_dim(dim)?;
        Ok(Self {
            gamma,
            spec,
            link,
            converged: true,
            iterations: 0,
            score_norm: 0.0,
            log_likelihood: f64::NAN,
            dim,
        })
    }

    /// `π(x, w)`.
    pub fn predict(&self, x: f64, w: &[f64]) -> Result<f64> {
        check_len(w, self.dim)?;
        Ok(self.predict_unchecked(x, w))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, x: f64, w: &[f64]) -> f64 {
        let eta = self.spec.linear_predictor(&self.gamma, x, w);
        self.link.inverse(eta)
    }
}

pub fn predict_propensity(fit: &PropensityFit, x: f64, w: &[f64]) -> Result<f64> {
    fit.predict(x, w)
}

fn check_len(w: &[f64], dim: usize) -> Result<()> {
    if w.len() != dim {
        return Err(Error::Domain(format!(
            "covariate vector has length {}, expected {dim}",
            w.len()
        )));
    }
    Ok(())
}

pub fn fit_propensity(dataset: &Dataset, spec: &FeatureSpec) -> Result<PropensityFit> {
    fit_propensity_with(dataset, spec, &NewtonOptions::default())
}

/// Maximum likelihood for the binary group flag by damped Newton iterations
/// (Fisher scoring for the probit link).
pub fn fit_propensity_with(
    dataset: &Dataset,
    spec: &FeatureSpec,
    opts: &NewtonOptions,
) -> Result<PropensityFit> {
    spec.check_dim(dataset.dim())?;
    let t = dataset.thresholds();
    let units: Vec<_> = dataset
        .units()
        .iter()
        .filter(|u| match opts.units {
            PropensityUnits::All => true,
            PropensityUnits::EstimationRange(target) => t.in_range(target, u.x),
        })
        .collect();
    let p = spec.len();
    if units.len() < p {
        return Err(Error::SampleSize {
            needed: p,
            found: units.len(),
        });
    }

    let mut rows = Vec::with_capacity(units.len() * p);
    let mut row = Vec::with_capacity(p);
    for u in &units {
        spec.design_row(u.x, &u.w, &mut row);
        rows.extend_from_slice(&row);
    }
    check_full_rank(DMatrix::from_row_slice(units.len(), p, &rows), "propensity")?;
    let labels: Vec<f64> = units.iter().map(|u| f64::from(u8::from(u.d))).collect();
    let n1 = labels.iter().filter(|&&d| d == 1.0).count();
    if n1 == 0 || n1 == labels.len() {
        let sign = if n1 == 0 { -1.0 } else { 1.0 };
        let direction = spec
            .terms()
            .iter()
            .map(|t| if *t == Term::Intercept { sign } else { 0.0 })
            .collect();
        return Err(Error::Separation { direction });
    }

    let problem = Glm {
        rows: &rows,
        labels: &labels,
        p,
        link: opts.link,
    };
    let score_tol = opts.score_tol * labels.len() as f64;
    let mut gamma = vec![0.0; p];
    let (mut ll, mut score, mut info) = problem.evaluate(&gamma);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let chol = DMatrix::from_row_slice(p, p, &info)
            .cholesky()
            .ok_or_else(|| Error::Rank("propensity information matrix is singular".into()))?;
        let step = chol.solve(&DVector::from_column_slice(&score));

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = gamma.iter().zip(step.iter()).map(|(g, s)| g + scale * s).collect();
            let eval = problem.evaluate(&trial);
            if eval.0 >= ll {
                accepted = Some((trial, eval));
                break;
            }
            scale *= 0.5;
        }
        let Some((trial, eval)) = accepted else {
            // No ascent possible along the Newton direction: at the optimum up to rounding.
            converged = inf_norm(&score) < score_tol;
            break;
        };
        let step_norm = scale * inf_norm(step.as_slice());
        gamma = trial;
        (ll, score, info) = eval;

        if ll > -1e-9 * labels.len() as f64 || inf_norm(&gamma) > 1e8 {
            let norm = gamma.iter().map(|g| g * g).sum::<f64>().sqrt();
            return Err(Error::Separation {
                direction: gamma.iter().map(|g| g / norm).collect(),
            });
        }
        if step_norm < opts.step_tol && inf_norm(&score) < score_tol {
            converged = true;
            break;
        }
    }
    Ok(PropensityFit {
        score_norm: inf_norm(&score),
        gamma,
        spec: spec.clone(),
        link: opts.link,
        converged,
        iterations,
        log_likelihood: ll,
        dim: dataset.dim(),
    })
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Binary-response likelihood pieces on a row-major design.
struct Glm<'a> {
    rows: &'a [f64],
    labels: &'a [f64],
    p: usize,
    link: Link,
}

impl Glm<'_> {
    /// Log-likelihood, score, and (expected) information, row-major.
    fn evaluate(&self, coef: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let p = self.p;
        let mut ll = 0.0;
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        for (row, &d) in self.rows.chunks_exact(p).zip(self.labels) {
            let eta: f64 = row.iter().zip(coef).map(|(a, b)| a * b).sum();
            let (l, resid, weight) = match self.link {
                Link::Logit => {
                    // log(1 + e^eta), stable for large |eta|
                    let softplus = eta.max(0.0) + (-eta.abs()).exp().ln_1p();
                    let mu = 1.0 / (1.0 + (-eta).exp());
                    (d * eta - softplus, d - mu, mu * (1.0 - mu))
                }
                Link::Probit => {
                    let cdf = Link::Probit.inverse(eta).clamp(1e-300, 1.0 - 1e-16);
                    let pdf = (-0.5 * eta * eta).exp() / (2.0 * std::f64::consts::PI).sqrt();
                    let v = cdf * (1.0 - cdf);
                    let l = d * cdf.ln() + (1.0 - d) * (1.0 - cdf).ln();
                    (l, (d - cdf) * pdf / v, pdf * pdf / v)
                }
            };
            ll += l;
            for a in 0..p {
                score[a] += row[a] * resid;
                let wa = weight * row[a];
                for b in a..p {
                    info[a * p + b] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[a * p + b] = info[b * p + a];
            }
        }
        (ll, score, info)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFit {
    pub eta: Vec<f64>,
    pub spec: FeatureSpec,
    pub target: TargetOutcome,
    pub n_used: usize,
    pub dim: usize,
}

impl OutcomeFit {
    pub fn fixed(eta: Vec<f64>, spec: FeatureSpec, target: TargetOutcome, dim: usize) -> Result<Self> {
        if eta.len() != spec.len() {
            return Err(Error::Domain(format!(
                "{} coefficients for {} terms",
                eta.len(),
                spec.len()
            )));
        }
        spec.check_dim(dim)?;
        Ok(Self {
            eta,
            spec,
            target,
            n_used: 0,
            dim,
        })
    }

    /// `δ_j(x, w)`; defined everywhere, including outside the fitting region.
    pub fn predict(&self, x: f64, w: &[f64]) -> Result<f64> {
        check_len(w, self.dim)?;
        Ok(self.predict_unchecked(x, w))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, x: f64, w: &[f64]) -> f64 {
        self.spec.linear_predictor(&self.eta, x, w)
    }
}

pub fn predict_outcome(fit: &OutcomeFit, x: f64, w: &[f64]) -> Result<f64> {
    fit.predict(x, w)
}

/// Ordinary least squares of `y` on the spec's regressors over every unit whose
/// realized outcome is `Y_j`, pooling both groups.
pub fn fit_outcome(dataset: &Dataset, target: TargetOutcome, spec: &FeatureSpec) -> Result<OutcomeFit> {
    spec.check_dim(dataset.dim())?;
    let units: Vec<_> = dataset
        .units()
        .iter()
        .filter(|u| target.observed_when(u.z))
        .collect();
    let p = spec.len();
    if units.len() < p {
        return Err(Error::SampleSize {
            needed: p,
            found: units.len(),
        });
    }
    let mut design = DMatrix::zeros(units.len(), p);
    let mut row = Vec::with_capacity(p);
    for (i, u) in units.iter().enumerate() {
        spec.design_row(u.x, &u.w, &mut row);
        for (j, v) in row.iter().enumerate() {
            design[(i, j)] = *v;
        }
    }
    let mut rhs = DVector::from_iterator(units.len(), units.iter().map(|u| u.y));
    let eta = least_squares(design, &mut rhs)?;
    Ok(OutcomeFit {
        eta,
        spec: spec.clone(),
        target,
        n_used: units.len(),
        dim: dataset.dim(),
    })
}

/// Householder QR of `design`, failing if a column is numerically collinear
/// with the ones before it.
fn check_full_rank(design: DMatrix<f64>, what: &str) -> Result<nalgebra::QR<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let col_norm_max = design
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    let qr = design.qr();
    let r = qr.r();
    for (k, r) in r.diagonal().iter().enumerate() {
        if !(r.abs() > 1e-10 * col_norm_max) {
            return Err(Error::Rank(format!("{what} design column {k} is collinear")));
        }
    }
    Ok(qr)
}

/// Householder least squares; `rhs` is overwritten.
fn least_squares(design: DMatrix<f64>, rhs: &mut DVector<f64>) -> Result<Vec<f64>> {
    let p = design.ncols();
    let qr = check_full_rank(design, "outcome")?;
    let r = qr.r();
    qr.q_tr_mul(rhs);
    let top = rhs.rows(0, p).into_owned();
    let beta = r
        .solve_upper_triangular(&top)
        .ok_or_else(|| Error::Rank("triangular solve failed".into()))?;
    Ok(beta.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Thresholds, UnitRecord};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn th() -> Thresholds {
        Thresholds::new(2.0, 6.0).unwrap()
    }

    #[test]
    fn spec_parsing_and_display() {
        let s: FeatureSpec = "1,x,x^2,w1,w2".parse().unwrap();
        assert_eq!(s, FeatureSpec::full_outcome(2));
        assert_eq!(s.to_string(), "1,x,x^2,w1,w2");
        assert!("1,x,1".parse::<FeatureSpec>().is_err());
        assert!("1,w0".parse::<FeatureSpec>().is_err());
        let json: Vec<String> = s.clone().into();
        assert_eq!(json, ["1", "x", "x^2", "w1", "w2"]);
    }

    #[test]
    fn propensity_predictions() {
        let spec = FeatureSpec::full_propensity(2);
        let zero = PropensityFit::fixed(vec![0.0; 4], spec.clone(), Link::Logit, 2).unwrap();
        assert_eq!(zero.predict(3.0, &[1.0, -2.0]).unwrap(), 0.5);
        let fit = PropensityFit::fixed(vec![0.8, 0.5, 2.0, -0.8], spec.clone(), Link::Logit, 2).unwrap();
        let oracle = 1.0 / (1.0 + (-0.8f64).exp());
        assert_relative_eq!(fit.predict(0.0, &[0.0, 0.0]).unwrap(), oracle, epsilon = 1e-15);
        assert_relative_eq!(oracle, 0.689_974_481_127_612_8, epsilon = 1e-15);
        let big = PropensityFit::fixed(vec![50.0, 0.0, 0.0, 0.0], spec, Link::Logit, 2).unwrap();
        assert_eq!(big.predict(0.0, &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(group_probability(1.0, true), 1.0);
        assert_eq!(group_probability(1.0, false), PROPENSITY_CLIP);
        assert!(big.predict(0.0, &[0.0]).is_err());
    }

    #[test]
    fn outcome_predictions() {
        let spec = FeatureSpec::full_outcome(2);
        let zero = OutcomeFit::fixed(vec![0.0; 5], spec.clone(), TargetOutcome::Y1, 2).unwrap();
        assert_eq!(zero.predict(4.0, &[1.0, 1.0]).unwrap(), 0.0);
        let line: FeatureSpec = "1,x".parse().unwrap();
        let f = OutcomeFit::fixed(vec![1.0, 2.0], line, TargetOutcome::Y0, 0).unwrap();
        assert_eq!(f.predict(3.0, &[]).unwrap(), 7.0);
        let truth = OutcomeFit::fixed(vec![80.0, -2.0, 2.0, 40.0, 48.0], spec, TargetOutcome::Y1, 2).unwrap();
        assert_relative_eq!(truth.predict(4.0, &[0.9, 4.0]).unwrap(), 332.0, epsilon = 1e-12);
        assert!(truth.predict(4.0, &[0.9]).is_err());
    }

    fn random_dataset(n: usize, seed: u64, mean_d: f64) -> Dataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let t = th();
        let units = (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..8.0);
                let w = vec![rng.random_range(-1.0..1.0)];
                let d = rng.random_bool(mean_d);
                let y = 1.0 + 2.0 * x;
                UnitRecord::derived(x, w, d, y, &t)
            })
            .collect();
        Dataset::new(units, t, vec!["w1".into()]).unwrap()
    }

    #[test]
    fn intercept_only_recovers_logit_of_mean() {
        let ds = random_dataset(4000, 3, 0.5);
        let fit = fit_propensity(&ds, &FeatureSpec::intercept_only()).unwrap();
        let mean = ds.units().iter().filter(|u| u.d).count() as f64 / ds.len() as f64;
        assert!(fit.converged);
        assert_relative_eq!(fit.gamma[0], (mean / (1.0 - mean)).ln(), epsilon = 1e-9);
        assert!(fit.gamma[0].abs() < 0.1);
    }

    #[test]
    fn newton_converges_with_small_score() {
        let ds = random_dataset(3000, 11, 0.3);
        for link in [Link::Logit, Link::Probit] {
            let opts = NewtonOptions {
                link,
                ..Default::default()
            };
            let fit = fit_propensity_with(&ds, &FeatureSpec::full_propensity(1), &opts).unwrap();
            assert!(fit.converged, "{link:?}");
            assert!(fit.iterations < 25, "{link:?}: {} iterations", fit.iterations);
            assert!(fit.score_norm < 1e-8 * 3000.0, "{link:?}: {}", fit.score_norm);
        }
    }

    #[test]
    fn all_one_group_is_separation() {
        let ds = random_dataset(50, 1, 1.0);
        match fit_propensity(&ds, &FeatureSpec::full_propensity(1)) {
            Err(Error::Separation { direction }) => assert_eq!(direction, vec![1.0, 0.0, 0.0]),
            other => panic!("expected separation, got {other:?}"),
        }
    }

    #[test]
    fn complete_separation_on_x_is_detected() {
        let t = th();
        let units = (0..40)
            .map(|i| {
                let x = i as f64 * 0.2;
                UnitRecord::derived(x, vec![], x > 4.0, 0.0, &t)
            })
            .collect();
        let ds = Dataset::new(units, t, vec![]).unwrap();
        let err = fit_propensity(&ds, &"1,x".parse().unwrap()).unwrap_err();
        match err {
            Error::Separation { direction } => assert!(direction[1] > 0.0),
            other => panic!("expected separation, got {other:?}"),
        }
    }

    #[test]
    fn collinear_propensity_design_is_rank_error() {
        let ds = random_dataset(200, 5, 0.5);
        let spec = FeatureSpec::new(vec![Term::Intercept, Term::X, Term::W(0)]).unwrap();
        assert!(fit_propensity(&ds, &spec).is_ok());
        // x and x*1 duplicate only through data: build a dataset whose w equals x.
        let t = th();
        let units = ds
            .units()
            .iter()
            .map(|u| UnitRecord::derived(u.x, vec![u.x], u.d, u.y, &t))
            .collect();
        let dup = Dataset::new(units, t, vec!["w1".into()]).unwrap();
        assert!(matches!(fit_propensity(&dup, &spec), Err(Error::Rank(_))));
        assert!(matches!(
            fit_outcome(&dup, TargetOutcome::Y0, &spec),
            Err(Error::Rank(_))
        ));
    }

    #[test]
    fn ols_interpolates_exact_line() {
        let ds = random_dataset(100, 2, 0.5);
        let fit = fit_outcome(&ds, TargetOutcome::Y0, &"1,x".parse().unwrap()).unwrap();
        assert_relative_eq!(fit.eta[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(fit.eta[1], 2.0, epsilon = 1e-10);
        assert_eq!(
            fit.n_used,
            ds.units().iter().filter(|u| !u.z).count()
        );
    }

    #[test]
    fn ols_sample_size_error() {
        let t = th();
        let units = vec![
            UnitRecord::derived(1.0, vec![], false, 1.0, &t),
            UnitRecord::derived(7.0, vec![], true, 1.0, &t),
        ];
        let ds = Dataset::new(units, t, vec![]).unwrap();
        assert!(matches!(
            fit_outcome(&ds, TargetOutcome::Y0, &"1,x".parse().unwrap()),
            Err(Error::SampleSize { needed: 2, found: 1 })
        ));
    }

    #[test]
    fn ols_residuals_orthogonal_to_design() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let t = th();
        let units = (0..500)
            .map(|_| {
                let x: f64 = rng.random_range(-1.0..9.0);
                let w = vec![rng.random_range(-3.0..3.0), rng.random_range(0.0..10.0)];
                let y = 3.0 - x * x + 4.0 * w[0] + rng.random_range(-5.0..5.0);
                UnitRecord::derived(x, w, rng.random_bool(0.4), y, &t)
            })
            .collect();
        let ds = Dataset::new(units, t, vec!["w1".into(), "w2".into()]).unwrap();
        let spec = FeatureSpec::full_outcome(2);
        let fit = fit_outcome(&ds, TargetOutcome::Y1, &spec).unwrap();
        let used: Vec<_> = ds.units().iter().filter(|u| u.z).collect();
        for (k, term) in spec.terms().iter().enumerate() {
            let col: Vec<f64> = used.iter().map(|u| term.eval(u.x, &u.w)).collect();
            let resid: Vec<f64> = used
                .iter()
                .map(|u| u.y - fit.predict(u.x, &u.w).unwrap())
                .collect();
            let dot: f64 = col.iter().zip(&resid).map(|(a, b)| a * b).sum();
            let scale = col.iter().map(|a| a * a).sum::<f64>().sqrt()
                * used.iter().map(|u| u.y * u.y).sum::<f64>().sqrt();
            assert!(dot.abs() <= 1e-8 * scale, "term {k}: {dot}");
        }
    }

    #[test]
    fn dropping_a_term_equals_dropping_the_column() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let t = th();
        let units = (0..400)
            .map(|_| {
                let x: f64 = rng.random_range(-1.0..9.0);
                let w = vec![rng.random_range(-3.0..3.0), rng.random_range(0.0..10.0)];
                let d = rng.random_bool(1.0 / (1.0 + (-(0.3 * x - 1.0 + 0.5 * w[0])).exp()));
                let y = x + w[1];
                UnitRecord::derived(x, w, d, y, &t)
            })
            .collect();
        let ds = Dataset::new(units, t, vec!["w1".into(), "w2".into()]).unwrap();
        let reduced = ds.without_covariate(0);

        let p_full = FeatureSpec::full_propensity(2).without(Term::W(0));
        let p_reduced: FeatureSpec = "1,x,w1".parse().unwrap();
        let a = fit_propensity(&ds, &p_full).unwrap();
        let b = fit_propensity(&reduced, &p_reduced).unwrap();
        for (x, y) in a.gamma.iter().zip(&b.gamma) {
            assert!((x - y).abs() <= 1e-10);
        }

        let o_full = FeatureSpec::full_outcome(2).without(Term::W(0));
        let o_reduced: FeatureSpec = "1,x,x^2,w1".parse().unwrap();
        let a = fit_outcome(&ds, TargetOutcome::Y0, &o_full).unwrap();
        let b = fit_outcome(&reduced, TargetOutcome::Y0, &o_reduced).unwrap();
        for (x, y) in a.eta.iter().zip(&b.eta) {
            assert!((x - y).abs() <= 1e-10);
        }
    }
}
