//! Local linear estimation of potential-outcome curves in a regression
//! discontinuity design with two groups facing different thresholds.
//!
//! Between the thresholds one group is treated and the other is not, so both
//! curves are identified there. `rdmc` estimates them with naive, inverse
//! probability weighted, and doubly robust local linear fits. It also provides
//! cross-validated bandwidths, pointwise variances, threshold optimisation,
//! and a simulation benchmark.
//!
//! ```
//! use rdmc::prelude::*;
//!
//! let config = SimConfig { n: 400, ..SimConfig::default() };
//! let ds = generate(&config, 7).unwrap();
//! let pfit = fit_propensity(&ds, &FeatureSpec::full_propensity(ds.dim())).unwrap();
//! let ofit = fit_outcome(&ds, TargetOutcome::Y0, &FeatureSpec::full_outcome(ds.dim())).unwrap();
//! let grid = linspace(2.5, 5.5, 7);
//! let curve = estimate_curve(
//!     &ds,
//!     TargetOutcome::Y0,
//!     EstimatorMethod::dr(),
//!     1.0,
//!     Nuisance::both(&pfit, &ofit),
//!     &grid,
//!     KernelSpec::Epanechnikov,
//! )
//! .unwrap();
//! assert_eq!(curve.len(), 7);
//! ```

pub mod bandwidth;
pub mod data;
pub mod error;
pub mod inference;
pub mod io;
pub mod kernels;
pub mod llr;
pub mod nuisance;
pub mod simulation;
pub mod threshold;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::bandwidth::{select_bandwidth, BandwidthSearch, BandwidthSelection};
    pub use crate::data::{Dataset, Schema, TargetOutcome, Thresholds, UnitRecord};
    pub use crate::error::{Error, Result};
    pub use crate::inference::{
        confidence_band, dr_variance, effect_curve, kde_fit, AnalyticDensity, Density,
        EffectCurve, KernelDensity,
    };
    pub use crate::kernels::KernelSpec;
    pub use crate::llr::{
        estimate_curve, linspace, loo_estimate, Curve, EstimatorMethod, MethodKind, Nuisance,
    };
    pub use crate::nuisance::{fit_outcome, fit_propensity, FeatureSpec, OutcomeFit, PropensityFit, Term};
    pub use crate::simulation::{generate, run_benchmark, true_curve, BenchCell, BenchOptions, SimConfig};
    pub use crate::threshold::{optimize_threshold, BoundaryFlag, CostSpec, ThresholdResult};
}
