//! Second-order kernels and the constants entering the asymptotic bias and
//! variance of local linear estimators.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSpec {
    #[default]
    Epanechnikov,
    Gaussian,
    Triangular,
}

/// `c2 = ∫ s² K(s) ds` and roughness `r = ∫ K(s)² ds`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConstants {
    pub c2: f64,
    pub r: f64,
}

/// `|u|` beyond which the Gaussian density underflows to exactly zero in f64.
const GAUSSIAN_CUTOFF: f64 = 39.0;

impl KernelSpec {
    pub const ALL: [KernelSpec; 3] = [
        KernelSpec::Epanechnikov,
        KernelSpec::Gaussian,
        KernelSpec::Triangular,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelSpec::Epanechnikov => "epanechnikov",
            KernelSpec::Gaussian => "gaussian",
            KernelSpec::Triangular => "triangular",
        }
    }

    /// `K(u)`.
    #[inline]
    pub fn value(self, u: f64) -> f64 {
        match self {
            KernelSpec::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            KernelSpec::Gaussian => (-0.5 * u * u).exp() / (2.0 * PI).sqrt(),
            KernelSpec::Triangular => (1.0 - u.abs()).max(0.0),
        }
    }

    /// Radius in kernel units outside of which `K` is exactly zero.
    pub fn support_radius(self) -> f64 {
        match self {
            KernelSpec::Epanechnikov | KernelSpec::Triangular => 1.0,
            KernelSpec::Gaussian => GAUSSIAN_CUTOFF,
        }
    }

    pub fn is_compact(self) -> bool {
        !matches!(self, KernelSpec::Gaussian)
    }

    /// Closed forms, checked against quadrature in the tests below.
    pub fn constants(self) -> KernelConstants {
        match self {
            KernelSpec::Epanechnikov => KernelConstants { c2: 0.2, r: 0.6 },
            KernelSpec::Gaussian => KernelConstants {
                c2: 1.0,
                r: 1.0 / (2.0 * PI.sqrt()),
            },
            KernelSpec::Triangular => KernelConstants {
                c2: 1.0 / 6.0,
                r: 2.0 / 3.0,
            },
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelSpec::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown kernel `{s}`")))
    }
}

pub fn kernel_value(spec: KernelSpec, u: f64) -> f64 {
    spec.value(u)
}

/// `K_h(diff) = K(diff / h) / h`.
pub fn scaled_kernel_weight(spec: KernelSpec, diff: f64, h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    Ok(spec.value(diff / h) / h)
}

pub fn kernel_constants(spec: KernelSpec) -> KernelConstants {
    spec.constants()
}

pub(crate) fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("bandwidth must be positive, got {h}")))
    }
}
