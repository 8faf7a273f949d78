use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Grid;

/// The two unstable benchmarks.
///
/// * `Hyperbolic`: `u_t = u_x + β(x) u(0,t)`, actuated at `u(1,t) = U(t)`.
/// * `Parabolic`: `u_t = u_xx + λ(x) u`, with `u(0,t) = 0` and `u(1,t) = U(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkKind {
    Hyperbolic,
    Parabolic,
}

impl BenchmarkKind {
    /// Amplitude `A` of the Chebyshev-form coefficient `A cos(γ arccos x)`.
    pub fn amplitude(self) -> f64 {
        match self {
            BenchmarkKind::Hyperbolic => 5.0,
            BenchmarkKind::Parabolic => 50.0,
        }
    }

    /// Range γ is drawn from when generating imitation data.
    pub fn gamma_range(self) -> (f64, f64) {
        match self {
            BenchmarkKind::Hyperbolic => (5.5, 7.0),
            BenchmarkKind::Parabolic => (8.0, 12.0),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            BenchmarkKind::Hyperbolic => 0,
            BenchmarkKind::Parabolic => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(BenchmarkKind::Hyperbolic),
            1 => Some(BenchmarkKind::Parabolic),
            _ => None,
        }
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchmarkKind::Hyperbolic => f.write_str("hyperbolic"),
            BenchmarkKind::Parabolic => f.write_str("parabolic"),
        }
    }
}

impl FromStr for BenchmarkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperbolic" => Ok(BenchmarkKind::Hyperbolic),
            "parabolic" => Ok(BenchmarkKind::Parabolic),
            other => Err(Error::Config(format!("unknown benchmark kind {other:?}"))),
        }
    }
}

/// Spatially varying plant coefficient (β for the hyperbolic plant, λ for the
/// parabolic one) sampled on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientFn {
    kind: BenchmarkKind,
    gamma: Option<f64>,
    samples: Vec<f64>,
}

impl CoefficientFn {
    pub fn kind(&self) -> BenchmarkKind {
        self.kind
    }

    /// Chebyshev parameter, `None` for tabulated coefficients.
    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn from_samples(kind: BenchmarkKind, samples: Vec<f64>) -> Result<Self> {
        if samples.len() < 3 || samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coefficient needs at least 3 finite samples"));
        }
        Ok(CoefficientFn {
            kind,
            gamma: None,
            samples,
        })
    }

    pub fn constant(kind: BenchmarkKind, value: f64, grid: &Grid) -> Self {
        CoefficientFn {
            kind,
            gamma: None,
            samples: vec![value; grid.n_points()],
        }
    }
}

/// Samples `A cos(γ arccos x)` on the grid.
pub fn sample_coefficient(kind: BenchmarkKind, gamma: f64, grid: &Grid) -> Result<CoefficientFn> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("γ must be positive, got {gamma}")));
    }
    let amp = kind.amplitude();
    let samples = (0..grid.n_points())
        .map(|i| amp * (gamma * grid.x(i).clamp(-1.0, 1.0).acos()).cos())
        .collect();
    Ok(CoefficientFn {
        kind,
        gamma: Some(gamma),
        samples,
    })
}
