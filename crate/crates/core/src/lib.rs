//! Sequential testing and quickest detection for one-dimensional diffusions.
//!
//! The observed process `X` has drift `mu0` or `mu1` and volatility `sigma`;
//! the posterior probability ratio `Phi` and `X` together form a degenerate
//! two-dimensional diffusion driven by one Brownian motion. This crate
//! simulates that pair, solves the associated optimal stopping problems on
//! tensor grids, extracts the stopping boundaries and checks the
//! monotonicity of those boundaries in `x` when the signal-to-noise ratio is
//! monotone.
//!
//! Modules:
//! * [`model`]: coefficients, derived quantities, transforms, catalog.
//! * [`sde`]: path simulation (ratio process, likelihood, clocks, canonical pair).
//! * [`solver`]: value functions, stopping regions, boundaries, oracles.
//! * [`conjecture`]: boundary and value monotonicity checks.
//! * [`trap`]: trap curves, Hörmander scan, perturbation of traps.

pub mod conjecture;
pub mod error;
pub mod expr;
pub mod jet;
pub mod model;
pub mod quad;
pub mod sde;
pub mod solver;
pub mod trap;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};
pub use model::{DiffusionModel, Params};

/// Which stopping problem is meant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Sequential testing of two drifts.
    Testing,
    /// Sequential testing after the additive-functional time change.
    TestingTimeChanged,
    /// Quickest detection of a change of drift.
    Detection,
}

impl Mode {
    pub fn is_testing(self) -> bool {
        !matches!(self, Mode::Detection)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Testing => "testing",
            Mode::TestingTimeChanged => "testing-timechanged",
            Mode::Detection => "detection",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "testing" | "st" => Ok(Mode::Testing),
            "testing-timechanged" | "st-tc" => Ok(Mode::TestingTimeChanged),
            "detection" | "qd" => Ok(Mode::Detection),
            _ => Err(Error::Config(format!("unknown mode '{s}'"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
