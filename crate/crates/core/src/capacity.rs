//! Determination ratio and the analytic train/test error laws.
//!
//! With `M` outputs, `K` training samples and `P` parameters the fit is an
//! equation system of `M·K` equations in `P` unknowns. Its determination
//! ratio is `Q = M·K / P`. For additive noise of variance `σ²`:
//!
//! * training MSE `σ²·(1 − 1/Q)` for `Q ≥ 1`, and `0` for `Q ≤ 1`
//!   (the system interpolates its targets);
//! * test MSE `σ²·(c/Q + 1)` for a problem-dependent constant `c ≥ 0`.
//!
//! Both converge to `σ²` as `Q` grows.

use std::fmt;

use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CapacityError {
    #[error("{field} must be a positive integer")]
    NonPositive { field: &'static str },
    #[error("noise fit fraction is undefined for Q = {q} < 1 (underdetermined)")]
    Underdetermined { q: f64 },
    #[error("invalid theory parameters: {0}")]
    Theory(String),
    #[error("Q grid must be positive and strictly ascending")]
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterminationInputs {
    /// Output count (classes).
    pub m: u64,
    /// Training-sample count.
    pub k: u64,
    /// Parameter count.
    pub p: u64,
}

/// Exact `M·K/P` in lowest terms.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeterminationRatio(Ratio<u128>);

impl DeterminationRatio {
    pub fn exact(&self) -> Ratio<u128> {
        self.0
    }

    pub fn numer(&self) -> u128 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u128 {
        *self.0.denom()
    }

    pub fn value(&self) -> f64 {
        self.0.to_f64().expect("finite ratio")
    }

    /// True when `Q·P == M·K` holds exactly.
    pub fn consistent_with(&self, inp: &DeterminationInputs) -> bool {
        self.0 * Ratio::from_integer(inp.p as u128) == Ratio::from_integer(inp.m as u128 * inp.k as u128)
    }
}

impl fmt::Debug for DeterminationRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q({}/{})", self.numer(), self.denom())
    }
}

impl fmt::Display for DeterminationRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.value())
    }
}

pub fn determination_ratio(inp: &DeterminationInputs) -> Result<DeterminationRatio, CapacityError> {
    for (field, v) in [("M", inp.m), ("K", inp.k), ("P", inp.p)] {
        if v == 0 {
            return Err(CapacityError::NonPositive { field });
        }
    }
    Ok(DeterminationRatio(Ratio::new(
        inp.m as u128 * inp.k as u128,
        inp.p as u128,
    )))
}

/// Share of the training noise absorbed by the fit, `1/Q`.
pub fn noise_fit_fraction(q: f64) -> Result<f64, CapacityError> {
    if q.is_nan() || q < 1.0 {
        return Err(CapacityError::Underdetermined { q });
    }
    Ok(1.0 / q)
}

/// Exact `1/Q`.
pub fn noise_fit_fraction_exact(q: &DeterminationRatio) -> Result<Ratio<u128>, CapacityError> {
    if q.0 < Ratio::from_integer(1) {
        return Err(CapacityError::Underdetermined { q: q.value() });
    }
    Ok(q.0.recip())
}

pub fn train_mse_theory(q: f64, noise_variance: f64) -> f64 {
    if q <= 1.0 {
        0.0
    } else {
        noise_variance * (1.0 - 1.0 / q)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryParams {
    /// `σ² > 0`.
    pub noise_variance: f64,
    /// Lumped test-error constant, `≥ 0`.
    pub c: f64,
}

impl Default for TheoryParams {
    fn default() -> Self {
        Self {
            noise_variance: 1.0,
            c: 1.0,
        }
    }
}

impl TheoryParams {
    pub fn validate(&self) -> Result<(), CapacityError> {
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(CapacityError::Theory(format!(
                "noise variance must be positive, got {}",
                self.noise_variance
            )));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(CapacityError::Theory(format!("c must be non-negative, got {}", self.c)));
        }
        Ok(())
    }
}

pub fn test_mse_theory(q: f64, params: &TheoryParams) -> f64 {
    params.noise_variance * (params.c / q + 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub q: f64,
    pub train: f64,
    pub test: f64,
}

pub fn curve_sweep(q_grid: &[f64], params: &TheoryParams) -> Result<Vec<CurvePoint>, CapacityError> {
    params.validate()?;
    let ascending = q_grid.windows(2).all(|w| w[0] < w[1]);
    if q_grid.is_empty() || !ascending || !q_grid.iter().all(|&q| q > 0.0 && q.is_finite()) {
        return Err(CapacityError::Grid);
    }
    Ok(q_grid
        .iter()
        .map(|&q| CurvePoint {
            q,
            train: train_mse_theory(q, params.noise_variance),
            test: test_mse_theory(q, params),
        })
        .collect())
}

/// `count` points `start·factor^i`.
pub fn geometric_grid(start: f64, factor: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start * factor.powi(i as i32)).collect()
}
