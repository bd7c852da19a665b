use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pair of approximation weights `(i, j)` with `i, j > 0` and `i + j = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    i: f64,
    j: f64,
}

const SUM_TOLERANCE: f64 = 1e-12;

impl Weights {
    pub fn new(i: f64, j: f64) -> Result<Self> {
        if !(i.is_finite() && j.is_finite()) || i <= 0.0 || j <= 0.0 {
            return Err(Error::param(format!(
                "weights must satisfy i > 0 and j > 0 (got i={i}, j={j})"
            )));
        }
        if (i + j - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::param(format!(
                "weights must satisfy i + j = 1 (got i={i}, j={j}, i+j={})",
                i + j
            )));
        }
        Ok(Weights { i, j })
    }

    pub fn symmetric() -> Self {
        Weights { i: 0.5, j: 0.5 }
    }

    pub fn i(&self) -> f64 {
        self.i
    }

    pub fn j(&self) -> f64 {
        self.j
    }

    /// Weight of coordinate `t` (0 or 1).
    pub fn get(&self, t: usize) -> f64 {
        if t == 0 {
            self.i
        } else {
            self.j
        }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.i, self.j]
    }

    pub fn min(&self) -> f64 {
        self.i.min(self.j)
    }

    pub fn max(&self) -> f64 {
        self.i.max(self.j)
    }

    pub fn swapped(&self) -> Self {
        Weights {
            i: self.j,
            j: self.i,
        }
    }

    /// `a^* = 2^{-1/max{i,j}}`.
    pub fn a_upper(&self) -> f64 {
        (-1.0 / self.max()).exp2()
    }

    /// `a_* = 2^{-1/min{i,j}}`.
    pub fn a_lower(&self) -> f64 {
        (-1.0 / self.min()).exp2()
    }

    /// Weighted size `max{d1^(1/i), d2^(1/j)}` of a pair of distances.
    pub fn weighted_max(&self, d: [f64; 2]) -> f64 {
        d[0].powf(1.0 / self.i).max(d[1].powf(1.0 / self.j))
    }
}
