//! Initial number densities.

use crate::error::{Error, Result};
use crate::quadrature::{integrate_half_line, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialData {
    Zero,
    /// `amplitude * exp(-rate * y)`.
    Exponential { amplitude: f64, rate: f64 },
    /// `amplitude * y^exponent * exp(-rate * y)`.
    PowerExponential { amplitude: f64, exponent: f64, rate: f64 },
}

impl InitialData {
    pub fn unit_exponential() -> Self {
        InitialData::Exponential { amplitude: 1.0, rate: 1.0 }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            InitialData::Zero => "zero",
            InitialData::Exponential { .. } => "exponential",
            InitialData::PowerExponential { .. } => "power-exponential",
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            InitialData::Zero => 0.0,
            InitialData::Exponential { amplitude, rate } => amplitude * (-rate * y).exp(),
            InitialData::PowerExponential { amplitude, exponent, rate } => {
                amplitude * y.powf(exponent) * (-rate * y).exp()
            }
        }
    }

    /// Checks that the datum is nonnegative and lies in `L^1` with weight
    /// `y^(-2 beta) + y`.
    pub fn validate(&self, beta: f64) -> Result<()> {
        match *self {
            InitialData::Zero => Ok(()),
            InitialData::Exponential { amplitude, rate } => {
                if !(amplitude >= 0.0 && amplitude.is_finite() && rate > 0.0 && rate.is_finite()) {
                    return Err(Error::Construction(format!(
                        "exponential datum needs amplitude >= 0 and rate > 0, got {amplitude}, {rate}"
                    )));
                }
                Ok(())
            }
            InitialData::PowerExponential { amplitude, exponent, rate } => {
                if !(amplitude >= 0.0 && amplitude.is_finite() && rate > 0.0 && rate.is_finite()) {
                    return Err(Error::Construction(format!(
                        "power-exponential datum needs amplitude >= 0 and rate > 0, got {amplitude}, {rate}"
                    )));
                }
                if exponent - 2.0 * beta <= -1.0 {
                    return Err(Error::Construction(format!(
                        "y^{exponent} is not integrable against y^(-2 beta) with beta = {beta}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// `int_0^inf (y^(-2 beta) + y) g(y) dy`.
    pub fn weighted_norm(&self, beta: f64) -> Result<f64> {
        if let InitialData::Zero = self {
            return Ok(0.0);
        }
        integrate_half_line(
            |y| (y.powf(-2.0 * beta) + y) * self.eval(y),
            Tolerance { abs: 1e-300, rel: 1e-12 },
        )
    }
}
