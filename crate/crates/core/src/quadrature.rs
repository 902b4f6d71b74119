//! Adaptive Gauss-Kronrod quadrature.
//!
//! Finite intervals use a globally adaptive G7/K15 rule: the interval with the
//! largest error estimate is bisected until the summed estimate meets the
//! tolerance. Integrals reaching down to 0 or out to infinity are split into
//! dyadic pieces, each integrated adaptively, and summed until the pieces
//! become negligible. An integrable algebraic singularity at 0 is handled by
//! the dyadic split without any change of variables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// Published 30-digit values, kept as printed.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_INTERVALS: usize = 4000;
const MAX_DYADIC_PIECES: usize = 1100;

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub fn relative(rel: f64) -> Self {
        Self { abs: 0.0, rel }
    }

    fn target(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-300, rel: 1e-12 }
    }
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let dx = half * XGK[k];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[k] * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err.total_cmp(&other.err) == Ordering::Equal
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Integrates `f` over the finite interval `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Quadrature(format!("non-finite bounds [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate(f, b, a, tol).map(|v| -v);
    }

    let (value, err) = kronrod15(&f, a, b);
    let mut total = value;
    let mut total_err = err;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, err });

    while total_err > tol.target(total) {
        if !total.is_finite() {
            return Err(Error::Quadrature(format!(
                "non-finite integrand on [{a}, {b}]"
            )));
        }
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature(format!(
                "interval limit reached on [{a}, {b}] with error estimate {total_err:e}"
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            return Err(Error::Quadrature(format!(
                "subinterval underflow near {mid:e}"
            )));
        }
        let (lv, le) = kronrod15(&f, worst.a, mid);
        let (rv, re) = kronrod15(&f, mid, worst.b);
        total += lv + rv - worst.value;
        total_err += le + re - worst.err;
        heap.push(Segment { a: worst.a, b: mid, value: lv, err: le });
        heap.push(Segment { a: mid, b: worst.b, value: rv, err: re });
    }

    // Re-sum to shed the cancellation accumulated by the running updates.
    let sum: f64 = heap.iter().map(|s| s.value).sum();
    if !sum.is_finite() {
        return Err(Error::Quadrature(format!("non-finite result on [{a}, {b}]")));
    }
    Ok(sum)
}

fn dyadic_sum<F, P>(f: &F, piece: P, tol: Tolerance, what: &str) -> Result<f64>
where
    F: Fn(f64) -> f64,
    P: Fn(usize) -> (f64, f64),
{
    let mut total = 0.0;
    let mut quiet = 0;
    for k in 0..MAX_DYADIC_PIECES {
        let (lo, hi) = piece(k);
        if !(lo > 0.0 && hi.is_finite() && lo < hi) {
            break;
        }
        let part = integrate(f, lo, hi, tol).map_err(|e| match e {
            Error::Quadrature(msg) => Error::Divergence(format!("{what}: {msg}")),
            other => other,
        })?;
        total += part;
        if part.abs() <= 1e-3 * tol.rel * total.abs() || part.abs() <= tol.abs {
            quiet += 1;
        } else {
            quiet = 0;
        }
        if k >= 8 && quiet >= 4 {
            return Ok(total);
        }
    }
    Err(Error::Divergence(format!(
        "{what}: dyadic pieces did not decay"
    )))
}

/// Integrates `f` over `(0, b]`, allowing an integrable singularity at 0.
pub fn integrate_from_zero<F: Fn(f64) -> f64>(f: F, b: f64, tol: Tolerance) -> Result<f64> {
    if b <= 0.0 {
        return Err(Error::Domain(format!("upper bound must be positive, got {b}")));
    }
    dyadic_sum(
        &f,
        |k| {
            let hi = b * (-(k as f64)).exp2();
            (0.5 * hi, hi)
        },
        tol,
        "integral near 0",
    )
}

/// Integrates `f` over `[a, inf)` for `a > 0`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, tol: Tolerance) -> Result<f64> {
    if a <= 0.0 {
        return Err(Error::Domain(format!("lower bound must be positive, got {a}")));
    }
    dyadic_sum(
        &f,
        |k| {
            let lo = a * (k as f64).exp2();
            (lo, 2.0 * lo)
        },
        tol,
        "integral at infinity",
    )
}

/// Integrates `f` over the half line `(0, inf)`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, tol: Tolerance) -> Result<f64> {
    Ok(integrate_from_zero(&f, 1.0, tol)? + integrate_to_infinity(&f, 1.0, tol)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, Tolerance::default()).unwrap();
        assert!((v - 0.0).abs() < 1e-14);
        let v = integrate(|x| x * x, 1.0, 4.0, Tolerance::default()).unwrap();
        assert!((v - 21.0).abs() < 1e-13);
    }

    #[test]
    fn reversed_bounds_flip_sign() {
        let v = integrate(|x| x.exp(), 1.0, 0.0, Tolerance::default()).unwrap();
        assert!((v + (1f64.exp() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn singular_endpoint() {
        let v = integrate_from_zero(|x| x.powf(-0.5), 1.0, Tolerance::relative(1e-12)).unwrap();
        assert!((v - 2.0).abs() < 1e-11, "{v}");
    }

    #[test]
    fn gamma_half() {
        let v = integrate_half_line(|x| x.powf(-0.5) * (-x).exp(), Tolerance::relative(1e-12))
            .unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-11, "{v}");
    }

    #[test]
    fn divergent_integral_is_reported() {
        let r = integrate_from_zero(|x| x.powf(-1.2), 1.0, Tolerance::relative(1e-10));
        assert!(matches!(r, Err(Error::Divergence(_))), "{r:?}");
    }
}
