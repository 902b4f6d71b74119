//! Coagulation rates, the power-law breakage family, selection rates and
//! their truncated versions.
//!
//! Every builtin coagulation family carries an envelope `(k1, beta)` with
//! `A(y, z) <= k1 (1 + y + z) / (y z)^beta`, `beta` in `[0, 1/2)`. The
//! breakage density is `b(y|z) = (nu + 2) y^nu / z^(1 + nu)` on `y < z` with
//! `nu` in `(-1, 0]`, and the selection rate is `S(y) = k2 y^(1 + nu)`.

use std::fmt;

use crate::error::{Error, Result};

/// Coagulation rate families addressable from config files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    /// `A = k1`.
    Constant,
    /// `A = k1 (1 + y + z) / (y z)^beta`.
    SingularAffine { beta: f64 },
    /// `A = k1 (y^(1/3) + z^(1/3)) (y^(-1/3) + z^(-1/3))`.
    Brownian,
    /// `A = k1 (y + z)^a / (y z)^b`.
    Granulation { a: f64, b: f64 },
}

impl KernelFamily {
    pub const NAMES: [&'static str; 4] = ["constant", "singular-affine", "brownian", "granulation"];

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Constant => "constant",
            KernelFamily::SingularAffine { .. } => "singular-affine",
            KernelFamily::Brownian => "brownian",
            KernelFamily::Granulation { .. } => "granulation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    scale: f64,
}

fn check_scale(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::Construction(format!("{name} must be finite and >= 0, got {v}")));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..0.5).contains(&beta) {
        return Err(Error::Construction(format!("beta must lie in [0, 1/2), got {beta}")));
    }
    Ok(())
}

impl KernelSpec {
    pub fn new(family: KernelFamily, scale: f64) -> Result<Self> {
        check_scale("k1", scale)?;
        match family {
            KernelFamily::Constant | KernelFamily::Brownian => {}
            KernelFamily::SingularAffine { beta } => check_beta(beta)?,
            KernelFamily::Granulation { a, b } => {
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::Construction(format!(
                        "granulation exponent a must lie in [0, 1], got {a}"
                    )));
                }
                check_beta(b)?;
            }
        }
        Ok(Self { family, scale })
    }

    pub fn constant(k1: f64) -> Result<Self> {
        Self::new(KernelFamily::Constant, k1)
    }

    pub fn singular_affine(k1: f64, beta: f64) -> Result<Self> {
        Self::new(KernelFamily::SingularAffine { beta }, k1)
    }

    pub fn brownian(k1: f64) -> Result<Self> {
        Self::new(KernelFamily::Brownian, k1)
    }

    pub fn granulation(k1: f64, a: f64, b: f64) -> Result<Self> {
        Self::new(KernelFamily::Granulation { a, b }, k1)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// Multiplicative scale of the rate.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Envelope constant `k1` such that `A(y,z) <= k1 (1+y+z)/(yz)^beta`.
    pub fn envelope_k1(&self) -> f64 {
        match self.family {
            KernelFamily::Brownian => 4.0 * self.scale,
            _ => self.scale,
        }
    }

    /// Envelope singularity exponent `beta`.
    pub fn beta(&self) -> f64 {
        match self.family {
            KernelFamily::Constant => 0.0,
            KernelFamily::SingularAffine { beta } => beta,
            KernelFamily::Brownian => 1.0 / 3.0,
            KernelFamily::Granulation { b, .. } => b,
        }
    }

    /// Envelope value `k1 (1 + y + z) / (y z)^beta`.
    pub fn envelope(&self, y: f64, z: f64) -> f64 {
        let (s, l) = ordered(y, z);
        self.envelope_k1() * (1.0 + s + l) / (s * l).powf(self.beta())
    }

    /// Rate without argument checks. Arguments are ordered first so the
    /// result is bitwise symmetric.
    pub(crate) fn rate(&self, y: f64, z: f64) -> f64 {
        let (s, l) = ordered(y, z);
        let k = self.scale;
        match self.family {
            KernelFamily::Constant => k,
            KernelFamily::SingularAffine { beta } => k * (1.0 + s + l) / (s * l).powf(beta),
            KernelFamily::Brownian => {
                let (cs, cl) = (s.cbrt(), l.cbrt());
                k * (cs + cl) * (1.0 / cs + 1.0 / cl)
            }
            KernelFamily::Granulation { a, b } => k * (s + l).powf(a) / (s * l).powf(b),
        }
    }

    /// Coagulation rate `A(y, z)`.
    pub fn eval(&self, y: f64, z: f64) -> Result<f64> {
        positive("y", y)?;
        positive("z", z)?;
        Ok(self.rate(y, z))
    }

    /// Truncated rate `A(y,z) chi(1/n,n)(y) chi(1/n,n)(z) [1 - zeta + zeta chi(0,n)(y+z)]`.
    pub fn eval_truncated(&self, trunc: &TruncationSpec, y: f64, z: f64) -> Result<f64> {
        positive("y", y)?;
        positive("z", z)?;
        if !trunc.coagulates(y) || !trunc.coagulates(z) {
            return Ok(0.0);
        }
        if trunc.is_conservative() && y + z >= trunc.n() {
            return Ok(0.0);
        }
        Ok(self.rate(y, z))
    }
}

fn ordered(y: f64, z: f64) -> (f64, f64) {
    if y <= z {
        (y, z)
    } else {
        (z, y)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

/// Power-law breakage with exponent `nu` and selection scale `k2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragmentationSpec {
    nu: f64,
    k2: f64,
}

impl FragmentationSpec {
    pub fn new(nu: f64, k2: f64) -> Result<Self> {
        if !(nu > -1.0 && nu <= 0.0) {
            return Err(Error::Construction(format!("nu must lie in (-1, 0], got {nu}")));
        }
        check_scale("k2", k2)?;
        Ok(Self { nu, k2 })
    }

    /// No fragmentation: `k2 = 0`, `nu = 0`.
    pub fn none() -> Self {
        Self { nu: 0.0, k2: 0.0 }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }

    /// `b(y|z)`, zero for `y >= z`.
    pub fn breakage(&self, y: f64, z: f64) -> Result<f64> {
        positive("y", y)?;
        positive("z", z)?;
        if y >= z {
            return Ok(0.0);
        }
        Ok((self.nu + 2.0) * y.powf(self.nu) / z.powf(1.0 + self.nu))
    }

    /// Total number of daughters per breakup, `(nu + 2) / (nu + 1)`.
    pub fn daughter_count(&self) -> f64 {
        (self.nu + 2.0) / (self.nu + 1.0)
    }

    /// Exact constant `c1` with `int_0^z y^(-2 beta) b(y|z) dy = c1 z^(-2 beta)`.
    pub fn negative_moment_constant(&self, beta: f64) -> Result<f64> {
        let denom = self.nu + 1.0 - 2.0 * beta;
        if denom <= 0.0 {
            return Err(Error::Divergence(format!(
                "int y^(-2 beta) b(y|z) dy diverges for nu = {}, beta = {beta}",
                self.nu
            )));
        }
        Ok((self.nu + 2.0) / denom)
    }

    /// `S_n(y) = k2 y^(1 + nu)` on `(0, n)`, zero beyond.
    pub fn selection(&self, trunc: &TruncationSpec, y: f64) -> Result<f64> {
        positive("y", y)?;
        Ok(self.selection_rate(trunc, y))
    }

    pub(crate) fn selection_rate(&self, trunc: &TruncationSpec, y: f64) -> f64 {
        if y >= trunc.n() || self.k2 == 0.0 {
            return 0.0;
        }
        self.k2 * y.powf(1.0 + self.nu)
    }

    /// `int_0^z (z - y) y b(y|z) dy = z^2 / (nu + 3)`.
    pub fn fragment_spread_moment(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        z * z / (self.nu + 3.0)
    }

    /// Expected number of daughters of a parent `z` landing in `[lo, hi]`.
    pub fn daughters_between(&self, lo: f64, hi: f64, z: f64) -> f64 {
        let hi = hi.min(z);
        let lo = lo.max(0.0);
        if hi <= lo {
            return 0.0;
        }
        let p = self.nu + 1.0;
        self.daughter_count() * (hi.powf(p) - lo.powf(p)) / z.powf(p)
    }

    /// Daughter mass of a parent `z` landing in `[lo, hi]`.
    pub fn daughter_mass_between(&self, lo: f64, hi: f64, z: f64) -> f64 {
        let hi = hi.min(z);
        let lo = lo.max(0.0);
        if hi <= lo {
            return 0.0;
        }
        let p = self.nu + 2.0;
        (hi.powf(p) - lo.powf(p)) / z.powf(self.nu + 1.0)
    }

    /// Fraction of the parent's mass carried by daughters smaller than `cut`,
    /// `(cut / z)^(nu + 2)`.
    pub fn mass_fraction_below(&self, cut: f64, z: f64) -> f64 {
        if cut >= z {
            return 1.0;
        }
        (cut / z).powf(self.nu + 2.0)
    }
}

/// Whether coagulation events whose product would exceed `n` are suppressed
/// (conservative) or proceed with their mass leaving the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Zeta {
    NonConservative,
    Conservative,
}

impl Zeta {
    pub fn from_flag(flag: u8) -> Result<Self> {
        match flag {
            0 => Ok(Zeta::NonConservative),
            1 => Ok(Zeta::Conservative),
            other => Err(Error::Construction(format!("zeta must be 0 or 1, got {other}"))),
        }
    }

    pub fn flag(&self) -> u8 {
        match self {
            Zeta::NonConservative => 0,
            Zeta::Conservative => 1,
        }
    }
}

impl fmt::Display for Zeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.flag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationSpec {
    n: f64,
    zeta: Zeta,
}

impl TruncationSpec {
    pub fn new(n: f64, zeta: Zeta) -> Result<Self> {
        if !(n > 1.0 && n.is_finite()) {
            return Err(Error::Construction(format!("cutoff n must be finite and > 1, got {n}")));
        }
        Ok(Self { n, zeta })
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn zeta(&self) -> Zeta {
        self.zeta
    }

    pub fn is_conservative(&self) -> bool {
        self.zeta == Zeta::Conservative
    }

    /// `chi(1/n, n)(y)`: the support of the truncated coagulation rate.
    pub fn coagulates(&self, y: f64) -> bool {
        y > 1.0 / self.n && y < self.n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate_from_zero, Tolerance};

    fn trunc(n: f64, zeta: u8) -> TruncationSpec {
        TruncationSpec::new(n, Zeta::from_flag(zeta).unwrap()).unwrap()
    }

    #[test]
    fn family_values() {
        assert_eq!(KernelSpec::constant(1.0).unwrap().eval(2.0, 3.0).unwrap(), 1.0);
        let sa = KernelSpec::singular_affine(1.0, 0.25).unwrap();
        assert_eq!(sa.eval(1.0, 1.0).unwrap(), 3.0);
        let br = KernelSpec::brownian(1.0).unwrap();
        assert_eq!(br.eval(1.0, 1.0).unwrap(), 4.0);
        assert_eq!(br.envelope_k1(), 4.0);
        assert!((br.beta() - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn nonpositive_arguments_are_domain_errors() {
        let k = KernelSpec::constant(1.0).unwrap();
        assert!(matches!(k.eval(0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(k.eval(1.0, -2.0), Err(Error::Domain(_))));
        let f = FragmentationSpec::new(0.0, 1.0).unwrap();
        assert!(matches!(f.breakage(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(f.selection(&trunc(10.0, 1), 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn construction_ranges() {
        assert!(KernelSpec::singular_affine(1.0, 0.5).is_err());
        assert!(KernelSpec::granulation(1.0, 1.5, 0.1).is_err());
        assert!(KernelSpec::granulation(1.0, 1.0, 0.5).is_err());
        assert!(KernelSpec::constant(-1.0).is_err());
        assert!(FragmentationSpec::new(-1.0, 1.0).is_err());
        assert!(FragmentationSpec::new(0.1, 1.0).is_err());
        assert!(TruncationSpec::new(1.0, Zeta::Conservative).is_err());
        assert!(Zeta::from_flag(2).is_err());
    }

    #[test]
    fn truncated_rate_indicators() {
        let k = KernelSpec::constant(1.0).unwrap();
        assert_eq!(k.eval_truncated(&trunc(10.0, 1), 6.0, 7.0).unwrap(), 0.0);
        assert_eq!(k.eval_truncated(&trunc(10.0, 0), 0.05, 1.0).unwrap(), 0.0);
        assert_eq!(k.eval_truncated(&trunc(10.0, 1), 0.05, 1.0).unwrap(), 0.0);
        let sa = KernelSpec::singular_affine(1.0, 0.25).unwrap();
        assert_eq!(
            sa.eval_truncated(&trunc(10.0, 0), 6.0, 7.0).unwrap(),
            sa.eval(6.0, 7.0).unwrap()
        );
    }

    #[test]
    fn breakage_values() {
        let f0 = FragmentationSpec::new(0.0, 1.0).unwrap();
        assert_eq!(f0.breakage(1.0, 4.0).unwrap(), 0.5);
        assert_eq!(f0.breakage(5.0, 4.0).unwrap(), 0.0);
        let fh = FragmentationSpec::new(-0.5, 1.0).unwrap();
        assert!((fh.breakage(0.25, 1.0).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn daughter_count_matches_quadrature() {
        for (nu, expect) in [(0.0, 2.0), (-0.5, 3.0)] {
            let f = FragmentationSpec::new(nu, 1.0).unwrap();
            let z = 1.7;
            let q = integrate_from_zero(|y| f.breakage(y, z).unwrap(), z, Tolerance::relative(1e-13))
                .unwrap();
            assert!((q - expect).abs() < 1e-9 * expect, "nu={nu}: {q}");
            assert_eq!(f.daughter_count(), expect);
        }
        let f = FragmentationSpec::new(-0.3, 1.0).unwrap();
        let at = |z: f64| f.daughters_between(0.0, z, z);
        assert_eq!(at(7.0), at(1.0));
    }

    #[test]
    fn negative_moment_constant_values() {
        let quad = |nu: f64, beta: f64| {
            let f = FragmentationSpec::new(nu, 1.0).unwrap();
            integrate_from_zero(
                |y| y.powf(-2.0 * beta) * f.breakage(y, 1.0).unwrap(),
                1.0,
                Tolerance::relative(1e-13),
            )
            .unwrap()
        };
        let f0 = FragmentationSpec::new(0.0, 1.0).unwrap();
        assert_eq!(f0.negative_moment_constant(0.25).unwrap(), 4.0);
        assert!((quad(0.0, 0.25) - 4.0).abs() < 1e-8);
        assert_eq!(f0.negative_moment_constant(0.0).unwrap(), f0.daughter_count());
        let fh = FragmentationSpec::new(-0.5, 1.0).unwrap();
        assert!((fh.negative_moment_constant(0.2).unwrap() - 15.0).abs() < 1e-12);
        assert!((quad(-0.5, 0.2) - 15.0).abs() < 1e-7);
        assert!(matches!(fh.negative_moment_constant(0.25), Err(Error::Divergence(_))));
    }

    #[test]
    fn selection_values() {
        let f = FragmentationSpec::new(0.0, 1.0).unwrap();
        let t = trunc(10.0, 1);
        assert_eq!(f.selection(&t, 3.0).unwrap(), 3.0);
        assert_eq!(f.selection(&t, 11.0).unwrap(), 0.0);
        let still = FragmentationSpec::new(-0.4, 0.0).unwrap();
        for y in [1e-3, 0.5, 2.0, 9.0] {
            assert_eq!(still.selection(&t, y).unwrap(), 0.0);
        }
    }

    #[test]
    fn fragment_spread_moment_values() {
        let oracle = |nu: f64, z: f64| {
            let f = FragmentationSpec::new(nu, 1.0).unwrap();
            integrate_from_zero(
                |y| (z - y) * y * f.breakage(y, z).unwrap(),
                z,
                Tolerance::relative(1e-13),
            )
            .unwrap()
        };
        let f0 = FragmentationSpec::new(0.0, 1.0).unwrap();
        assert!((f0.fragment_spread_moment(1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((oracle(0.0, 1.0) - 1.0 / 3.0).abs() < 1e-9);
        let fh = FragmentationSpec::new(-0.5, 1.0).unwrap();
        assert!((fh.fragment_spread_moment(2.0) - 1.6).abs() < 1e-15);
        assert!((oracle(-0.5, 2.0) - 1.6).abs() < 1e-8);
        assert!(fh.fragment_spread_moment(1e-12) < 1e-23);
        assert_eq!(fh.fragment_spread_moment(0.0), 0.0);
    }

    #[test]
    fn partial_daughter_integrals() {
        let f = FragmentationSpec::new(-0.25, 1.0).unwrap();
        let z = 3.0;
        let n_all = f.daughters_between(0.0, z, z);
        assert!((n_all - f.daughter_count()).abs() < 1e-14);
        let m_all = f.daughter_mass_between(0.0, 10.0, z);
        assert!((m_all - z).abs() < 1e-14);
        let split = f.daughter_mass_between(0.0, 1.0, z) + f.daughter_mass_between(1.0, z, z);
        assert!((split - z).abs() < 1e-14);
        assert!((f.mass_fraction_below(1.0, z) * z - f.daughter_mass_between(0.0, 1.0, z)).abs() < 1e-14);
    }
}
