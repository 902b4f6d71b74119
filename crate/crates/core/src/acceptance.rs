//! The built-in acceptance suite. Each criterion builds its own runs, checks
//! its stated tolerance and returns one outcome line.

use std::fmt;

use rayon::prelude::*;

use crate::diagnostics::{self, TestFunction};
use crate::error::{Error, Result};
use crate::harness::{self, AnalyticCase};
use crate::initial::InitialData;
use crate::kernels::{FragmentationSpec, KernelSpec, TruncationSpec, Zeta};
use crate::quadrature::{integrate, integrate_from_zero, Tolerance};
use crate::report;
use crate::solver::{run, RunConfig, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "criterion {:>2} {verdict} {}: {}", self.id, self.name, self.detail)
    }
}

fn outcome(id: u8, name: &'static str, pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { id, name, pass, detail })
}

fn traj(config: &RunConfig) -> Result<Trajectory> {
    run(config).map_err(|f| f.error)
}

/// Constant kernel with `nu = 0` fragmentation, `k1 = k2 = 1`, `e^-y`
/// initial data, 160 cells, horizon 5 with 50 outputs.
pub fn coag_frag_config(zeta: Zeta, n: f64) -> Result<RunConfig> {
    Ok(RunConfig::new(
        KernelSpec::constant(1.0)?,
        FragmentationSpec::new(0.0, 1.0)?,
        TruncationSpec::new(n, zeta)?,
        160,
        InitialData::unit_exponential(),
        5.0,
        50,
    ))
}

/// Singular-affine kernel with `beta = 1/4`, `nu = 0`, `k1 = k2 = 1`, `n = 50`,
/// horizon 1.
pub fn singular_config() -> Result<RunConfig> {
    Ok(RunConfig::new(
        KernelSpec::singular_affine(1.0, 0.25)?,
        FragmentationSpec::new(0.0, 1.0)?,
        TruncationSpec::new(50.0, Zeta::Conservative)?,
        160,
        InitialData::unit_exponential(),
        1.0,
        20,
    ))
}

/// Four cells on `[0.5, 8]` with the non-conservative truncation.
pub fn oracle_config() -> Result<RunConfig> {
    let mut c = RunConfig::new(
        KernelSpec::constant(1.0)?,
        FragmentationSpec::new(0.0, 1.0)?,
        TruncationSpec::new(8.0, Zeta::NonConservative)?,
        4,
        InitialData::unit_exponential(),
        1.0,
        10,
    );
    c.grid.y_min = Some(0.5);
    Ok(c)
}

fn max_residual(t: &Trajectory) -> f64 {
    t.snapshots.iter().map(|s| s.moments.mass_residual).fold(0.0, f64::max)
}

pub fn criterion_1() -> Result<Outcome> {
    let t = traj(&coag_frag_config(Zeta::Conservative, 50.0)?)?;
    let worst = max_residual(&t);
    let escaped = t.last().escaped_mass;
    let pass = worst <= 1e-12 && escaped == 0.0 && t.snapshots.len() == 51;
    outcome(
        1,
        "conservative mass identity",
        pass,
        format!("max |M1 + dust - M1(0)|/M1(0) = {worst:.3e} over {} outputs (tol 1e-12)", t.snapshots.len() - 1),
    )
}

pub fn criterion_2() -> Result<Outcome> {
    let t = traj(&coag_frag_config(Zeta::NonConservative, 10.0)?)?;
    let worst = max_residual(&t);
    let escaped = t.last().escaped_mass;
    outcome(
        2,
        "non-conservative mass balance",
        worst <= 1e-12 && escaped > 1e-3,
        format!("max balance residual = {worst:.3e} (tol 1e-12), escaped(T) = {escaped:.6e} (> 1e-3)"),
    )
}

const CUTOFFS: [f64; 4] = [10.0, 20.0, 40.0, 80.0];

pub fn criterion_3() -> Result<Outcome> {
    let with_frag = coag_frag_config(Zeta::NonConservative, 10.0)?;
    let mut pure = with_frag.clone();
    pure.frag = FragmentationSpec::none();
    let mut detail = Vec::new();
    let mut pass = true;
    for (label, base) in [("coag+frag", &with_frag), ("coag", &pure)] {
        let curve = harness::mass_loss_curve(base, &CUTOFFS)?;
        let escaped: Vec<f64> = curve.iter().map(|p| p.1).collect();
        let ok = escaped.windows(2).all(|w| w[1] < w[0]);
        pass &= ok;
        let list: Vec<String> = escaped.iter().map(|e| format!("{e:.3e}")).collect();
        detail.push(format!("{label}: escaped(T) = [{}]", list.join(", ")));
    }
    outcome(3, "vanishing mass loss", pass, detail.join("; "))
}

/// Constant-kernel validation configuration on `(1e-4, 1e3)`.
pub fn constant_validation_config() -> Result<RunConfig> {
    let mut c = AnalyticCase::ConstantKernel.config(1e-4, 1e3, 160, 5.0, 10)?;
    c.max_dt = Some(0.05);
    Ok(c)
}

pub fn criterion_4() -> Result<Outcome> {
    let base = constant_validation_config()?;
    let rep = harness::validate_analytic(AnalyticCase::ConstantKernel, &base, &[80, 160, 320])?;
    let errs = rep.terminal_errors();
    let order = rep.order.expect("three levels").order;
    outcome(
        4,
        "constant-kernel analytic validation",
        errs[1] <= 0.05 && order >= 0.8,
        format!(
            "error(T=5) at 80/160/320 cells = {:.4e}/{:.4e}/{:.4e} (160 cells <= 5e-2), order = {order:.3} (>= 0.8)",
            errs[0], errs[1], errs[2]
        ),
    )
}

/// Pure-fragmentation validation configuration on `(1e-4, 100)`.
pub fn fragmentation_validation_config() -> Result<RunConfig> {
    AnalyticCase::PureFragmentation.config(1e-4, 100.0, 160, 3.0, 6)
}

pub fn criterion_5() -> Result<Outcome> {
    let base = fragmentation_validation_config()?;
    let rep = harness::validate_analytic(AnalyticCase::PureFragmentation, &base, &[160])?;
    let run = &rep.runs[0];
    let err = *run.errors.last().expect("nonempty");
    let m0 = *run.m0.last().expect("nonempty");
    let m0_gap = (m0 - 4.0).abs() / 4.0;
    outcome(
        5,
        "pure-fragmentation analytic validation",
        err <= 0.05 && m0_gap <= 0.01,
        format!("error(T=3) = {err:.4e} (<= 5e-2), M0(3) = {m0:.6} (4 +/- 1%)"),
    )
}

pub fn criterion_6() -> Result<Outcome> {
    let c = singular_config()?;
    let t = traj(&c)?;
    let chk = diagnostics::moment_bound_check(&t, &c.frag, &c.initial, c.horizon)?;
    let c1 = c.frag.negative_moment_constant(c.kernel.beta())?;
    let worst = chk.lhs.iter().copied().fold(0.0, f64::max);
    outcome(
        6,
        "moment bound M_{-2beta} + M1",
        chk.pass && c1 == 4.0,
        format!("max lhs = {worst:.6}, bound = {:.6} (c1 = {c1})", chk.bound),
    )
}

pub fn criterion_7() -> Result<Outcome> {
    let c = singular_config()?;
    let t = traj(&c)?;
    let mb = diagnostics::moment_bound_check(&t, &c.frag, &c.initial, c.horizon)?;
    let pair = diagnostics::build_convex_pair(&c.initial, c.kernel.beta(), c.frag.nu(), c.diagnostics.gamma)?;
    let chk = diagnostics::tail_check(&t, &pair, c.kernel.envelope_k1(), mb.bound, c.horizon);
    let worst = chk.tail.iter().copied().fold(0.0, f64::max);
    outcome(
        7,
        "sigma-1 tail bound",
        chk.pass,
        format!(
            "max tail = {worst:.6}, ln Theta(T) = {:.6} (tail <= Theta compared in log space)",
            chk.log_theta
        ),
    )
}

/// Relative gap between a closed form and its quadrature oracle.
fn rel_gap(closed: f64, quad: f64) -> f64 {
    (closed - quad).abs() / quad.abs()
}

pub fn criterion_8() -> Result<Outcome> {
    let tol = Tolerance { abs: 0.0, rel: 1e-12 };
    let mut worst = 0.0f64;
    let mut divergent = Vec::new();
    let mut pass = true;
    for &nu in &[0.0, -0.25, -0.5] {
        let frag = FragmentationSpec::new(nu, 1.0)?;
        for &z in &[1e-3, 1.0, 1e3] {
            let b = |y: f64| frag.breakage(y, z).unwrap_or(0.0);
            let count = integrate_from_zero(b, z, tol)?;
            worst = worst.max(rel_gap(frag.daughter_count(), count));
            let mass = integrate(|y| y * b(y), 0.0, z, tol)?;
            worst = worst.max(rel_gap(z, mass));
            let spread = integrate(|y| (z - y) * y * b(y), 0.0, z, tol)?;
            worst = worst.max(rel_gap(frag.fragment_spread_moment(z), spread));
        }
        for &beta in &[0.0, 0.2, 0.25] {
            let z: f64 = 1.0;
            let quad = integrate_from_zero(|y| y.powf(-2.0 * beta) * frag.breakage(y, z).unwrap_or(0.0), z, tol);
            match (frag.negative_moment_constant(beta), quad) {
                (Ok(c1), Ok(q)) => worst = worst.max(rel_gap(c1 * z.powf(-2.0 * beta), q)),
                (Err(Error::Divergence(_)), Err(Error::Divergence(_))) => {
                    divergent.push(format!("(nu={nu}, beta={beta})"))
                }
                (closed, quad) => {
                    pass = false;
                    divergent.push(format!("(nu={nu}, beta={beta}) mismatch: {closed:?} vs {quad:?}"));
                }
            }
        }
    }
    pass &= worst <= 1e-8;
    let div = if divergent.is_empty() {
        String::new()
    } else {
        format!("; divergent in both forms: {}", divergent.join(", "))
    };
    outcome(8, "closed-form kernel identities", pass, format!("max relative gap = {worst:.3e} (tol 1e-8){div}"))
}

/// Base run for the weak-residual refinement: the coag+frag setup at `n = 50`
/// with horizon 1.
pub fn weak_residual_config() -> Result<RunConfig> {
    let mut c = coag_frag_config(Zeta::Conservative, 50.0)?;
    c.horizon = 1.0;
    c.output_times = crate::solver::uniform_times(1.0, 10);
    Ok(c)
}

pub const WEAK_LEVELS: [(usize, usize); 3] = [(40, 10), (80, 20), (160, 40)];

pub fn criterion_9() -> Result<Outcome> {
    let base = weak_residual_config()?;
    let mut pass = true;
    let mut detail = Vec::new();
    for omega in [TestFunction::Constant(1.0), TestFunction::Capped(5.0)] {
        let r = harness::weak_residual_refinement(&base, &omega, &WEAK_LEVELS)?;
        let ok = r.order.order >= 0.8 && r.residuals.windows(2).all(|w| w[1] < w[0]);
        pass &= ok;
        let list: Vec<String> = r.residuals.iter().map(|v| format!("{v:.3e}")).collect();
        detail.push(format!("{}: [{}] order {:.3}", omega.tag(), list.join(", "), r.order.order));
    }
    outcome(9, "weak residual refinement", pass, detail.join("; "))
}

pub const EULER_DTS: [f64; 4] = [0.02, 0.01, 0.005, 0.0025];

pub fn criterion_10() -> Result<Outcome> {
    let cmp = harness::oracle_comparison(&oracle_config()?, 1e-3, &EULER_DTS)?;
    let p = cmp.euler_order.order;
    outcome(
        10,
        "brute-force oracle equivalence",
        cmp.rk4_gap <= 1e-6 && (p - 1.0).abs() <= 0.2,
        format!("rk4 gap at dt=1e-3 = {:.3e} (<= 1e-6), euler order = {p:.3} (1.0 +/- 0.2)", cmp.rk4_gap),
    )
}

pub fn criterion_11() -> Result<Outcome> {
    let mut base = coag_frag_config(Zeta::Conservative, 10.0)?;
    base.horizon = 2.0;
    base.output_times = crate::solver::uniform_times(2.0, 20);
    let studies: Vec<Result<harness::TruncationStudy>> = [Zeta::Conservative, Zeta::NonConservative]
        .par_iter()
        .map(|&z| harness::truncation_sequence_study(&base, &CUTOFFS, z, 12))
        .collect();
    let mut pass = true;
    let mut detail = Vec::new();
    for s in studies {
        let s = s?;
        pass &= s.decreasing;
        let list: Vec<String> = s.distances.iter().map(|d| format!("{d:.3e}")).collect();
        detail.push(format!("zeta={}: [{}]", s.zeta, list.join(", ")));
    }
    outcome(11, "truncation convergence", pass, detail.join("; "))
}

fn csv_bytes(t: &Trajectory) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    report::write_trajectory_to(&mut a, t)?;
    report::write_moments_to(&mut b, t)?;
    Ok((a, b))
}

pub fn criterion_12() -> Result<Outcome> {
    let c = coag_frag_config(Zeta::Conservative, 50.0)?;
    let first = traj(&c)?;
    let second = traj(&c)?;
    let identical = csv_bytes(&first)? == csv_bytes(&second)?;
    let mut par = c.clone();
    par.parallel = true;
    let p = traj(&par)?;
    let mut worst = 0.0f64;
    for (a, b) in first.snapshots.iter().zip(&p.snapshots) {
        let scale = a.state.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gap = a.state.values.iter().zip(&b.state.values).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        worst = worst.max(if scale > 0.0 { gap / scale } else { gap });
    }
    let same_len = first.snapshots.len() == p.snapshots.len();
    outcome(
        12,
        "determinism",
        identical && same_len && worst <= 1e-13,
        format!("sequential CSVs byte-identical: {identical}; parallel vs sequential max relative gap = {worst:.3e}"),
    )
}

pub type Criterion = fn() -> Result<Outcome>;

pub const CRITERIA: [(u8, Criterion); 12] = [
    (1, criterion_1),
    (2, criterion_2),
    (3, criterion_3),
    (4, criterion_4),
    (5, criterion_5),
    (6, criterion_6),
    (7, criterion_7),
    (8, criterion_8),
    (9, criterion_9),
    (10, criterion_10),
    (11, criterion_11),
    (12, criterion_12),
];

/// Runs one criterion; an error becomes a failing outcome.
pub fn evaluate(id: u8) -> Outcome {
    let (_, f) = CRITERIA.iter().find(|(i, _)| *i == id).expect("criterion id in 1..=12");
    f().unwrap_or_else(|e| Outcome { id, name: "error", pass: false, detail: e.to_string() })
}

pub fn run_all() -> Vec<Outcome> {
    CRITERIA.iter().map(|(id, _)| evaluate(*id)).collect()
}
