//! Multi-run studies: convergence in the cutoff `n`, conservative versus
//! non-conservative mass comparison, validation against closed-form
//! solutions, and an independent adaptive integrator for the discrete system.

use rayon::prelude::*;

use crate::diagnostics::{weak_residuals, TestFunction};
use crate::discretization::{DustPolicy, Grid, GriddedDensity};
use crate::error::{Error, Result};
use crate::initial::InitialData;
use crate::kernels::{FragmentationSpec, KernelSpec, TruncationSpec, Zeta};
use crate::quadrature::{integrate, integrate_to_infinity, Tolerance};
use crate::solver::{run, RunConfig, Stepper, Trajectory};

fn run_or_err(config: &RunConfig) -> Result<Trajectory> {
    run(config).map_err(|f| f.error)
}

/// Least-squares slope of `ln err` against `ln(1/h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderFit {
    pub order: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
}

/// Fits `err ~ C h^order`.
pub fn fit_order(h: &[f64], err: &[f64]) -> Result<OrderFit> {
    if h.len() != err.len() || h.len() < 2 {
        return Err(Error::Study("order fit needs at least two matched points".into()));
    }
    if let Some(e) = err.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::Study(format!("order fit needs positive finite errors, got {e}")));
    }
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    Ok(OrderFit { order: slope, residual: (rss / m).sqrt() })
}

/// `int_{cell} (y^-beta + y) dy` per cell.
fn norm_weights(grid: &Grid, beta: f64) -> Vec<f64> {
    (0..grid.cells())
        .map(|i| grid.cell_power_integral(i, -beta) + grid.cell_power_integral(i, 1.0))
        .collect()
}

/// Weighted `L^1` distance between densities on nested grids; the finer
/// density's cells beyond the coarse grid compare against zero.
pub fn nested_distance(coarse: &Grid, a: &GriddedDensity, fine: &Grid, b: &GriddedDensity, beta: f64) -> f64 {
    let wc = norm_weights(coarse, beta);
    let wf = norm_weights(fine, beta);
    let shared: f64 = (0..coarse.cells()).map(|i| (a.values[i] - b.values[i]).abs() * wc[i]).sum();
    let beyond: f64 = (coarse.cells()..fine.cells()).map(|i| b.values[i].abs() * wf[i]).sum();
    shared + beyond
}

/// One run of the cutoff sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub n: f64,
    pub zeta: Zeta,
    pub cells: usize,
    pub steps: usize,
    pub final_mass: f64,
    pub dust: f64,
    pub escaped: f64,
    pub max_mass_residual: f64,
}

impl RunSummary {
    fn of(config: &RunConfig, traj: &Trajectory) -> Self {
        let last = traj.snapshots.last().expect("nonempty trajectory");
        Self {
            n: config.trunc.n(),
            zeta: config.trunc.zeta(),
            cells: traj.grid.cells(),
            steps: traj.steps,
            final_mass: last.moments.m1,
            dust: last.state.dust_mass,
            escaped: last.state.escaped_mass,
            max_mass_residual: traj.snapshots.iter().map(|s| s.moments.mass_residual).fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationStudy {
    pub zeta: Zeta,
    pub y_min: f64,
    pub runs: Vec<RunSummary>,
    /// `sup_t` distance between runs `k` and `k + 1`.
    pub distances: Vec<f64>,
    pub decreasing: bool,
}

/// Common lower edge `n0 2^-K <= 1/n_max` for a doubling sequence, so all
/// grids share their edges.
fn nested_y_min(n_values: &[f64]) -> Result<f64> {
    let n0 = n_values[0];
    for w in n_values.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Study(format!("n values must increase, got {} then {}", w[0], w[1])));
        }
    }
    for &n in n_values {
        let r = (n / n0).log2();
        if (r - r.round()).abs() > 1e-12 {
            return Err(Error::Study(format!(
                "n = {n} is not a power-of-two multiple of {n0}; grids would not nest"
            )));
        }
    }
    let n_max = *n_values.last().expect("nonempty");
    let mut y_min = n0;
    while y_min > 1.0 / n_max {
        y_min *= 0.5;
    }
    Ok(y_min)
}

/// Runs the base configuration for each `n` on nested grids with
/// `cells_per_octave` cells per doubling of volume, and reports the sup-in-time
/// weighted distance between consecutive cutoffs.
pub fn truncation_sequence_study(
    base: &RunConfig,
    n_values: &[f64],
    zeta: Zeta,
    cells_per_octave: usize,
) -> Result<TruncationStudy> {
    if n_values.len() < 2 {
        return Err(Error::Study("a truncation study needs at least two cutoffs".into()));
    }
    if cells_per_octave == 0 {
        return Err(Error::Study("cells per octave must be positive".into()));
    }
    let y_min = nested_y_min(n_values)?;
    let configs: Vec<RunConfig> = n_values
        .iter()
        .map(|&n| {
            let mut c = base.clone();
            c.trunc = TruncationSpec::new(n, zeta)?;
            c.grid.y_min = Some(y_min);
            c.grid.cells = cells_per_octave * (n / y_min).log2().round() as usize;
            c.diagnostics.radius = c.diagnostics.radius.min(n);
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let trajs: Vec<Trajectory> = configs.par_iter().map(run_or_err).collect::<Result<_>>()?;
    let beta = base.kernel.beta();
    let mut distances = Vec::with_capacity(trajs.len() - 1);
    for w in trajs.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if !a.grid.is_prefix_of(&b.grid) {
            return Err(Error::Study("grids of consecutive cutoffs do not nest".into()));
        }
        if a.times() != b.times() {
            return Err(Error::Study("runs do not share output times".into()));
        }
        let sup = a
            .snapshots
            .iter()
            .zip(&b.snapshots)
            .map(|(sa, sb)| nested_distance(&a.grid, &sa.state, &b.grid, &sb.state, beta))
            .fold(0.0, f64::max);
        distances.push(sup);
    }
    let decreasing = distances.windows(2).all(|w| w[1] < w[0]);
    let runs = configs.iter().zip(&trajs).map(|(c, t)| RunSummary::of(c, t)).collect();
    Ok(TruncationStudy { zeta, y_min, runs, distances, decreasing })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationComparison {
    pub n: f64,
    pub times: Vec<f64>,
    /// `M1` under the conservative truncation minus `M1` under the other.
    pub mass_gap: Vec<f64>,
    pub escaped: Vec<f64>,
    pub dust_gap: Vec<f64>,
}

/// Runs both truncations at cutoff `n`.
pub fn compare_truncations(base: &RunConfig, n: f64) -> Result<TruncationComparison> {
    let configs: Vec<RunConfig> = [Zeta::Conservative, Zeta::NonConservative]
        .iter()
        .map(|&z| {
            let mut c = base.clone();
            c.trunc = TruncationSpec::new(n, z)?;
            c.diagnostics.radius = c.diagnostics.radius.min(n);
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let trajs: Vec<Trajectory> = configs.par_iter().map(run_or_err).collect::<Result<_>>()?;
    let (cons, non) = (&trajs[0], &trajs[1]);
    let pairs = cons.snapshots.iter().zip(&non.snapshots);
    Ok(TruncationComparison {
        n,
        times: cons.times(),
        mass_gap: pairs.clone().map(|(a, b)| a.moments.m1 - b.moments.m1).collect(),
        escaped: non.snapshots.iter().map(|s| s.state.escaped_mass).collect(),
        dust_gap: pairs.map(|(a, b)| a.state.dust_mass - b.state.dust_mass).collect(),
    })
}

/// Terminal escaped mass of the non-conservative truncation for each `n`.
pub fn mass_loss_curve(base: &RunConfig, n_values: &[f64]) -> Result<Vec<(f64, f64)>> {
    n_values
        .par_iter()
        .map(|&n| {
            let mut c = base.clone();
            c.trunc = TruncationSpec::new(n, Zeta::NonConservative)?;
            c.diagnostics.radius = c.diagnostics.radius.min(n);
            if c.grid.y_min.is_some_and(|y| y >= n) {
                c.grid.y_min = None;
            }
            let t = run_or_err(&c)?;
            Ok((n, t.last().escaped_mass))
        })
        .collect()
}

/// Closed-form solutions of the form `a(t) exp(-lambda(t) y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticCase {
    /// `A = 1`, no fragmentation: `4/(2+t)^2 exp(-2y/(2+t))`.
    ConstantKernel,
    /// No coagulation, `nu = 0`, `S = y`: `(1+t)^2 exp(-(1+t) y)`.
    PureFragmentation,
}

impl AnalyticCase {
    pub fn name(&self) -> &'static str {
        match self {
            AnalyticCase::ConstantKernel => "constant",
            AnalyticCase::PureFragmentation => "fragmentation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(AnalyticCase::ConstantKernel),
            "fragmentation" => Ok(AnalyticCase::PureFragmentation),
            other => Err(Error::Config(format!(
                "unknown validation case '{other}' (expected constant or fragmentation)"
            ))),
        }
    }

    /// `(a(t), lambda(t))`.
    fn parameters(&self, t: f64) -> (f64, f64) {
        match self {
            AnalyticCase::ConstantKernel => (4.0 / ((2.0 + t) * (2.0 + t)), 2.0 / (2.0 + t)),
            AnalyticCase::PureFragmentation => ((1.0 + t) * (1.0 + t), 1.0 + t),
        }
    }

    pub fn density(&self, t: f64, y: f64) -> f64 {
        let (a, l) = self.parameters(t);
        a * (-l * y).exp()
    }

    /// Total number `int_0^inf g(t, y) dy`.
    pub fn number(&self, t: f64) -> f64 {
        let (a, l) = self.parameters(t);
        a / l
    }

    /// Exact average of the solution over `[lo, hi]`.
    pub fn cell_average(&self, t: f64, lo: f64, hi: f64) -> f64 {
        let (a, l) = self.parameters(t);
        a * ((-l * lo).exp() - (-l * hi).exp()) / (l * (hi - lo))
    }

    /// The case's run configuration on `(y_min, n)` with `cells` cells.
    pub fn config(&self, y_min: f64, n: f64, cells: usize, horizon: f64, outputs: usize) -> Result<RunConfig> {
        let (kernel, frag) = match self {
            AnalyticCase::ConstantKernel => (KernelSpec::constant(1.0)?, FragmentationSpec::none()),
            AnalyticCase::PureFragmentation => (KernelSpec::constant(0.0)?, FragmentationSpec::new(0.0, 1.0)?),
        };
        let trunc = TruncationSpec::new(n, Zeta::Conservative)?;
        let mut c = RunConfig::new(kernel, frag, trunc, cells, InitialData::unit_exponential(), horizon, outputs);
        c.grid.y_min = Some(y_min);
        Ok(c)
    }
}

/// `sum |g - g_exact| int(1+y) / sum g_exact int(1+y)` over the grid.
pub fn relative_weighted_error(case: AnalyticCase, grid: &Grid, state: &GriddedDensity) -> f64 {
    let e = grid.edges();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..grid.cells() {
        let w = grid.cell_power_integral(i, 0.0) + grid.cell_power_integral(i, 1.0);
        let exact = case.cell_average(state.time, e[i], e[i + 1]);
        num += (state.values[i] - exact).abs() * w;
        den += exact * w;
    }
    num / den
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRun {
    pub cells: usize,
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    pub m0: Vec<f64>,
    pub m1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub case: AnalyticCase,
    pub runs: Vec<ValidationRun>,
    /// Fit of the terminal error against `1/cells`.
    pub order: Option<OrderFit>,
}

impl ValidationReport {
    pub fn terminal_errors(&self) -> Vec<f64> {
        self.runs.iter().map(|r| *r.errors.last().expect("nonempty")).collect()
    }

    /// Terminal errors decrease under refinement, allowing `noise` relative slack.
    pub fn monotone(&self, noise: f64) -> bool {
        self.terminal_errors().windows(2).all(|w| w[1] <= w[0] * (1.0 + noise))
    }
}

/// Runs `base` (which must be the case's configuration) at each cell count.
pub fn validate_analytic(case: AnalyticCase, base: &RunConfig, cells: &[usize]) -> Result<ValidationReport> {
    let runs: Vec<ValidationRun> = cells
        .par_iter()
        .map(|&m| {
            let mut c = base.clone();
            c.grid.cells = m;
            let traj = run_or_err(&c)?;
            Ok(ValidationRun {
                cells: m,
                times: traj.times(),
                errors: traj
                    .snapshots
                    .iter()
                    .map(|s| relative_weighted_error(case, &traj.grid, &s.state))
                    .collect(),
                m0: traj.snapshots.iter().map(|s| s.moments.m0).collect(),
                m1: traj.snapshots.iter().map(|s| s.moments.m1).collect(),
            })
        })
        .collect::<Result<_>>()?;
    let order = if runs.len() >= 2 {
        let h: Vec<f64> = runs.iter().map(|r| 1.0 / r.cells as f64).collect();
        let e: Vec<f64> = runs.iter().map(|r| *r.errors.last().expect("nonempty")).collect();
        Some(fit_order(&h, &e)?)
    } else {
        None
    };
    Ok(ValidationReport { case, runs, order })
}

/// `d_t g - [int_y^inf b(y|z) S(z) g(z) dz - S(y) g(y)]` for the
/// pure-fragmentation closed form, with the gain integral by quadrature.
pub fn pure_fragmentation_pde_residual(t: f64, y: f64) -> Result<f64> {
    let case = AnalyticCase::PureFragmentation;
    let frag = FragmentationSpec::new(0.0, 1.0)?;
    let g = |z: f64| case.density(t, z);
    let tol = Tolerance { abs: 1e-300, rel: 1e-12 };
    let gain = integrate_to_infinity(|z| frag.breakage(y, z).unwrap_or(0.0) * z * g(z), y, tol)?;
    let l = 1.0 + t;
    let dt = (2.0 * l - y * l * l) * (-l * y).exp();
    Ok(dt - (gain - y * g(y)))
}

/// Residual of the constant-kernel closed form in the coagulation equation,
/// with the birth integral by quadrature.
pub fn constant_kernel_pde_residual(t: f64, y: f64) -> Result<f64> {
    let case = AnalyticCase::ConstantKernel;
    let g = |z: f64| case.density(t, z);
    let tol = Tolerance { abs: 1e-300, rel: 1e-12 };
    let birth = 0.5 * integrate(|z| g(y - z) * g(z), 0.0, y, tol)?;
    let loss = g(y) * case.number(t);
    let (a, l) = case.parameters(t);
    // d/dt [a e^{-l y}] with a' = -8/(2+t)^3 and l' = -2/(2+t)^2
    let s = 2.0 + t;
    let dt = (-8.0 / (s * s * s) + a * y * 2.0 / (s * s)) * (-l * y).exp();
    Ok(dt - (birth - loss))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakRefinement {
    pub cells: Vec<usize>,
    pub outputs: Vec<usize>,
    pub residuals: Vec<f64>,
    pub order: OrderFit,
}

/// Terminal weak residual for `omega` under simultaneous grid and snapshot
/// refinement.
pub fn weak_residual_refinement(
    base: &RunConfig,
    omega: &TestFunction,
    levels: &[(usize, usize)],
) -> Result<WeakRefinement> {
    let residuals: Vec<f64> = levels
        .par_iter()
        .map(|&(cells, outputs)| {
            let mut c = base.clone();
            c.grid.cells = cells;
            c.output_times = crate::solver::uniform_times(c.horizon, outputs);
            let traj = run_or_err(&c)?;
            let r = weak_residuals(&traj, omega, &c.kernel, &c.frag, &c.trunc);
            Ok(*r.last().expect("nonempty"))
        })
        .collect::<Result<_>>()?;
    let h: Vec<f64> = levels.iter().map(|(c, _)| 1.0 / *c as f64).collect();
    let order = fit_order(&h, &residuals)?;
    Ok(WeakRefinement {
        cells: levels.iter().map(|l| l.0).collect(),
        outputs: levels.iter().map(|l| l.1).collect(),
        residuals,
        order,
    })
}

/// Maximum number of cells accepted by the brute-force oracle.
pub const ORACLE_MAX_CELLS: usize = 8;

/// The discrete system assembled pair by pair, sharing no tables with the
/// solver. Ledger dust policy only.
struct NaiveSystem {
    grid: Grid,
    kernel: KernelSpec,
    frag: FragmentationSpec,
    trunc: TruncationSpec,
}

impl NaiveSystem {
    /// Derivative of `[values..., dust, escaped]`.
    fn derivative(&self, y: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let m = g.cells();
        let (x, c, w, e) = (g.pivots(), g.centers(), g.widths(), g.edges());
        let counts: Vec<f64> = (0..m).map(|i| y[i] * w[i]).collect();
        let mut dn = vec![0.0; m];
        let mut dust = 0.0;
        let mut escaped = 0.0;
        for i in 0..m {
            for j in i..m {
                if !(self.trunc.coagulates(x[i]) && self.trunc.coagulates(x[j])) {
                    continue;
                }
                let b = c[i] + c[j];
                if b >= self.trunc.n() && self.trunc.is_conservative() {
                    continue;
                }
                let mut a = self.kernel.rate(x[i], x[j]);
                if i == j {
                    a *= 0.5;
                }
                let events = a * counts[i] * counts[j];
                dn[i] -= events;
                dn[j] -= events;
                if b >= self.trunc.n() {
                    escaped += events * b;
                } else if b >= c[m - 1] {
                    dn[m - 1] += events * b / c[m - 1];
                } else {
                    let mut k = 0;
                    while c[k + 1] <= b {
                        k += 1;
                    }
                    let span = c[k + 1] - c[k];
                    dn[k] += events * (c[k + 1] - b) / span;
                    dn[k + 1] += events * (b - c[k]) / span;
                }
            }
        }
        let nu = self.frag.nu();
        for j in 0..m {
            let s = self.frag.selection_rate(&self.trunc, x[j]);
            if s == 0.0 {
                continue;
            }
            let breakups = s * counts[j];
            dn[j] -= breakups;
            // number landing in each cell, then rescaled so daughters plus
            // dust carry exactly the parent's center mass
            let raw: Vec<f64> = (0..=j)
                .map(|i| {
                    let hi = e[i + 1].min(x[j]);
                    let p = nu + 1.0;
                    self.frag.daughter_count() * (hi.powf(p) - e[i].powf(p)) / x[j].powf(p)
                })
                .collect();
            let dust_share = (e[0] / x[j]).powf(nu + 2.0);
            let raw_mass: f64 = raw.iter().enumerate().map(|(i, r)| r * c[i]).sum();
            let scale = (1.0 - dust_share) * c[j] / raw_mass;
            for (i, r) in raw.iter().enumerate() {
                dn[i] += breakups * r * scale;
            }
            dust += breakups * dust_share * c[j];
        }
        let mut out: Vec<f64> = (0..m).map(|i| dn[i] / w[i]).collect();
        out.push(dust);
        out.push(escaped);
        out
    }
}

// Dormand-Prince 5(4) tableau.
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand-Prince integration of `f` through `times`, returning the
/// state at each requested time.
pub fn dormand_prince<F>(f: F, y0: &[f64], times: &[f64], tol: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let dim = y0.len();
    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut h = times.first().copied().unwrap_or(1.0).min(1e-3);
    let mut out = Vec::with_capacity(times.len());
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    k[0] = f(&y);
    let mut budget = 10_000_000usize;
    for &target in times {
        while t < target {
            budget = budget
                .checked_sub(1)
                .ok_or_else(|| Error::StepSize { time: t, detail: "oracle step budget exhausted".into() })?;
            let last = target - t <= h;
            let step = if last { target - t } else { h };
            let mut stage = vec![0.0; dim];
            for s in 1..7 {
                for d in 0..dim {
                    stage[d] = y[d] + step * (0..s).map(|r| DP_A[s][r] * k[r][d]).sum::<f64>();
                }
                k[s] = f(&stage);
            }
            let y_new: Vec<f64> =
                (0..dim).map(|d| y[d] + step * (0..7).map(|r| DP_B[r] * k[r][d]).sum::<f64>()).collect();
            let err = (0..dim)
                .map(|d| {
                    let e = step * (0..7).map(|r| DP_E[r] * k[r][d]).sum::<f64>();
                    let scale = tol * (1.0 + y[d].abs().max(y_new[d].abs()));
                    (e / scale).abs()
                })
                .fold(0.0, f64::max);
            if err <= 1.0 {
                t = if last { target } else { t + step };
                y = y_new;
                // first-same-as-last: the seventh stage is f at the new point
                k[0] = k[6].clone();
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if !last || err > 1.0 {
                h = step * factor;
            }
            if !(h > 0.0) || h < 1e-14 * target.max(1.0) {
                return Err(Error::StepSize { time: t, detail: "oracle step size underflow".into() });
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Reference trajectory of the discrete system for `config` on at most
/// [`ORACLE_MAX_CELLS`] cells, integrated adaptively at tolerance `tol`.
pub fn brute_force_oracle(config: &RunConfig, tol: f64) -> Result<Vec<GriddedDensity>> {
    if config.grid.cells > ORACLE_MAX_CELLS {
        return Err(Error::Study(format!(
            "the oracle is limited to {ORACLE_MAX_CELLS} cells, got {}",
            config.grid.cells
        )));
    }
    if config.grid.dust != DustPolicy::Ledger {
        return Err(Error::Study("the oracle supports the ledger dust policy only".into()));
    }
    let grid = config.grid.build(&config.trunc)?;
    let initial = config.initial;
    let start = crate::discretization::project_initial(|y| initial.eval(y), &grid)?;
    let system = NaiveSystem { grid, kernel: config.kernel, frag: config.frag, trunc: config.trunc };
    let m = start.values.len();
    let mut y0 = start.values.clone();
    y0.extend([0.0, 0.0]);
    let states = dormand_prince(|y| system.derivative(y), &y0, &config.output_times, tol)?;
    let mut out = vec![start];
    for (y, &t) in states.iter().zip(&config.output_times) {
        out.push(GriddedDensity {
            values: y[..m].to_vec(),
            dust_mass: y[m],
            escaped_mass: y[m + 1],
            roundoff_mass: 0.0,
            time: t,
        });
    }
    Ok(out)
}

/// `max_t max_i |g_i - r_i| / max_i |r_i|` between a trajectory and a
/// reference sequence at the same times.
pub fn max_relative_gap(traj: &Trajectory, reference: &[GriddedDensity]) -> Result<f64> {
    if traj.snapshots.len() != reference.len() {
        return Err(Error::Study("trajectory and reference lengths differ".into()));
    }
    let mut worst = 0.0f64;
    for (s, r) in traj.snapshots.iter().zip(reference) {
        if (s.state.time - r.time).abs() > 1e-12 * r.time.max(1.0) {
            return Err(Error::Study(format!("time mismatch {} vs {}", s.state.time, r.time)));
        }
        let scale = r.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gap = s.state.values.iter().zip(&r.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if scale > 0.0 {
            worst = worst.max(gap / scale);
        } else {
            worst = worst.max(gap);
        }
    }
    Ok(worst)
}

/// Fixed-step run: `max_dt = dt` with a generous safety factor, which is
/// exact stepping as long as the loss limit stays above `dt`.
pub fn fixed_step_config(base: &RunConfig, stepper: Stepper, dt: f64) -> RunConfig {
    let mut c = base.clone();
    c.stepper = stepper;
    c.max_dt = Some(dt);
    c.theta = 0.99;
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleComparison {
    pub rk4_gap: f64,
    pub rk4_dt: f64,
    pub euler_dts: Vec<f64>,
    pub euler_gaps: Vec<f64>,
    pub euler_order: OrderFit,
}

/// Compares rk4 at `rk4_dt` and euler at each of `euler_dts` against the
/// brute-force reference.
pub fn oracle_comparison(base: &RunConfig, rk4_dt: f64, euler_dts: &[f64]) -> Result<OracleComparison> {
    let reference = brute_force_oracle(base, 1e-12)?;
    let rk4 = run_or_err(&fixed_step_config(base, Stepper::Rk4, rk4_dt))?;
    let rk4_gap = max_relative_gap(&rk4, &reference)?;
    let euler_gaps: Vec<f64> = euler_dts
        .iter()
        .map(|&dt| {
            let t = run_or_err(&fixed_step_config(base, Stepper::Euler, dt))?;
            max_relative_gap(&t, &reference)
        })
        .collect::<Result<_>>()?;
    let euler_order = fit_order(euler_dts, &euler_gaps)?;
    Ok(OracleComparison { rk4_gap, rk4_dt, euler_dts: euler_dts.to_vec(), euler_gaps, euler_order })
}
