//! Explicit time integration of the truncated coagulation-fragmentation
//! system with loss-limited step control.
//!
//! The mass ledgers (dust, escaped) are advanced with the same stepper as the
//! densities, so the discrete balance `M1 + dust + escaped` telescopes to
//! roundoff at every step.

use std::fmt;

use log::debug;
use rayon::prelude::*;

use crate::diagnostics::DiagnosticsSpec;
use crate::discretization::{
    moment, project_initial, CoagTables, DustPolicy, FragMatrix, Grid, GriddedDensity,
};
use crate::error::{Error, Result};
use crate::initial::InitialData;
use crate::kernels::{FragmentationSpec, KernelSpec, TruncationSpec};

/// Relative size of negativity treated as roundoff and clamped.
pub const CLAMP_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stepper {
    Euler,
    Rk4,
}

impl Stepper {
    pub fn name(&self) -> &'static str {
        match self {
            Stepper::Euler => "euler",
            Stepper::Rk4 => "rk4",
        }
    }
}

impl fmt::Display for Stepper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub cells: usize,
    /// Lowest edge; `None` means `1/n`.
    pub y_min: Option<f64>,
    pub dust: DustPolicy,
}

impl GridSpec {
    pub fn new(cells: usize) -> Self {
        Self { cells, y_min: None, dust: DustPolicy::Ledger }
    }

    pub fn resolved_y_min(&self, trunc: &TruncationSpec) -> f64 {
        self.y_min.unwrap_or(1.0 / trunc.n())
    }

    pub fn build(&self, trunc: &TruncationSpec) -> Result<Grid> {
        Grid::geometric(self.resolved_y_min(trunc), trunc.n(), self.cells)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kernel: KernelSpec,
    pub frag: FragmentationSpec,
    pub trunc: TruncationSpec,
    pub grid: GridSpec,
    pub initial: InitialData,
    pub horizon: f64,
    /// Sorted output times in `(0, horizon]`; time 0 is always recorded.
    pub output_times: Vec<f64>,
    pub stepper: Stepper,
    /// Safety factor on the loss-limited step.
    pub theta: f64,
    pub max_dt: Option<f64>,
    pub parallel: bool,
    pub diagnostics: DiagnosticsSpec,
}

/// `count` equally spaced times ending at `horizon`.
pub fn uniform_times(horizon: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|k| horizon * k as f64 / count as f64).collect()
}

impl RunConfig {
    pub fn new(
        kernel: KernelSpec,
        frag: FragmentationSpec,
        trunc: TruncationSpec,
        cells: usize,
        initial: InitialData,
        horizon: f64,
        outputs: usize,
    ) -> Self {
        let diagnostics = DiagnosticsSpec::default_for(&kernel, &frag, &trunc);
        Self {
            kernel,
            frag,
            trunc,
            grid: GridSpec::new(cells),
            initial,
            horizon,
            output_times: uniform_times(horizon, outputs),
            stepper: Stepper::Rk4,
            theta: 0.5,
            max_dt: None,
            parallel: false,
            diagnostics,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Construction(msg));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.output_times.is_empty() {
            return bad("at least one output time is required".into());
        }
        let mut prev = 0.0;
        for &t in &self.output_times {
            if !(t > prev && t <= self.horizon * (1.0 + 1e-12)) {
                return bad(format!(
                    "output times must increase strictly within (0, {}], got {t}",
                    self.horizon
                ));
            }
            prev = t;
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if let Some(dt) = self.max_dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("max_dt must be positive, got {dt}"));
            }
        }
        let y_min = self.grid.resolved_y_min(&self.trunc);
        if !(y_min > 0.0 && y_min < self.trunc.n()) {
            return bad(format!("y_min must lie in (0, n), got {y_min}"));
        }
        if self.grid.cells < 2 {
            return bad(format!("grid needs at least 2 cells, got {}", self.grid.cells));
        }
        self.initial.validate(self.kernel.beta())?;
        self.diagnostics.validate(&self.kernel, &self.frag, &self.trunc)?;
        Ok(())
    }
}

/// Time derivatives of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    pub dvalues: Vec<f64>,
    /// Per-cell loss rate in density units (nonnegative).
    pub loss: Vec<f64>,
    pub dust: f64,
    pub escaped: f64,
}

/// The assembled discrete operator for one configuration.
#[derive(Debug, Clone)]
pub struct System {
    grid: Grid,
    tables: CoagTables,
    fmat: FragMatrix,
    selection: Vec<f64>,
    parallel: bool,
}

impl System {
    pub fn new(
        grid: Grid,
        kernel: &KernelSpec,
        frag: &FragmentationSpec,
        trunc: &TruncationSpec,
        dust: DustPolicy,
    ) -> Result<Self> {
        let tables = CoagTables::build(&grid, kernel, trunc)?;
        let fmat = FragMatrix::build(&grid, frag, dust);
        let selection = grid.pivots().iter().map(|&x| frag.selection_rate(trunc, x)).collect();
        Ok(Self { grid, tables, fmat, selection, parallel: false })
    }

    pub fn from_config(config: &RunConfig) -> Result<Self> {
        let grid = config.grid.build(&config.trunc)?;
        let mut sys = Self::new(grid, &config.kernel, &config.frag, &config.trunc, config.grid.dust)?;
        sys.parallel = config.parallel;
        Ok(sys)
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn tables(&self) -> &CoagTables {
        &self.tables
    }

    pub fn frag_matrix(&self) -> &FragMatrix {
        &self.fmat
    }

    /// Selection rate at each pivot.
    pub fn selection(&self) -> &[f64] {
        &self.selection
    }

    /// Rates of change for a nonnegative state.
    pub fn rhs(&self, state: &GriddedDensity) -> Result<Rates> {
        if let Some(i) = state.values.iter().position(|v| !(*v >= 0.0)) {
            return Err(Error::Contract(format!(
                "density must be nonnegative, cell {i} holds {}",
                state.values[i]
            )));
        }
        Ok(self.rates(&state.values))
    }

    pub(crate) fn rates(&self, values: &[f64]) -> Rates {
        let w = self.grid.widths();
        let cells = w.len();
        let counts: Vec<f64> = values.iter().zip(w).map(|(g, w)| g * w).collect();
        let broken: Vec<f64> = counts.iter().zip(&self.selection).map(|(n, s)| n * s).collect();

        let cell = |k: usize| -> (f64, f64) {
            let gain: f64 = self
                .tables
                .gains_into(k)
                .iter()
                .map(|&(i, j, c)| c * counts[i as usize] * counts[j as usize])
                .sum();
            let partner: f64 =
                self.tables.loss_row(k).iter().zip(&counts).map(|(l, n)| l * n).sum();
            let coag_loss = counts[k] * partner;
            let frag_gain: f64 =
                self.fmat.row(k)[k..].iter().zip(&broken[k..]).map(|(f, b)| f * b).sum();
            let loss = coag_loss + broken[k];
            ((gain + frag_gain - loss) / w[k], loss / w[k])
        };
        let per_cell: Vec<(f64, f64)> = if self.parallel {
            (0..cells).into_par_iter().map(cell).collect()
        } else {
            (0..cells).map(cell).collect()
        };
        let (dvalues, loss) = per_cell.into_iter().unzip();

        let escaped = self
            .tables
            .escapes()
            .iter()
            .map(|&(i, j, cm)| cm * counts[i as usize] * counts[j as usize])
            .sum();
        let c = self.grid.centers();
        let dust = (0..cells).map(|j| self.fmat.dust_fraction(j) * c[j] * broken[j]).sum();
        Rates { dvalues, loss, dust, escaped }
    }

    /// Advances `state` by `dt`. `rates`, when given, must be the rates at
    /// `state` and are reused as the first stage.
    pub fn step(
        &self,
        state: &GriddedDensity,
        dt: f64,
        stepper: Stepper,
        rates: Option<&Rates>,
    ) -> Result<GriddedDensity> {
        if dt == 0.0 {
            return Ok(state.clone());
        }
        let owned;
        let k1 = match rates {
            Some(r) => r,
            None => {
                owned = self.rhs(state)?;
                &owned
            }
        };
        let mut next = match stepper {
            Stepper::Euler => advance(state, &[(1.0, k1)], dt),
            Stepper::Rk4 => {
                let s2 = advance(state, &[(0.5, k1)], dt);
                let k2 = self.rates(&s2.values);
                let s3 = advance(state, &[(0.5, &k2)], dt);
                let k3 = self.rates(&s3.values);
                let s4 = advance(state, &[(1.0, &k3)], dt);
                let k4 = self.rates(&s4.values);
                let sixth = 1.0 / 6.0;
                advance(
                    state,
                    &[(sixth, k1), (2.0 * sixth, &k2), (2.0 * sixth, &k3), (sixth, &k4)],
                    dt,
                )
            }
        };
        next.time = state.time + dt;
        self.clamp_roundoff(state, &mut next)?;
        Ok(next)
    }

    fn clamp_roundoff(&self, before: &GriddedDensity, next: &mut GriddedDensity) -> Result<()> {
        let scale = before
            .values
            .iter()
            .chain(&next.values)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = CLAMP_TOLERANCE * scale;
        for (i, v) in next.values.iter_mut().enumerate() {
            if *v >= 0.0 {
                continue;
            }
            if !(*v >= -tol) {
                return Err(Error::StepSize {
                    time: before.time,
                    detail: format!("cell {i} reached {v:e} (tolerance {tol:e})"),
                });
            }
            next.roundoff_mass += *v * self.grid.cell_power_integral(i, 1.0);
            *v = 0.0;
        }
        Ok(())
    }
}

/// `state + dt * sum_k weight_k * rates_k`, ledgers included.
fn advance(state: &GriddedDensity, stages: &[(f64, &Rates)], dt: f64) -> GriddedDensity {
    let mut out = state.clone();
    for (i, v) in out.values.iter_mut().enumerate() {
        let d: f64 = stages.iter().map(|(w, r)| w * r.dvalues[i]).sum();
        *v += dt * d;
    }
    out.dust_mass += dt * stages.iter().map(|(w, r)| w * r.dust).sum::<f64>();
    out.escaped_mass += dt * stages.iter().map(|(w, r)| w * r.escaped).sum::<f64>();
    out
}

/// `theta / max_i(loss_i / g_i)` over populated cells, capped by `cap`.
pub fn stable_dt(state: &GriddedDensity, rates: &Rates, theta: f64, cap: f64) -> f64 {
    let worst = state
        .values
        .iter()
        .zip(&rates.loss)
        .filter(|(v, _)| **v > 0.0)
        .fold(0.0f64, |m, (v, l)| m.max(l / v));
    if worst > 0.0 {
        (theta / worst).min(cap)
    } else {
        cap
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotMoments {
    pub m0: f64,
    pub m1: f64,
    pub m_neg2beta: f64,
    /// `|M1(0) - M1 - dust - escaped - roundoff| / M1(0)`.
    pub mass_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub state: GriddedDensity,
    pub moments: SnapshotMoments,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub beta: f64,
    pub snapshots: Vec<Snapshot>,
    pub steps: usize,
}

impl Trajectory {
    fn new(grid: Grid, beta: f64) -> Self {
        Self { grid, beta, snapshots: Vec::new(), steps: 0 }
    }

    fn record(&mut self, state: GriddedDensity) {
        let g = &self.grid;
        let total = state.ledger_total(g);
        let reference = self.snapshots.first().map_or(total, |s| s.state.ledger_total(g));
        let scale = if reference != 0.0 { reference.abs() } else { 1.0 };
        let moments = SnapshotMoments {
            m0: moment(g, &state, 0.0),
            m1: moment(g, &state, 1.0),
            m_neg2beta: moment(g, &state, -2.0 * self.beta),
            mass_residual: (total - reference).abs() / scale,
        };
        self.snapshots.push(Snapshot { state, moments });
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.state.time).collect()
    }

    pub fn initial(&self) -> &GriddedDensity {
        &self.snapshots[0].state
    }

    pub fn last(&self) -> &GriddedDensity {
        &self.snapshots.last().expect("trajectory is never empty").state
    }
}

#[derive(Debug, thiserror::Error)]
#[error("run failed after {} snapshots: {error}", partial.snapshots.len())]
pub struct RunFailure {
    #[source]
    pub error: Error,
    pub partial: Trajectory,
}

/// Integrates from the projected initial datum through every output time.
pub fn run(config: &RunConfig) -> std::result::Result<Trajectory, RunFailure> {
    let early = |error: Error| RunFailure {
        error,
        partial: Trajectory::new(Grid::geometric(0.5, 2.0, 2).expect("static grid"), 0.0),
    };
    config.validate().map_err(early)?;
    let system = System::from_config(config).map_err(early)?;
    run_system(config, &system)
}

/// As [`run`], reusing an assembled system.
pub fn run_system(config: &RunConfig, system: &System) -> std::result::Result<Trajectory, RunFailure> {
    let grid = system.grid().clone();
    let mut traj = Trajectory::new(grid, config.kernel.beta());
    let initial = config.initial;
    let state = match project_initial(|y| initial.eval(y), system.grid()) {
        Ok(s) => s,
        Err(error) => return Err(RunFailure { error, partial: traj }),
    };
    let max_dt = config.max_dt.unwrap_or(f64::INFINITY);
    let mut state = state;
    traj.record(state.clone());
    for &target in &config.output_times {
        while state.time < target {
            let rates = match system.rhs(&state) {
                Ok(r) => r,
                Err(error) => return Err(RunFailure { error, partial: traj }),
            };
            let remaining = target - state.time;
            let mut dt = stable_dt(&state, &rates, config.theta, remaining.min(max_dt));
            let finishing = remaining <= dt * (1.0 + 1e-9);
            if finishing {
                dt = remaining;
            }
            if !(dt > 0.0) {
                let error = Error::StepSize { time: state.time, detail: "step size collapsed to zero".into() };
                return Err(RunFailure { error, partial: traj });
            }
            state = match system.step(&state, dt, config.stepper, Some(&rates)) {
                Ok(s) => s,
                Err(error) => return Err(RunFailure { error, partial: traj }),
            };
            if finishing {
                state.time = target;
            }
            traj.steps += 1;
        }
        traj.record(state.clone());
    }
    debug!("run finished: {} steps, {} snapshots", traj.steps, traj.snapshots.len());
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Zeta;

    fn single_cell_loss_system() -> System {
        // Two cells, pure fragmentation with nu = 0: loss S(x_j) g_j.
        let grid = Grid::geometric(0.5, 2.0, 2).unwrap();
        let trunc = TruncationSpec::new(2.0, Zeta::Conservative).unwrap();
        System::new(
            grid,
            &KernelSpec::constant(0.0).unwrap(),
            &FragmentationSpec::new(0.0, 1.0).unwrap(),
            &trunc,
            DustPolicy::Ledger,
        )
        .unwrap()
    }

    #[test]
    fn zero_density_has_zero_rates() {
        let grid = Grid::geometric(0.1, 10.0, 12).unwrap();
        let trunc = TruncationSpec::new(10.0, Zeta::NonConservative).unwrap();
        let sys = System::new(
            grid,
            &KernelSpec::singular_affine(1.0, 0.25).unwrap(),
            &FragmentationSpec::new(-0.3, 1.0).unwrap(),
            &trunc,
            DustPolicy::Ledger,
        )
        .unwrap();
        let z = GriddedDensity::zeros(12);
        let r = sys.rhs(&z).unwrap();
        assert!(r.dvalues.iter().chain(&r.loss).all(|v| *v == 0.0));
        assert_eq!((r.dust, r.escaped), (0.0, 0.0));
        assert_eq!(stable_dt(&z, &r, 0.5, 0.25), 0.25);
        let next = sys.step(&z, 0.0, Stepper::Rk4, None).unwrap();
        assert_eq!(next, z);
    }

    #[test]
    fn negative_input_is_rejected() {
        let sys = single_cell_loss_system();
        let mut s = GriddedDensity::zeros(2);
        s.values[1] = -1.0;
        assert!(matches!(sys.rhs(&s), Err(Error::Contract(_))));
    }

    #[test]
    fn stable_dt_formula() {
        let s = GriddedDensity { values: vec![1.0], ..GriddedDensity::zeros(1) };
        let r = Rates { dvalues: vec![-1.0], loss: vec![1.0], dust: 0.0, escaped: 0.0 };
        assert_eq!(stable_dt(&s, &r, 0.5, f64::INFINITY), 0.5);
        let r2 = Rates { loss: vec![2.0], ..r };
        assert!((stable_dt(&s, &r2, 0.999_999, f64::INFINITY) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn pure_loss_steps() {
        // Only the lowest cell is populated, so frag gain from above is zero;
        // the selection rate is S(x_0) = x_0. Rescale dt so that rate*dt = 0.1.
        let sys = single_cell_loss_system();
        let s0 = sys.selection()[0];
        let mut state = GriddedDensity::zeros(2);
        state.values[0] = 1.0;
        // Daughters of cell 0 land back in cell 0; isolate the loss part.
        let gain_back = sys.frag_matrix().coefficient(0, 0);
        let net = s0 * (1.0 - gain_back);
        let dt = 0.1 / net;
        let e = sys.step(&state, dt, Stepper::Euler, None).unwrap();
        assert!((e.values[0] - 0.9).abs() < 1e-14, "{}", e.values[0]);
        let r = sys.step(&state, dt, Stepper::Rk4, None).unwrap();
        assert!((r.values[0] - (-0.1f64).exp()).abs() < 1e-6, "{}", r.values[0]);
        assert!((r.values[0] - 0.904837).abs() < 1e-6);
    }

    #[test]
    fn output_time_validation() {
        let mut c = RunConfig::new(
            KernelSpec::constant(1.0).unwrap(),
            FragmentationSpec::none(),
            TruncationSpec::new(10.0, Zeta::Conservative).unwrap(),
            20,
            InitialData::unit_exponential(),
            1.0,
            4,
        );
        assert!(c.validate().is_ok());
        c.output_times = vec![0.5, 0.25];
        assert!(c.validate().is_err());
        c.output_times = vec![0.5, 1.5];
        assert!(c.validate().is_err());
        c.output_times = vec![1.0];
        c.theta = 1.0;
        assert!(c.validate().is_err());
    }
}
