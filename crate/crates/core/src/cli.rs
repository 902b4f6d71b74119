//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a run fails or a check does not pass,
//! 2 for configuration and I/O errors.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::acceptance;
use crate::config::FileConfig;
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::harness::{self, AnalyticCase};
use crate::kernels::KernelFamily;
use crate::report::{self, fmt_num, nums, Num};
use crate::solver;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Slack allowed when validation errors are compared across refinements.
const VALIDATION_NOISE: f64 = 0.05;
/// Tolerance on the conservative-minus-escaping mass gap.
const GAP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Parser)]
#[command(name = "coagfrag", version, about = "Truncated coagulation-fragmentation solver and verification harness")]
pub struct Cli {
    /// Worker threads for the operator and for independent runs.
    #[arg(long, global = true, value_name = "THREADS")]
    pub parallel: Option<usize>,

    /// Run every acceptance criterion and print one line per criterion.
    #[arg(long)]
    pub seed_check: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one configuration and evaluate its diagnostics.
    Run(IoArgs),
    /// Distances between solutions for a doubling sequence of cutoffs.
    StudyConvergence(IoArgs),
    /// Conservative against non-conservative truncation at one cutoff.
    CompareTruncations(IoArgs),
    /// Grid refinement against a closed-form solution.
    Validate(IoArgs),
    /// List the kernel families and their parameters.
    Kernels,
}

#[derive(Debug, clap::Args)]
pub struct IoArgs {
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

enum Failure {
    Config(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::UnknownTestFunction(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => {
                Failure::Config(e)
            }
            other => Failure::Check(other.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let threads = cli.parallel;
    let body = move || dispatch(cli);
    let result = match threads {
        Some(0) => Err(Failure::Config(Error::Config("--parallel needs at least one thread".into()))),
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(body),
            Err(e) => Err(Failure::Config(Error::Config(format!("cannot start thread pool: {e}")))),
        },
        None => body(),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(Failure::Check(msg)) => {
            eprintln!("failed: {msg}");
            EXIT_CHECK
        }
    }
}

fn dispatch(cli: Cli) -> CmdResult {
    let parallel = cli.parallel.is_some();
    if cli.seed_check {
        return seed_check();
    }
    match cli.command {
        None => Err(Failure::Config(Error::Config("no command given; try --help".into()))),
        Some(Command::Kernels) => {
            kernels();
            Ok(())
        }
        Some(Command::Run(a)) => cmd_run(&load(&a.config, parallel)?, &a.out),
        Some(Command::StudyConvergence(a)) => cmd_study(&load(&a.config, parallel)?, &a.out),
        Some(Command::CompareTruncations(a)) => cmd_compare(&load(&a.config, parallel)?, &a.out),
        Some(Command::Validate(a)) => cmd_validate(&load(&a.config, parallel)?, &a.out),
    }
}

fn load(path: &Path, parallel: bool) -> std::result::Result<FileConfig, Failure> {
    let mut cfg = FileConfig::load(path)?;
    cfg.run.parallel = parallel;
    log::info!("loaded {}", path.display());
    Ok(cfg)
}

fn seed_check() -> CmdResult {
    let outcomes = acceptance::run_all();
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("criteria {} did not pass", failed.join(", "))))
    }
}

fn kernels() {
    let rows = [
        ("constant", "k1", "k1", "k1"),
        ("singular-affine", "k1 (1 + y + z) / (y z)^beta", "k1, beta in [0, 1/2)", "k1"),
        ("brownian", "k1 (y^(1/3) + z^(1/3)) (y^(-1/3) + z^(-1/3))", "k1", "4 k1, beta = 1/3"),
        ("granulation", "k1 (y + z)^a / (y z)^b", "k1, a in [0, 1], b in [0, 1/2)", "k1, beta = b"),
    ];
    debug_assert_eq!(rows.len(), KernelFamily::NAMES.len());
    println!("{:<16} {:<46} {:<32} envelope constant", "family", "rate", "parameters");
    for (name, rate, params, env) in rows {
        println!("{name:<16} {rate:<46} {params:<32} {env}");
    }
    println!();
    println!("fragmentation: b(y|z) = (nu + 2) y^nu / z^(nu + 1), S(y) = k2 y, nu in (-1, 0]");
    println!("test functions: one, const:c, capped:R, indicator:a:b, identity");
}

fn cmd_run(cfg: &FileConfig, out: &Path) -> CmdResult {
    let traj = match solver::run(&cfg.run) {
        Ok(t) => t,
        Err(f) => {
            report::ensure_dir(out)?;
            std::fs::write(out.join("config.echo"), cfg.echo()).map_err(Error::from)?;
            report::write_trajectory(&out.join("trajectory.csv"), &f.partial)?;
            report::write_moments(&out.join("moments.csv"), &f.partial)?;
            return Err(Failure::Check(f.to_string()));
        }
    };
    log::info!("run finished after {} steps", traj.steps);
    let rep = diagnostics::evaluate(&traj, &cfg.run)?;
    report::emit_run(out, &cfg.echo(), &traj, &rep)?;
    for c in &rep.checks {
        println!(
            "{:<36} {} lhs = {} bound = {}",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            fmt_num(c.lhs),
            fmt_num(c.bound)
        );
    }
    if rep.all_pass() {
        Ok(())
    } else {
        let failed: Vec<&str> = rep.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        Err(Failure::Check(format!("checks failed: {}", failed.join(", "))))
    }
}

#[derive(Serialize)]
struct StudySummary {
    zeta: u8,
    y_min: Num,
    n_values: Vec<Num>,
    distances: Vec<Num>,
    decreasing: bool,
}

fn cmd_study(cfg: &FileConfig, out: &Path) -> CmdResult {
    report::ensure_dir(out)?;
    let st = &cfg.study;
    let mut studies = Vec::new();
    for &zeta in &st.zetas {
        log::info!("truncation study with zeta = {zeta}");
        studies.push(harness::truncation_sequence_study(&cfg.run, &st.n_values, zeta, st.cells_per_doubling)?);
    }
    let distance_rows = studies.iter().flat_map(|s| {
        s.distances.iter().enumerate().map(move |(k, d)| {
            vec![s.zeta.to_string(), fmt_num(s.runs[k].n), fmt_num(s.runs[k + 1].n), fmt_num(*d)]
        })
    });
    report::write_csv(&out.join("convergence.csv"), &["zeta", "n", "next_n", "distance"], distance_rows)?;
    let run_rows = studies.iter().flat_map(|s| {
        s.runs.iter().map(|r| {
            vec![
                r.zeta.to_string(),
                fmt_num(r.n),
                r.cells.to_string(),
                r.steps.to_string(),
                fmt_num(r.final_mass),
                fmt_num(r.dust),
                fmt_num(r.escaped),
                fmt_num(r.max_mass_residual),
            ]
        })
    });
    report::write_csv(
        &out.join("runs.csv"),
        &["zeta", "n", "cells", "steps", "final_mass", "dust", "escaped", "max_mass_residual"],
        run_rows,
    )?;
    let summary: Vec<StudySummary> = studies
        .iter()
        .map(|s| StudySummary {
            zeta: s.zeta.flag(),
            y_min: Num(s.y_min),
            n_values: s.runs.iter().map(|r| Num(r.n)).collect(),
            distances: nums(&s.distances),
            decreasing: s.decreasing,
        })
        .collect();
    report::write_json(&out.join("summary.json"), &summary)?;
    for s in &studies {
        let d: Vec<String> = s.distances.iter().map(|d| format!("{d:.4e}")).collect();
        println!("zeta = {}: distances [{}] decreasing = {}", s.zeta, d.join(", "), s.decreasing);
    }
    if studies.iter().all(|s| s.decreasing) {
        Ok(())
    } else {
        Err(Failure::Check("distances between consecutive cutoffs do not decrease".into()))
    }
}

#[derive(Serialize)]
struct CompareSummary {
    n: Num,
    min_mass_gap: Num,
    final_escaped: Num,
    mass_loss: Vec<(Num, Num)>,
    ordered: bool,
}

fn cmd_compare(cfg: &FileConfig, out: &Path) -> CmdResult {
    report::ensure_dir(out)?;
    let n = cfg.run.trunc.n();
    let cmp = harness::compare_truncations(&cfg.run, n)?;
    let rows = (0..cmp.times.len()).map(|k| {
        vec![fmt_num(cmp.times[k]), fmt_num(cmp.mass_gap[k]), fmt_num(cmp.escaped[k]), fmt_num(cmp.dust_gap[k])]
    });
    report::write_csv(&out.join("truncation_gap.csv"), &["time", "mass_gap", "escaped", "dust_gap"], rows)?;
    let curve = harness::mass_loss_curve(&cfg.run, &cfg.study.n_values)?;
    report::write_csv(
        &out.join("mass_loss.csv"),
        &["n", "escaped"],
        curve.iter().map(|(n, e)| vec![fmt_num(*n), fmt_num(*e)]),
    )?;
    let min_gap = cmp.mass_gap.iter().copied().fold(f64::INFINITY, f64::min);
    let ordered = min_gap >= -GAP_TOLERANCE;
    let summary = CompareSummary {
        n: Num(n),
        min_mass_gap: Num(min_gap),
        final_escaped: Num(*cmp.escaped.last().expect("nonempty")),
        mass_loss: curve.iter().map(|&(n, e)| (Num(n), Num(e))).collect(),
        ordered,
    };
    report::write_json(&out.join("summary.json"), &summary)?;
    println!("n = {n}: min(M1[zeta=1] - M1[zeta=0]) = {min_gap:.4e}, escaped(T) = {:.4e}", summary.final_escaped.0);
    if ordered {
        Ok(())
    } else {
        Err(Failure::Check(format!("conservative mass fell below non-conservative mass by {:.3e}", -min_gap)))
    }
}

#[derive(Serialize)]
struct ValidateSummary {
    case: &'static str,
    cells: Vec<usize>,
    terminal_errors: Vec<Num>,
    order: Option<Num>,
    monotone: bool,
}

/// The analytic case's kernel and datum on the file's domain, times and stepper.
fn validation_base(cfg: &FileConfig, case: AnalyticCase) -> Result<solver::RunConfig> {
    let r = &cfg.run;
    let y_min = r.grid.y_min.unwrap_or(1e-4);
    let mut base = case.config(y_min, r.trunc.n(), r.grid.cells, r.horizon, 1)?;
    base.output_times = r.output_times.clone();
    base.stepper = r.stepper;
    base.theta = r.theta;
    base.max_dt = r.max_dt;
    base.parallel = r.parallel;
    Ok(base)
}

fn cmd_validate(cfg: &FileConfig, out: &Path) -> CmdResult {
    report::ensure_dir(out)?;
    let case = cfg.study.case;
    let base = validation_base(cfg, case)?;
    let rep = harness::validate_analytic(case, &base, &cfg.study.cells)?;
    let rows = rep.runs.iter().flat_map(|run| {
        (0..run.times.len()).map(move |k| {
            vec![
                run.cells.to_string(),
                fmt_num(run.times[k]),
                fmt_num(run.errors[k]),
                fmt_num(run.m0[k]),
                fmt_num(run.m1[k]),
            ]
        })
    });
    report::write_csv(&out.join("validation.csv"), &["cells", "time", "error", "M0", "M1"], rows)?;
    let monotone = rep.monotone(VALIDATION_NOISE);
    let summary = ValidateSummary {
        case: case.name(),
        cells: rep.runs.iter().map(|r| r.cells).collect(),
        terminal_errors: nums(&rep.terminal_errors()),
        order: rep.order.map(|o| Num(o.order)),
        monotone,
    };
    report::write_json(&out.join("summary.json"), &summary)?;
    for run in &rep.runs {
        println!("{} cells: error(T) = {:.4e}", run.cells, run.errors.last().expect("nonempty"));
    }
    if let Some(o) = rep.order {
        println!("observed order {:.3}", o.order);
    }
    if monotone {
        Ok(())
    } else {
        Err(Failure::Check("errors do not decrease under refinement".into()))
    }
}
