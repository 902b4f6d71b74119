//! CSV and JSON report emission. Every number is written with 17
//! significant digits so reports round-trip to the same `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::ser::{Serialize, Serializer};
use serde_json::value::RawValue;

use crate::diagnostics::{Check, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::solver::Trajectory;

/// `v` with 17 significant digits in exponent form.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// JSON number with 17 significant digits; non-finite values become `null`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = RawValue::from_string(fmt_num(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

pub fn nums(v: &[f64]) -> Vec<Num> {
    v.iter().copied().map(Num).collect()
}

#[derive(serde::Serialize)]
struct CheckRecord<'a> {
    name: &'a str,
    lhs: Num,
    bound: Num,
    pass: bool,
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes `header` and `rows` as CSV.
pub fn write_csv_to<W: Write>(
    out: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    write_csv_to(fs::File::create(path)?, header, rows)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_trajectory_to(fs::File::create(path)?, traj)
}

/// `time,cell,pivot,density`, one row per snapshot and cell.
pub fn write_trajectory_to<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let pivots = traj.grid.pivots();
    let rows = traj.snapshots.iter().flat_map(|s| {
        s.state.values.iter().enumerate().map(move |(i, v)| {
            vec![fmt_num(s.state.time), i.to_string(), fmt_num(pivots[i]), fmt_num(*v)]
        })
    });
    write_csv_to(out, &["time", "cell", "pivot", "density"], rows)
}

pub fn write_moments(path: &Path, traj: &Trajectory) -> Result<()> {
    write_moments_to(fs::File::create(path)?, traj)
}

pub fn write_moments_to<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let rows = traj.snapshots.iter().map(|s| {
        let m = &s.moments;
        vec![
            fmt_num(s.state.time),
            fmt_num(m.m0),
            fmt_num(m.m1),
            fmt_num(m.m_neg2beta),
            fmt_num(s.state.dust_mass),
            fmt_num(s.state.escaped_mass),
            fmt_num(m.mass_residual),
        ]
    });
    write_csv_to(out, &["time", "M0", "M1", "M_neg2beta", "dust", "escaped", "mass_residual"], rows)
}

pub fn write_checks(path: &Path, checks: &[Check]) -> Result<()> {
    let records: Vec<CheckRecord> = checks
        .iter()
        .map(|c| CheckRecord { name: &c.name, lhs: Num(c.lhs), bound: Num(c.bound), pass: c.pass })
        .collect();
    write_json(path, &records)
}

/// `time,test_function,residual`.
pub fn write_weak_residuals(path: &Path, traj: &Trajectory, report: &DiagnosticsReport) -> Result<()> {
    let times = traj.times();
    let rows = report.weak.iter().flat_map(|series| {
        times
            .iter()
            .zip(&series.residuals)
            .map(move |(t, r)| vec![fmt_num(*t), series.tag.clone(), fmt_num(*r)])
    });
    write_csv(path, &["time", "test_function", "residual"], rows)
}

/// All run artifacts under `dir`.
pub fn emit_run(dir: &Path, echo: &str, traj: &Trajectory, report: &DiagnosticsReport) -> Result<()> {
    ensure_dir(dir)?;
    fs::write(dir.join("config.echo"), echo)?;
    write_trajectory(&dir.join("trajectory.csv"), traj)?;
    write_moments(&dir.join("moments.csv"), traj)?;
    write_checks(&dir.join("checks.json"), &report.checks)?;
    write_weak_residuals(&dir.join("weak_residuals.csv"), traj, report)?;
    Ok(())
}

/// Parses a number written by [`fmt_num`].
pub fn parse_num(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Config(format!("not a number: '{s}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for &v in &[0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = fmt_num(v);
            assert_eq!(parse_num(&s).unwrap(), v, "{s}");
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17);
        }
    }

    #[test]
    fn json_numbers() {
        let v = serde_json::to_string(&vec![Num(0.5), Num(f64::NAN), Num(-3.0)]).unwrap();
        assert_eq!(v, "[5.0000000000000000e-1,null,-3.0000000000000000e0]");
        let back: Vec<Option<f64>> = serde_json::from_str(&v).unwrap();
        assert_eq!(back, vec![Some(0.5), None, Some(-3.0)]);
    }
}
