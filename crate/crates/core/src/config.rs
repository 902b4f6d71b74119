//! Sectioned `key = value` configuration files.
//!
//! ```text
//! [kernel]
//! family = singular-affine
//! k1 = 1.0
//! beta = 0.25
//!
//! [truncation]
//! n = 50
//! zeta = 1
//!
//! [grid]
//! cells = 160
//!
//! [outputs]
//! horizon = 1.0
//! count = 20
//! ```
//!
//! Everything after `#` on a line is a comment. Unknown sections and keys are
//! rejected, as are keys that do not apply to the chosen kernel family or
//! initial datum. [`FileConfig::echo`] writes every resolved value back in the
//! same format, and parsing the echo reproduces the configuration exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::diagnostics::{DiagnosticsSpec, TestFunction};
use crate::discretization::DustPolicy;
use crate::error::{Error, Result};
use crate::harness::AnalyticCase;
use crate::initial::InitialData;
use crate::kernels::{FragmentationSpec, KernelFamily, KernelSpec, TruncationSpec, Zeta};
use crate::solver::{uniform_times, GridSpec, RunConfig, Stepper};

const KNOWN: &[(&str, &[&str])] = &[
    ("kernel", &["family", "k1", "beta", "a", "b"]),
    ("fragmentation", &["nu", "k2"]),
    ("truncation", &["n", "zeta"]),
    ("grid", &["cells", "y_min", "dust"]),
    ("initial", &["kind", "amplitude", "rate", "exponent"]),
    ("stepper", &["method", "theta", "max_dt"]),
    ("outputs", &["horizon", "count", "times"]),
    ("diagnostics", &["gamma", "r", "test_functions", "psi"]),
    ("study", &["n_values", "cells_per_doubling", "zetas", "cells", "case"]),
];

/// Parameters of the multi-run subcommands.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub n_values: Vec<f64>,
    pub cells_per_doubling: usize,
    pub zetas: Vec<Zeta>,
    /// Grid sizes for analytic validation.
    pub cells: Vec<usize>,
    pub case: AnalyticCase,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            n_values: vec![10.0, 20.0, 40.0, 80.0],
            cells_per_doubling: 12,
            zetas: vec![Zeta::Conservative, Zeta::NonConservative],
            cells: vec![80, 160, 320],
            case: AnalyticCase::ConstantKernel,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileConfig {
    pub run: RunConfig,
    pub study: StudySpec,
}

struct Entries {
    map: BTreeMap<(String, String), (String, usize)>,
}

fn config_err(msg: String) -> Error {
    Error::Config(msg)
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(format!("line {lineno}: malformed section header '{line}'")))?
                    .trim();
                if !KNOWN.iter().any(|(s, _)| *s == name) {
                    return Err(config_err(format!("line {lineno}: unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {lineno}: expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| config_err(format!("line {lineno}: key `{key}` appears before any section")))?;
            let keys = KNOWN.iter().find(|(s, _)| *s == sec).expect("known section").1;
            if !keys.contains(&key) {
                return Err(config_err(format!("line {lineno}: unknown key `{sec}.{key}`")));
            }
            let slot = (sec.to_string(), key.to_string());
            if map.contains_key(&slot) {
                return Err(config_err(format!("line {lineno}: duplicate key `{sec}.{key}`")));
            }
            map.insert(slot, (value.to_string(), lineno));
        }
        Ok(Self { map })
    }

    fn raw(&self, sec: &str, key: &str) -> Option<&str> {
        self.map.get(&(sec.to_string(), key.to_string())).map(|(v, _)| v.as_str())
    }

    fn has(&self, sec: &str, key: &str) -> bool {
        self.raw(sec, key).is_some()
    }

    fn required(&self, sec: &str, key: &str) -> Result<&str> {
        self.raw(sec, key).ok_or_else(|| config_err(format!("missing required key `{sec}.{key}`")))
    }

    fn typed<T: std::str::FromStr>(&self, sec: &str, key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| config_err(format!("key `{sec}.{key}`: cannot parse '{value}'")))
    }

    fn num(&self, sec: &str, key: &str) -> Result<Option<f64>> {
        self.raw(sec, key).map(|v| self.typed(sec, key, v)).transpose()
    }

    fn num_or(&self, sec: &str, key: &str, default: f64) -> Result<f64> {
        Ok(self.num(sec, key)?.unwrap_or(default))
    }

    fn required_num(&self, sec: &str, key: &str) -> Result<f64> {
        let v = self.required(sec, key)?;
        self.typed(sec, key, v)
    }

    fn list<T: std::str::FromStr>(&self, sec: &str, key: &str) -> Result<Option<Vec<T>>> {
        let Some(v) = self.raw(sec, key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|item| self.typed(sec, key, item.trim()))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Fails if `key` is present although it does not apply.
    fn reject(&self, sec: &str, key: &str, context: &str) -> Result<()> {
        if self.has(sec, key) {
            return Err(config_err(format!("key `{sec}.{key}` does not apply to {context}")));
        }
        Ok(())
    }
}

fn key_err(sec: &str, key: &str, e: Error) -> Error {
    config_err(format!("key `{sec}.{key}`: {e}"))
}

fn parse_kernel(e: &Entries) -> Result<KernelSpec> {
    let family = e.required("kernel", "family")?;
    let k1 = e.num_or("kernel", "k1", 1.0)?;
    let context = format!("kernel family `{family}`");
    let fam = match family {
        "constant" | "brownian" => {
            for k in ["beta", "a", "b"] {
                e.reject("kernel", k, &context)?;
            }
            if family == "constant" {
                KernelFamily::Constant
            } else {
                KernelFamily::Brownian
            }
        }
        "singular-affine" => {
            e.reject("kernel", "a", &context)?;
            e.reject("kernel", "b", &context)?;
            KernelFamily::SingularAffine { beta: e.required_num("kernel", "beta")? }
        }
        "granulation" => {
            e.reject("kernel", "beta", &context)?;
            KernelFamily::Granulation { a: e.required_num("kernel", "a")?, b: e.required_num("kernel", "b")? }
        }
        other => {
            return Err(config_err(format!(
                "key `kernel.family`: unknown family '{other}' (expected one of {})",
                KernelFamily::NAMES.join(", ")
            )))
        }
    };
    KernelSpec::new(fam, k1).map_err(|err| key_err("kernel", "family", err))
}

fn parse_initial(e: &Entries) -> Result<InitialData> {
    let kind = e.raw("initial", "kind").unwrap_or("exponential");
    let context = format!("initial kind `{kind}`");
    match kind {
        "zero" => {
            for k in ["amplitude", "rate", "exponent"] {
                e.reject("initial", k, &context)?;
            }
            Ok(InitialData::Zero)
        }
        "exponential" => {
            e.reject("initial", "exponent", &context)?;
            Ok(InitialData::Exponential {
                amplitude: e.num_or("initial", "amplitude", 1.0)?,
                rate: e.num_or("initial", "rate", 1.0)?,
            })
        }
        "power-exponential" => Ok(InitialData::PowerExponential {
            amplitude: e.num_or("initial", "amplitude", 1.0)?,
            exponent: e.required_num("initial", "exponent")?,
            rate: e.num_or("initial", "rate", 1.0)?,
        }),
        other => Err(config_err(format!(
            "key `initial.kind`: unknown kind '{other}' (expected zero, exponential or power-exponential)"
        ))),
    }
}

fn parse_zeta(sec: &str, key: &str, v: &str) -> Result<Zeta> {
    match v.trim() {
        "0" => Ok(Zeta::NonConservative),
        "1" => Ok(Zeta::Conservative),
        other => Err(config_err(format!("key `{sec}.{key}`: zeta must be 0 or 1, got '{other}'"))),
    }
}

fn parse_dust(v: &str) -> Result<DustPolicy> {
    match v {
        "ledger" => Ok(DustPolicy::Ledger),
        "lump" => Ok(DustPolicy::Lump),
        other => Err(config_err(format!("key `grid.dust`: expected ledger or lump, got '{other}'"))),
    }
}

fn parse_stepper(v: &str) -> Result<Stepper> {
    match v {
        "euler" => Ok(Stepper::Euler),
        "rk4" => Ok(Stepper::Rk4),
        other => Err(config_err(format!("key `stepper.method`: expected euler or rk4, got '{other}'"))),
    }
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let e = Entries::parse(text)?;
        let kernel = parse_kernel(&e)?;
        let frag = FragmentationSpec::new(e.num_or("fragmentation", "nu", 0.0)?, e.num_or("fragmentation", "k2", 0.0)?)
            .map_err(|err| key_err("fragmentation", "nu", err))?;
        let n = e.required_num("truncation", "n")?;
        let zeta = parse_zeta("truncation", "zeta", e.required("truncation", "zeta")?)?;
        let trunc = TruncationSpec::new(n, zeta).map_err(|err| key_err("truncation", "n", err))?;

        let cells_raw = e.required("grid", "cells")?;
        let grid = GridSpec {
            cells: e.typed("grid", "cells", cells_raw)?,
            y_min: e.num("grid", "y_min")?,
            dust: e.raw("grid", "dust").map(parse_dust).transpose()?.unwrap_or(DustPolicy::Ledger),
        };
        let initial = parse_initial(&e)?;

        let horizon = e.required_num("outputs", "horizon")?;
        if e.has("outputs", "count") && e.has("outputs", "times") {
            return Err(config_err("keys `outputs.count` and `outputs.times` are mutually exclusive".into()));
        }
        let output_times = match e.list::<f64>("outputs", "times")? {
            Some(t) => t,
            None => {
                let count: usize = match e.raw("outputs", "count") {
                    Some(v) => e.typed("outputs", "count", v)?,
                    None => 10,
                };
                if count == 0 {
                    return Err(config_err("key `outputs.count` must be positive".into()));
                }
                uniform_times(horizon, count)
            }
        };

        let mut run = RunConfig::new(kernel, frag, trunc, grid.cells, initial, horizon, 1);
        run.grid = grid;
        run.output_times = output_times;
        run.stepper = e.raw("stepper", "method").map(parse_stepper).transpose()?.unwrap_or(Stepper::Rk4);
        run.theta = e.num_or("stepper", "theta", 0.5)?;
        run.max_dt = e.num("stepper", "max_dt")?;

        let mut diag = DiagnosticsSpec::default_for(&kernel, &frag, &trunc);
        diag.gamma = e.num_or("diagnostics", "gamma", diag.gamma)?;
        if let Some(r) = e.num("diagnostics", "r")? {
            diag.radius = r;
            diag.test_functions = vec![TestFunction::Constant(1.0), TestFunction::Capped(r)];
        }
        if let Some(tags) = e.raw("diagnostics", "test_functions") {
            diag.test_functions = tags
                .split(',')
                .map(|t| TestFunction::parse(t.trim()))
                .collect::<Result<_>>()
                .map_err(|err| key_err("diagnostics", "test_functions", err))?;
        }
        if let Some(tag) = e.raw("diagnostics", "psi") {
            diag.psi = TestFunction::parse(tag).map_err(|err| key_err("diagnostics", "psi", err))?;
        }
        run.diagnostics = diag;
        run.validate().map_err(|err| config_err(format!("invalid configuration: {err}")))?;

        let mut study = StudySpec::default();
        if let Some(v) = e.list("study", "n_values")? {
            study.n_values = v;
        }
        if let Some(v) = e.raw("study", "cells_per_doubling") {
            study.cells_per_doubling = e.typed("study", "cells_per_doubling", v)?;
        }
        if let Some(v) = e.raw("study", "zetas") {
            study.zetas = v.split(',').map(|z| parse_zeta("study", "zetas", z)).collect::<Result<_>>()?;
        }
        if let Some(v) = e.list("study", "cells")? {
            study.cells = v;
        }
        if let Some(v) = e.raw("study", "case") {
            study.case = AnalyticCase::parse(v).map_err(|err| key_err("study", "case", err))?;
        }
        if study.n_values.is_empty() || study.zetas.is_empty() || study.cells.is_empty() {
            return Err(config_err("study lists must not be empty".into()));
        }
        Ok(Self { run, study })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|err| config_err(format!("cannot read {}: {err}", path.display())))?;
        Self::parse(&text)
    }

    /// Every resolved value in config syntax.
    pub fn echo(&self) -> String {
        let r = &self.run;
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");

        s.push_str("[kernel]\n");
        let _ = writeln!(s, "family = {}", r.kernel.family().name());
        let _ = writeln!(s, "k1 = {:?}", r.kernel.scale());
        match r.kernel.family() {
            KernelFamily::SingularAffine { beta } => {
                let _ = writeln!(s, "beta = {beta:?}");
            }
            KernelFamily::Granulation { a, b } => {
                let _ = writeln!(s, "a = {a:?}\nb = {b:?}");
            }
            _ => {}
        }
        let _ = writeln!(s, "\n[fragmentation]\nnu = {:?}\nk2 = {:?}", r.frag.nu(), r.frag.k2());
        let _ = writeln!(s, "\n[truncation]\nn = {:?}\nzeta = {}", r.trunc.n(), r.trunc.zeta());
        let _ = writeln!(s, "\n[grid]\ncells = {}", r.grid.cells);
        if let Some(y) = r.grid.y_min {
            let _ = writeln!(s, "y_min = {y:?}");
        }
        let _ = writeln!(s, "dust = {}", r.grid.dust.name());
        let _ = writeln!(s, "\n[initial]\nkind = {}", r.initial.kind());
        match r.initial {
            InitialData::Zero => {}
            InitialData::Exponential { amplitude, rate } => {
                let _ = writeln!(s, "amplitude = {amplitude:?}\nrate = {rate:?}");
            }
            InitialData::PowerExponential { amplitude, exponent, rate } => {
                let _ = writeln!(s, "amplitude = {amplitude:?}\nexponent = {exponent:?}\nrate = {rate:?}");
            }
        }
        let _ = writeln!(s, "\n[stepper]\nmethod = {}\ntheta = {:?}", r.stepper, r.theta);
        if let Some(dt) = r.max_dt {
            let _ = writeln!(s, "max_dt = {dt:?}");
        }
        let _ = writeln!(s, "\n[outputs]\nhorizon = {:?}\ntimes = {}", r.horizon, join(&r.output_times));
        let d = &r.diagnostics;
        let tags: Vec<String> = d.test_functions.iter().map(|t| t.tag()).collect();
        let _ = writeln!(
            s,
            "\n[diagnostics]\ngamma = {:?}\nr = {:?}\ntest_functions = {}\npsi = {}",
            d.gamma,
            d.radius,
            tags.join(", "),
            d.psi.tag()
        );
        let st = &self.study;
        let zetas: Vec<String> = st.zetas.iter().map(|z| z.to_string()).collect();
        let cells: Vec<String> = st.cells.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(
            s,
            "\n[study]\nn_values = {}\ncells_per_doubling = {}\nzetas = {}\ncells = {}\ncase = {}",
            join(&st.n_values),
            st.cells_per_doubling,
            zetas.join(", "),
            cells.join(", "),
            st.case.name()
        );
        s
    }
}
