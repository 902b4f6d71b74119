use proptest::prelude::*;

use coagfrag::config::FileConfig;
use coagfrag::discretization::{two_point_split, Birth, CoagTables, DustPolicy, FragMatrix, Grid, GriddedDensity};
use coagfrag::kernels::{FragmentationSpec, KernelFamily, KernelSpec, TruncationSpec, Zeta};
use coagfrag::solver::{stable_dt, Stepper, System};

fn kernel_strategy() -> impl Strategy<Value = KernelSpec> {
    let k1 = 0.1..10.0f64;
    prop_oneof![
        k1.clone().prop_map(|k| KernelSpec::constant(k).unwrap()),
        (k1.clone(), 0.0..0.499f64).prop_map(|(k, b)| KernelSpec::singular_affine(k, b).unwrap()),
        k1.clone().prop_map(|k| KernelSpec::brownian(k).unwrap()),
        (k1, 0.0..=1.0f64, 0.0..0.499f64).prop_map(|(k, a, b)| KernelSpec::granulation(k, a, b).unwrap()),
    ]
}

fn log_uniform() -> impl Strategy<Value = f64> {
    (-6.0..6.0f64).prop_map(|u| 10f64.powf(u))
}

fn zeta_strategy() -> impl Strategy<Value = Zeta> {
    prop_oneof![Just(Zeta::Conservative), Just(Zeta::NonConservative)]
}

/// Grid, truncation and a nonnegative state with some empty cells.
fn system_inputs() -> impl Strategy<Value = (Grid, TruncationSpec, Vec<f64>)> {
    (4usize..40, 2.0..200.0f64, zeta_strategy()).prop_flat_map(|(cells, n, zeta)| {
        let states = prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.0..5.0f64], cells);
        (Just(cells), Just(n), Just(zeta), states)
    })
    .prop_map(|(cells, n, zeta, values)| {
        let trunc = TruncationSpec::new(n, zeta).unwrap();
        (Grid::geometric(1.0 / n, n, cells).unwrap(), trunc, values)
    })
}

fn state(values: Vec<f64>) -> GriddedDensity {
    GriddedDensity { values, ..GriddedDensity::zeros(0) }
}

/// `dM1/dt` of the resolved part together with the sum of absolute terms.
fn mass_rate(grid: &Grid, dvalues: &[f64]) -> (f64, f64) {
    let terms: Vec<f64> = dvalues.iter().enumerate().map(|(i, d)| d * grid.cell_power_integral(i, 1.0)).collect();
    (terms.iter().sum(), terms.iter().map(|t| t.abs()).sum())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn kernels_are_symmetric_and_enveloped(k in kernel_strategy(), y in log_uniform(), z in log_uniform()) {
        let a = k.eval(y, z).unwrap();
        prop_assert_eq!(a.to_bits(), k.eval(z, y).unwrap().to_bits());
        prop_assert!(a >= 0.0);
        prop_assert!(a <= k.envelope(y, z) * (1.0 + 1e-12), "{:?}: A = {} envelope = {}", k.family(), a, k.envelope(y, z));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn conservative_truncation_never_exceeds_escaping(
        k in kernel_strategy(), n in 2.0..100.0f64, y in log_uniform(), z in log_uniform()
    ) {
        let cons = k.eval_truncated(&TruncationSpec::new(n, Zeta::Conservative).unwrap(), y, z).unwrap();
        let non = k.eval_truncated(&TruncationSpec::new(n, Zeta::NonConservative).unwrap(), y, z).unwrap();
        prop_assert!(cons <= non);
    }

    #[test]
    fn conservative_loss_never_exceeds_escaping((grid, trunc, values) in system_inputs(), k in kernel_strategy()) {
        let s = state(values);
        let rate = |zeta| {
            let t = TruncationSpec::new(trunc.n(), zeta).unwrap();
            System::new(grid.clone(), &k, &FragmentationSpec::none(), &t, DustPolicy::Ledger).unwrap().rhs(&s).unwrap()
        };
        let (cons, non) = (rate(Zeta::Conservative), rate(Zeta::NonConservative));
        for (a, b) in cons.loss.iter().zip(&non.loss) {
            prop_assert!(*a <= *b * (1.0 + 1e-14));
        }
        prop_assert_eq!(cons.escaped, 0.0);
    }

    #[test]
    fn coagulation_conserves_mass((grid, trunc, values) in system_inputs(), k in kernel_strategy()) {
        let sys = System::new(grid.clone(), &k, &FragmentationSpec::none(), &trunc, DustPolicy::Ledger).unwrap();
        let r = sys.rhs(&state(values)).unwrap();
        let (dm, scale) = mass_rate(&grid, &r.dvalues);
        prop_assert!((dm + r.escaped).abs() <= 1e-13 * scale.max(f64::MIN_POSITIVE), "dM1 = {} escaped = {}", dm, r.escaped);
        if trunc.is_conservative() {
            prop_assert_eq!(r.escaped, 0.0);
        }
    }

    #[test]
    fn fragmentation_conserves_mass(
        (grid, trunc, values) in system_inputs(), nu in -0.95..=0.0f64, k2 in 0.1..5.0f64, lump in any::<bool>()
    ) {
        let frag = FragmentationSpec::new(nu, k2).unwrap();
        let policy = if lump { DustPolicy::Lump } else { DustPolicy::Ledger };
        let none = KernelSpec::constant(0.0).unwrap();
        let sys = System::new(grid.clone(), &none, &frag, &trunc, policy).unwrap();
        let r = sys.rhs(&state(values)).unwrap();
        let (dm, scale) = mass_rate(&grid, &r.dvalues);
        prop_assert!((dm + r.dust).abs() <= 1e-13 * scale.max(f64::MIN_POSITIVE), "dM1 = {} dust = {}", dm, r.dust);
        if lump {
            prop_assert_eq!(r.dust, 0.0);
        }
        let fm = FragMatrix::build(&grid, &frag, policy);
        for j in 0..grid.cells() {
            for i in 0..grid.cells() {
                prop_assert!(fm.coefficient(i, j) >= 0.0);
            }
        }
    }

    #[test]
    fn split_weights_are_convex(u in 1e-3..10.0f64, gap in 1e-6..10.0f64, s in 0.0..=1.0f64) {
        let v = u + gap;
        let b = (u + s * gap).min(v);
        let (wl, wu) = two_point_split(b, u, v);
        prop_assert!((0.0..=1.0).contains(&wl) && (0.0..=1.0).contains(&wu));
        prop_assert!((wl + wu - 1.0).abs() <= 1e-12);
        prop_assert!((wl * u + wu * v - b).abs() <= 1e-12 * b);
    }

    #[test]
    fn table_births_keep_number_and_mass((grid, trunc, _v) in system_inputs(), k in kernel_strategy()) {
        let tables = CoagTables::build(&grid, &k, &trunc).unwrap();
        let c = grid.centers();
        for p in tables.pairs() {
            let b = c[p.i] + c[p.j];
            match p.birth {
                Birth::Split { lower, w_lower, w_upper } => {
                    prop_assert!((0.0..=1.0).contains(&w_lower) && (0.0..=1.0).contains(&w_upper));
                    prop_assert!((w_lower + w_upper - 1.0).abs() <= 1e-12);
                    prop_assert!((w_lower * c[lower] + w_upper * c[lower + 1] - b).abs() <= 1e-12 * b);
                }
                Birth::Lumped { cell, weight } => {
                    prop_assert!(weight >= 1.0 && b < trunc.n());
                    prop_assert!((weight * c[cell] - b).abs() <= 1e-12 * b);
                }
                Birth::Escape { mass } => {
                    prop_assert!(!trunc.is_conservative() && mass >= trunc.n());
                }
            }
        }
    }

    #[test]
    fn steps_keep_the_density_nonnegative(
        (grid, trunc, values) in system_inputs(),
        k in kernel_strategy(),
        k2 in 0.0..5.0f64,
        theta in 0.05..0.95f64,
        euler in any::<bool>(),
    ) {
        let frag = FragmentationSpec::new(0.0, k2).unwrap();
        let sys = System::new(grid, &k, &frag, &trunc, DustPolicy::Ledger).unwrap();
        let mut s = state(values);
        let stepper = if euler { Stepper::Euler } else { Stepper::Rk4 };
        for _ in 0..5 {
            let r = sys.rhs(&s).unwrap();
            let dt = stable_dt(&s, &r, theta, 1.0);
            s = sys.step(&s, dt, stepper, Some(&r)).unwrap();
            prop_assert!(s.values.iter().all(|v| *v >= 0.0));
        }
    }
}

fn config_text() -> impl Strategy<Value = String> {
    (
        prop_oneof![
            Just("family = constant".to_string()),
            (0.0..0.49f64).prop_map(|b| format!("family = singular-affine\nbeta = {b}")),
            Just("family = brownian".to_string()),
            (0.0..=1.0f64, 0.0..0.3f64).prop_map(|(a, b)| format!("family = granulation\na = {a}\nb = {b}")),
        ],
        0.1..5.0f64,
        -0.5..=0.0f64,
        0.0..3.0f64,
        2.0..500.0f64,
        any::<bool>(),
        2usize..300,
        0.1..10.0f64,
        1usize..30,
        prop::option::of(1e-3..0.5f64),
    )
        .prop_map(|(family, k1, nu, k2, n, zeta, cells, horizon, count, max_dt)| {
            let mut s = format!(
                "[kernel]\n{family}\nk1 = {k1}\n[fragmentation]\nnu = {nu}\nk2 = {k2}\n[truncation]\nn = {n}\nzeta = {}\n\
                 [grid]\ncells = {cells}\n[outputs]\nhorizon = {horizon}\ncount = {count}\n",
                u8::from(zeta)
            );
            if let Some(dt) = max_dt {
                s.push_str(&format!("[stepper]\nmethod = euler\nmax_dt = {dt}\n"));
            }
            s
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn config_echo_round_trips(text in config_text()) {
        // some random combinations are rejected by validation; those are skipped
        if let Ok(cfg) = FileConfig::parse(&text) {
            let echo = cfg.echo();
            let back = FileConfig::parse(&echo).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.echo(), echo);
        }
    }
}

#[test]
fn kernel_family_names_parse_back() {
    for name in KernelFamily::NAMES {
        let extra = match name {
            "singular-affine" => "beta = 0.1\n",
            "granulation" => "a = 0.5\nb = 0.1\n",
            _ => "",
        };
        let text = format!("[kernel]\nfamily = {name}\n{extra}[truncation]\nn = 10\nzeta = 1\n[grid]\ncells = 8\n[outputs]\nhorizon = 1\n");
        let cfg = FileConfig::parse(&text).unwrap();
        assert_eq!(cfg.run.kernel.family().name(), name);
    }
}
