//! Small runs with known answers.

use coagfrag::harness::AnalyticCase;
use coagfrag::initial::InitialData;
use coagfrag::kernels::{FragmentationSpec, KernelSpec, TruncationSpec, Zeta};
use coagfrag::solver::{run, RunConfig};

#[test]
fn constant_kernel_number_decays_to_two_thirds() {
    // M0(t) = 2/(2+t) for A = 1 and g0 = e^-y
    let mut c = AnalyticCase::ConstantKernel.config(1e-4, 1e3, 160, 1.0, 4).unwrap();
    c.max_dt = Some(0.05);
    let t = run(&c).unwrap();
    let m0 = t.snapshots.last().unwrap().moments.m0;
    assert!((m0 - 2.0 / 3.0).abs() <= 0.01 * 2.0 / 3.0, "M0(1) = {m0}");
}

#[test]
fn pure_fragmentation_number_grows_to_three() {
    // M0(t) = 1 + t for b = 2/z, S = y
    let c = AnalyticCase::PureFragmentation.config(1e-4, 100.0, 160, 2.0, 4).unwrap();
    let t = run(&c).unwrap();
    let m0 = t.snapshots.last().unwrap().moments.m0;
    assert!((m0 - 3.0).abs() <= 0.01 * 3.0, "M0(2) = {m0}");
}

#[test]
fn no_dynamics_leaves_the_state_unchanged() {
    let c = RunConfig::new(
        KernelSpec::constant(0.0).unwrap(),
        FragmentationSpec::new(0.0, 0.0).unwrap(),
        TruncationSpec::new(20.0, Zeta::NonConservative).unwrap(),
        40,
        InitialData::unit_exponential(),
        3.0,
        6,
    );
    let t = run(&c).unwrap();
    let first = t.initial();
    for s in &t.snapshots {
        assert_eq!(s.state.values, first.values);
        assert_eq!(s.state.dust_mass, 0.0);
        assert_eq!(s.state.escaped_mass, 0.0);
    }
}

#[test]
fn zero_initial_datum_stays_zero() {
    let mut c = AnalyticCase::ConstantKernel.config(0.01, 50.0, 30, 1.0, 2).unwrap();
    c.initial = InitialData::Zero;
    let t = run(&c).unwrap();
    assert!(t.last().values.iter().all(|v| *v == 0.0));
}
