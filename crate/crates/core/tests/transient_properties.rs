//! Transient behaviour of a small piezoelectric ring driven in four phases.

use std::f64::consts::PI;

mod common;

use hcm_core::drive::{DriveSignalSpec, SectorVoltages, REVERSED_ORDER};
use hcm_core::error::Error;
use hcm_core::materials::RayleighDamping;
use hcm_core::modal::ModeSet;
use hcm_core::transient::{integrate, integrate_modal, TransientOptions, TransientResult};

use common::{ring, ND, SECTORS};

fn damped(zeta: f64, f: f64, periods: f64) -> TransientOptions {
    TransientOptions {
        duration: periods / f,
        dt: None,
        damping: RayleighDamping::for_modal_ratio(zeta, 2.0 * PI * f),
    }
}

fn run_modal(drive: &dyn SectorVoltages, opts: &TransientOptions) -> TransientResult {
    let r = ring();
    integrate_modal(&r.sys, &r.modes, &r.probes, drive, opts).unwrap()
}

fn run_full(drive: &dyn SectorVoltages, opts: &TransientOptions) -> TransientResult {
    let r = ring();
    integrate(&r.sys, &r.probes, drive, opts).unwrap()
}

fn forward(v0: f64) -> DriveSignalSpec {
    DriveSignalSpec::new(v0, ring().f_op, SECTORS, ND).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn modal_path_converges_to_full_order() {
    let r = ring();
    let opts = damped(0.05, r.f_op, 30.0);
    let full = run_full(&forward(100.0), &opts);
    let mut last = f64::INFINITY;
    for count in [10, 20, 40] {
        let subset = ModeSet {
            modes: r.modes.modes[..count].to_vec(),
            ..r.modes.clone()
        };
        let m = integrate_modal(&r.sys, &subset, &r.probes, &forward(100.0), &opts).unwrap();
        let err = rel(m.tip_amplitude, full.tip_amplitude).max(rel(m.steady_tangential_tip_speed, full.steady_tangential_tip_speed));
        assert!(err <= last * 1.05, "{count} modes: error {err} after {last}");
        last = err;
    }
    assert!(last < 0.01, "40-mode error {last}");
}

#[test]
fn energy_balance_holds_each_period_without_damping() {
    let r = ring();
    let opts = TransientOptions {
        duration: 12.0 / r.f_op,
        dt: None,
        damping: RayleighDamping::NONE,
    };
    for res in [run_full(&forward(100.0), &opts), run_modal(&forward(100.0), &opts)] {
        assert_eq!(res.energy_audit.len(), 12);
        let worst = res.energy_audit_max().unwrap();
        assert!(worst <= 0.01, "{}: audit {worst}", res.method);
    }
}

#[test]
fn settling_follows_the_modal_time_constant() {
    let r = ring();
    let zeta = 0.05;
    let res = run_full(&forward(100.0), &damped(zeta, r.f_op, 40.0));
    let t = res.settling_time.expect("settles");
    // Resonant build-up 1 − exp(−ζωt) is within 2 % once ζωt = ln 50.
    let expect = 50f64.ln() / (zeta * 2.0 * PI * r.f_op);
    let period = 1.0 / r.f_op;
    assert!((t - expect).abs() <= 2.0 * period, "settled at {t:e}, expected {expect:e}");
    assert!(t <= *res.time_grid.last().unwrap());
    assert!(res.standing_wave_ratio >= 1.0);
}

#[test]
fn quadrature_drive_makes_a_traveling_wave() {
    let res = run_full(&forward(100.0), &damped(0.05, ring().f_op, 30.0));
    assert_eq!(res.wave_nodal_diameter, ND);
    assert!(res.standing_wave_ratio < 1.2, "SWR {}", res.standing_wave_ratio);
}

#[test]
fn one_phase_group_alone_makes_a_standing_wave() {
    let d = forward(100.0);
    let res = run_full(&d.without_cos_pair(), &damped(0.05, ring().f_op, 30.0));
    assert!(res.standing_wave_ratio > 10.0, "SWR {}", res.standing_wave_ratio);
}

#[test]
fn reversing_the_phase_order_reverses_the_motor() {
    let r = ring();
    let opts = damped(0.05, r.f_op, 30.0);
    let fwd = run_full(&forward(100.0), &opts);
    let rev = run_full(
        &DriveSignalSpec::with_order(100.0, r.f_op, SECTORS, ND, REVERSED_ORDER).unwrap(),
        &opts,
    );
    assert_eq!(fwd.wave_sense, -rev.wave_sense);
    assert_eq!(fwd.rotation_sense, -rev.rotation_sense);
    assert!(rel(rev.standing_wave_ratio, fwd.standing_wave_ratio) < 1e-6);
    assert!(rel(rev.steady_tangential_tip_speed, fwd.steady_tangential_tip_speed) < 1e-6);
}

#[test]
fn tips_push_against_the_wave_at_contact() {
    let res = run_full(&forward(100.0), &damped(0.05, ring().f_op, 30.0));
    assert_ne!(res.wave_sense, 0);
    assert_eq!(res.rotation_sense, -res.wave_sense);
    assert!(res.steady_tangential_tip_speed > 0.0);
}

#[test]
fn response_is_linear_in_drive_amplitude() {
    let opts = damped(0.05, ring().f_op, 20.0);
    let a = run_full(&forward(50.0), &opts);
    let b = run_full(&forward(100.0), &opts);
    assert!(rel(b.tip_amplitude, 2.0 * a.tip_amplitude) < 1e-6);
    assert!(rel(b.steady_tangential_tip_speed, 2.0 * a.steady_tangential_tip_speed) < 1e-6);
    assert!(rel(b.standing_wave_ratio, a.standing_wave_ratio) < 1e-6);
}

#[test]
fn invalid_runs_are_rejected() {
    let r = ring();
    let d = forward(100.0);
    let period = 1.0 / r.f_op;
    let coarse = TransientOptions {
        duration: 20.0 * period,
        dt: Some(period / 10.0),
        damping: RayleighDamping::NONE,
    };
    assert!(matches!(integrate(&r.sys, &r.probes, &d, &coarse), Err(Error::StepTooLarge { .. })));
    let negative = TransientOptions {
        damping: RayleighDamping { alpha: -1.0, beta: 0.0 },
        ..damped(0.01, r.f_op, 20.0)
    };
    assert!(matches!(integrate(&r.sys, &r.probes, &d, &negative), Err(Error::DampingNegative { .. })));
    let wrong = DriveSignalSpec::new(100.0, r.f_op, 4, 1).unwrap();
    assert!(matches!(
        integrate_modal(&r.sys, &r.modes, &r.probes, &wrong, &damped(0.01, r.f_op, 20.0)),
        Err(Error::IncompatiblePattern(_))
    ));
}

#[test]
fn history_and_summary_are_written() {
    let res = run_modal(&forward(100.0), &damped(0.05, ring().f_op, 12.0));
    let dir = tempfile::tempdir().unwrap();
    res.write_history_csv(&dir.path().join("h.csv"), 8).unwrap();
    res.write_summary_json(&dir.path().join("s.json")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(csv.lines().count(), res.time_grid.len() + 1);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert!(json["standing_wave_ratio"].as_f64().unwrap() >= 1.0);
}
