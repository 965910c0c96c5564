//! Frequency sweep against the eigen solution of the same model.

mod common;

use hcm_core::error::Error;
use hcm_core::harness::{run_sweep, SweepOptions};
use hcm_core::materials::RayleighDamping;
use hcm_core::par::Execution;
use hcm_core::transient::ModalBasis;

use common::ring;

fn opts(zeta: f64, df: f64) -> SweepOptions {
    let r = ring();
    SweepOptions {
        f_lo: 40e3,
        f_hi: 70e3,
        df,
        damping: RayleighDamping::for_modal_ratio(zeta, 2.0 * std::f64::consts::PI * r.f_op),
        ..SweepOptions::default()
    }
}

#[test]
fn peaks_coincide_with_driven_eigenfrequencies() {
    let r = ring();
    // Half-power bandwidth 2ζf (about 20 Hz) stays below the smallest gap
    // between distinct eigenfrequencies (about 120 Hz), and so does 2 df.
    let o = opts(2e-4, 20.0);
    let s = run_sweep(&r.sys, &r.modes, &r.probes, &o).unwrap();
    assert!(s.frequencies.windows(2).all(|w| w[1] > w[0]));
    for p in &s.detected_peaks {
        let i = p.matched_mode.unwrap_or_else(|| panic!("peak at {} Hz matches no mode", p.freq_hz));
        assert!((r.modes.modes[i].frequency_hz - p.freq_hz).abs() <= o.df);
        assert!(p.amplitude > o.prominence * s.noise_floor);
    }

    // Every distinct in-band eigenfrequency that the driven sector excites
    // shows up as exactly one peak.
    let basis = ModalBasis::new(&r.sys, &r.modes, &r.probes);
    let drive: Vec<f64> = basis.participation.iter().map(|g| g[o.electrode].abs()).collect();
    let strongest = drive.iter().cloned().fold(0.0, f64::max);
    let mut clusters: Vec<f64> = Vec::new();
    for (i, m) in r.modes.modes.iter().enumerate() {
        let f = m.frequency_hz;
        if !(o.f_lo..=o.f_hi).contains(&f) || drive[i] < 0.01 * strongest {
            continue;
        }
        if clusters.last().is_none_or(|&c| f - c > 1e-6 * f) {
            clusters.push(f);
        }
    }
    assert!(clusters.len() >= 5, "{clusters:?}");
    for f in &clusters {
        let n = s.detected_peaks.iter().filter(|p| (p.freq_hz - f).abs() <= o.df).count();
        assert_eq!(n, 1, "eigenfrequency {f} Hz has {n} peaks");
    }
}

#[test]
fn coarse_grid_merges_close_modes_with_a_warning() {
    let r = ring();
    let s = run_sweep(&r.sys, &r.modes, &r.probes, &opts(0.01, 500.0)).unwrap();
    assert!(!s.warnings.is_empty());
}

#[test]
fn sequential_and_parallel_sweeps_agree() {
    let r = ring();
    let mut o = opts(0.01, 100.0);
    let a = run_sweep(&r.sys, &r.modes, &r.probes, &o).unwrap();
    o.execution = Execution::Sequential;
    let b = run_sweep(&r.sys, &r.modes, &r.probes, &o).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sweep_preconditions() {
    let r = ring();
    let undamped = SweepOptions {
        damping: RayleighDamping::NONE,
        ..opts(0.01, 100.0)
    };
    assert!(matches!(
        run_sweep(&r.sys, &r.modes, &r.probes, &undamped),
        Err(Error::DampingRequired)
    ));
    let empty = SweepOptions {
        f_lo: 1e3,
        f_hi: 2e3,
        ..opts(0.01, 100.0)
    };
    assert!(matches!(
        run_sweep(&r.sys, &r.modes, &r.probes, &empty),
        Err(Error::NoModesInBand { .. })
    ));
    let backwards = SweepOptions {
        f_lo: 60e3,
        f_hi: 50e3,
        ..opts(0.01, 100.0)
    };
    assert!(run_sweep(&r.sys, &r.modes, &r.probes, &backwards).is_err());
}
