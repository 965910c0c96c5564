//! Pass/fail checks of simulation output against the bench reference values.

use hcm_core::contact::{stall_torque, MotorAnchors};
use hcm_core::harness::{ComparisonTable, REFERENCE_MODES};
use hcm_core::modal::ModeSet;
use hcm_core::model::mode_frequency;
use hcm_core::transient::TransientResult;
use serde::{Deserialize, Serialize};

use crate::pipeline::RotorResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(id: &str, passed: bool, detail: String) -> Self {
        Check {
            id: id.into(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.id, self.detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Every reference mode within `tol` (relative) of its reference frequency.
pub fn frequencies(id: &str, modes: &ModeSet, tol: f64) -> Check {
    let mut worst = (0usize, f64::INFINITY, 0.0f64);
    let mut parts = Vec::new();
    let mut ok = true;
    for &(k, khz, _) in &REFERENCE_MODES {
        let Some(f) = mode_frequency(modes, k) else {
            ok = false;
            parts.push(format!("mode {k} missing"));
            continue;
        };
        let d = rel(f, khz * 1e3);
        ok &= d <= tol;
        if !(d <= worst.2) {
            worst = (k, f, d);
        }
        parts.push(format!("{k}:{:.3}kHz({:+.1}%)", f / 1e3, 100.0 * (f / (khz * 1e3) - 1.0)));
    }
    Check::new(
        id,
        ok,
        format!("{} | worst mode {} at {:.2}% (tol {:.0}%)", parts.join(" "), worst.0, 100.0 * worst.2, 100.0 * tol),
    )
}

/// Consecutive-mode frequency ratios within `tol` of the reference ratios.
pub fn ratios(id: &str, modes: &ModeSet, tol: f64) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for w in REFERENCE_MODES.windows(2) {
        let (k0, f0, _) = w[0];
        let (k1, f1, _) = w[1];
        let want = f1 / f0;
        match (mode_frequency(modes, k0), mode_frequency(modes, k1)) {
            (Some(a), Some(b)) => {
                let d = rel(b / a, want);
                ok &= d <= tol;
                parts.push(format!("{k1}/{k0}:{:.3}vs{:.3}({:+.1}%)", b / a, want, 100.0 * (b / a / want - 1.0)));
            }
            _ => {
                ok = false;
                parts.push(format!("{k1}/{k0}:missing"));
            }
        }
    }
    Check::new(id, ok, format!("{} (tol {:.0}%)", parts.join(" "), 100.0 * tol))
}

/// Largest measured-vs-simulated difference against a bound, in percent.
pub fn comparison(id: &str, table: &ComparisonTable, bound_pct: f64) -> Check {
    match table.pct_diff_max() {
        Some(d) => Check::new(id, d <= bound_pct, format!("max diff {d:.2}% (bound {bound_pct:.1}%)")),
        None => Check::new(id, false, "no populated measured/simulated pair".into()),
    }
}

/// Spread `max/min − 1` of the tip displacement of modes 3–7.
pub fn displacement_spread(modes: &ModeSet) -> Option<(f64, Vec<(usize, f64)>)> {
    let tips: Vec<(usize, f64)> = (3..=7)
        .map(|k| {
            let idx = modes.track_by_nodal_diameter(&[k])[0]?;
            Some((k, modes.modes[idx].max_radial_tip_displacement))
        })
        .collect::<Option<_>>()?;
    let lo = tips.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    let hi = tips.iter().map(|t| t.1).fold(0.0, f64::max);
    Some((hi / lo - 1.0, tips))
}

/// Tip displacements of modes 3–7 within `tol` of one another, reported in
/// µm after scaling mode 5 to its reference amplitude.
pub fn displacement_uniformity(id: &str, modes: &ModeSet, tol: f64) -> Check {
    let Some((spread, tips)) = displacement_spread(modes) else {
        return Check::new(id, false, "modes 3-7 not all tracked".into());
    };
    let r5 = REFERENCE_MODES.iter().find(|r| r.0 == 5).map(|r| r.2 * 1e-6).unwrap_or(1.0);
    let t5 = tips.iter().find(|t| t.0 == 5).map(|t| t.1).unwrap_or(1.0);
    let parts: Vec<String> = tips.iter().map(|(k, t)| format!("{k}:{:.2}um", 1e6 * t * r5 / t5)).collect();
    Check::new(
        id,
        spread <= tol,
        format!("{} | spread {:.1}% (tol {:.0}%)", parts.join(" "), 100.0 * spread, 100.0 * tol),
    )
}

/// Envelope settling time inside `target ± tol`.
pub fn settling(id: &str, tr: &TransientResult, target: f64, tol: f64) -> Check {
    let growth = tr
        .settling_time_growth
        .map_or("none".into(), |t| format!("{:.3} ms", t * 1e3));
    match tr.settling_time {
        Some(t) => Check::new(
            id,
            (t - target).abs() <= tol,
            format!(
                "envelope settles at {:.3} ms (target {:.1} ± {:.1} ms); growth criterion {growth}",
                t * 1e3,
                target * 1e3,
                tol * 1e3
            ),
        ),
        None => Check::new(id, false, format!("envelope did not settle within the run; growth criterion {growth}")),
    }
}

/// Calibration anchor reproduced and model speed linear in voltage.
pub fn speed_anchor(id: &str, rotor: &RotorResult) -> Check {
    let a = &rotor.anchors;
    let got = rotor.speed_at(a.speed_vpp);
    let anchor_ok = rel(got, a.speed_rpm) <= 1e-9;
    let r2 = rotor.speed.linear_fit.r_squared;
    let lin_ok = (1.0 - r2).abs() <= 1e-9;
    Check::new(
        id,
        anchor_ok && lin_ok,
        format!(
            "{} {:.4} rpm at {} Vpp (anchor {:.4}); model R^2 = {:.12}; efficiency {:.4}",
            a.name, got, a.speed_vpp, a.speed_rpm, r2, rotor.contact.contact_efficiency
        ),
    )
}

/// R² of the measured speed fit within `tol` of the reference value.
pub fn speed_fit(id: &str, rotor: &RotorResult, reference_r2: f64, tol: f64) -> Check {
    match &rotor.measured_speed {
        Some(m) => {
            let r2 = m.linear_fit.r_squared;
            Check::new(
                id,
                (r2 - reference_r2).abs() <= tol,
                format!("measured fit R^2 = {r2:.4} (reference {reference_r2:.4} ± {tol})"),
            )
        }
        None => Check::new(
            id,
            false,
            format!("no measured speed-voltage data supplied; reference R^2 {reference_r2:.4} cannot be checked"),
        ),
    }
}

/// Held-out torque at the largest anchor preload within `tol`, and the
/// model exactly affine in preload.
pub fn torque_holdout(id: &str, rotor: &RotorResult, tol: f64) -> Check {
    let a: &MotorAnchors = &rotor.anchors;
    let Some(&(m, want)) = a.torque_points.last() else {
        return Check::new(id, false, "no torque anchors".into());
    };
    let c = &rotor.contact;
    let got = stall_torque(c, m * c.gravity);
    let t0 = stall_torque(c, 0.0);
    let t1 = stall_torque(c, 0.5 * m * c.gravity);
    let affine = ((got - t0) - 2.0 * (t1 - t0)).abs() <= 1e-12 * got.abs();
    let d = got / want - 1.0;
    Check::new(
        id,
        d.abs() <= tol && affine,
        format!(
            "{} at {:.0} g: {got:.4} mNm vs {want:.4} ({:+.1}%, tol {:.0}%); affine {}",
            a.name,
            m * 1e3,
            100.0 * d,
            100.0 * tol,
            if affine { "yes" } else { "no" }
        ),
    )
}
