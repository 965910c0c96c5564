//! Rotor contact: kinematic no-load speed, friction-limited torque and the
//! speed-voltage fit.
//!
//! The rotor is driven by the tangential tip velocity at the moment of
//! contact, scaled by one efficiency factor that lumps slip and interface
//! losses. Torque capacity is Coulomb friction on the conical seat: an axial
//! preload `F` presses the 1° taper with normal force `F / sin(taper)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{rad_per_s_to_rpm, STANDARD_GRAVITY};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactConfig {
    pub name: String,
    /// Added preload, kg.
    pub preload_mass: f64,
    pub friction_coefficient: f64,
    /// Radius of the tooth-tip ring, m.
    pub contact_radius: f64,
    pub taper_angle: f64,
    /// Ratio of rotor surface speed to stator tip speed, in (0, 1].
    pub contact_efficiency: f64,
    /// Normal force with no added preload, N (rotor self-weight and seating).
    pub baseline_normal_force: f64,
    pub gravity: f64,
    /// Above this preload the rotor stalls; predictions are flagged.
    pub max_preload_mass: f64,
}

/// Bench measurements a motor profile is calibrated against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotorAnchors {
    pub name: String,
    pub speed_vpp: f64,
    pub speed_rpm: f64,
    /// `(preload kg, torque mNm)` at the drive voltage of the speed anchor.
    pub torque_points: Vec<(f64, f64)>,
}

/// HCM#1 bench anchors: 383.3333 rpm at 282 Vpp; 25.5166, 33.4833 and
/// 57.3504 mNm at 0, 10 and 50 g.
pub fn hcm1_anchors() -> MotorAnchors {
    MotorAnchors {
        name: "HCM1".into(),
        speed_vpp: 282.0,
        speed_rpm: 383.3333,
        torque_points: vec![(0.0, 25.5166), (0.010, 33.4833), (0.050, 57.3504)],
    }
}

/// HCM#2 bench anchors: 353.3333 rpm at 282 Vpp; 23.5593, 33.2477 and
/// 46.2197 mNm at 0, 10 and 50 g.
pub fn hcm2_anchors() -> MotorAnchors {
    MotorAnchors {
        name: "HCM2".into(),
        speed_vpp: 282.0,
        speed_rpm: 353.3333,
        torque_points: vec![(0.0, 23.5593), (0.010, 33.2477), (0.050, 46.2197)],
    }
}

impl ContactConfig {
    /// Uncalibrated profile on a contact ring of radius `contact_radius`.
    pub fn new(name: &str, contact_radius: f64, taper_angle: f64) -> Self {
        ContactConfig {
            name: name.into(),
            preload_mass: 0.0,
            friction_coefficient: 0.3,
            contact_radius,
            taper_angle,
            contact_efficiency: 1.0,
            baseline_normal_force: 0.0,
            gravity: STANDARD_GRAVITY,
            max_preload_mass: 0.050,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Validation {
                key: key.into(),
                message,
            })
        };
        if !(self.preload_mass >= 0.0) {
            return bad("preload_mass", format!("must be >= 0, got {}", self.preload_mass));
        }
        if !(self.friction_coefficient > 0.0 && self.friction_coefficient < 2.0) {
            return bad("friction_coefficient", format!("must lie in (0, 2), got {}", self.friction_coefficient));
        }
        if !(self.contact_radius > 0.0) {
            return bad("contact_radius", format!("must be > 0, got {}", self.contact_radius));
        }
        if !(self.taper_angle > 0.0 && self.taper_angle < 90.0) {
            return bad("taper_angle", format!("must lie in (0, 90) deg, got {}", self.taper_angle));
        }
        if !(self.contact_efficiency > 0.0 && self.contact_efficiency <= 1.0) {
            return bad("contact_efficiency", format!("must lie in (0, 1], got {}", self.contact_efficiency));
        }
        if !(self.baseline_normal_force >= 0.0) {
            return bad("baseline_normal_force", format!("must be >= 0, got {}", self.baseline_normal_force));
        }
        if !(self.gravity > 0.0) {
            return bad("gravity", format!("must be > 0, got {}", self.gravity));
        }
        Ok(())
    }

    /// Axial force of the added preload, N.
    pub fn axial_force(&self) -> f64 {
        self.preload_mass * self.gravity
    }

    /// Normal force on the conical seat for an axial force, N.
    pub fn normal_force(&self, axial_force: f64) -> f64 {
        axial_force / self.taper_angle.to_radians().sin()
    }

    pub fn preload_in_range(&self) -> bool {
        self.preload_mass <= self.max_preload_mass * (1.0 + 1e-12)
    }
}

/// Rotor speed, rpm, for a steady tangential tip speed, m/s.
pub fn no_load_speed(tip_tangential_speed: f64, cfg: &ContactConfig) -> f64 {
    rad_per_s_to_rpm(cfg.contact_efficiency * tip_tangential_speed / cfg.contact_radius)
}

/// Friction-limited torque, mNm, for an added axial preload force, N.
pub fn stall_torque(cfg: &ContactConfig, axial_contact_force: f64) -> f64 {
    let normal = cfg.baseline_normal_force + cfg.normal_force(axial_contact_force);
    1e3 * cfg.friction_coefficient * normal * cfg.contact_radius
}

/// Torque at the configured preload, mNm.
pub fn torque_at_preload(cfg: &ContactConfig) -> f64 {
    stall_torque(cfg, cfg.axial_force())
}

/// Efficiency that maps `tip_speed` onto `target_rpm`. Values above one mean
/// the stator model under-predicts tip motion and are returned as is so the
/// caller can report them.
pub fn calibrate_efficiency(tip_speed: f64, target_rpm: f64, contact_radius: f64) -> Result<f64> {
    if !(tip_speed > 0.0) {
        return Err(Error::invalid("tip speed must be positive to calibrate the contact efficiency"));
    }
    let omega = target_rpm * 2.0 * std::f64::consts::PI / 60.0;
    Ok(omega * contact_radius / tip_speed)
}

/// Baseline normal force from the zero-preload torque and the friction
/// coefficient (effective, efficiency included) from a second preload point.
pub fn calibrate_torque(cfg: &mut ContactConfig, zero: (f64, f64), point: (f64, f64)) -> Result<()> {
    let (m1, t1) = point;
    if zero.0 != 0.0 {
        return Err(Error::invalid("the baseline torque point must be at zero added preload"));
    }
    if !(m1 > 0.0) || !(t1 > zero.1) {
        return Err(Error::DegenerateFit("torque must rise between the two calibration points".into()));
    }
    let n1 = cfg.normal_force(m1 * cfg.gravity);
    // t = 1e3 μ (N0 + n) r  ⇒  μ from the slope, N0 from the intercept.
    let mu = (t1 - zero.1) / (1e3 * n1 * cfg.contact_radius);
    cfg.friction_coefficient = mu;
    cfg.baseline_normal_force = zero.1 / (1e3 * mu * cfg.contact_radius);
    cfg.validate()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedPoint {
    pub drive_vpp: f64,
    pub speed_rpm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedCurve {
    pub points: Vec<SpeedPoint>,
    pub linear_fit: LinearFit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorquePoint {
    pub preload_mass: f64,
    pub torque_mnm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorqueCurve {
    pub points: Vec<TorquePoint>,
}

/// Ordinary least squares `speed = slope · Vpp + intercept`.
pub fn fit_speed_voltage(points: &[SpeedPoint]) -> Result<LinearFit> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.drive_vpp).sum::<f64>() / n;
    let my = points.iter().map(|p| p.speed_rpm).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.drive_vpp - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.drive_vpp - mx) * (p.speed_rpm - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.speed_rpm - my).powi(2)).sum();
    if !(sxx > 1e-12 * mx.abs().max(1.0).powi(2)) {
        return Err(Error::DegenerateFit("all voltages are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.speed_rpm - slope * p.drive_vpp - intercept).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

impl SpeedCurve {
    pub fn new(mut points: Vec<SpeedPoint>) -> Result<Self> {
        points.sort_by(|a, b| a.drive_vpp.total_cmp(&b.drive_vpp));
        let linear_fit = fit_speed_voltage(&points)?;
        Ok(SpeedCurve { points, linear_fit })
    }
}

impl TorqueCurve {
    /// Model torque at each preload.
    pub fn predict(cfg: &ContactConfig, preloads: &[f64]) -> Self {
        let mut points: Vec<TorquePoint> = preloads
            .iter()
            .map(|&m| TorquePoint {
                preload_mass: m,
                torque_mnm: stall_torque(cfg, m * cfg.gravity),
            })
            .collect();
        points.sort_by(|a, b| a.preload_mass.total_cmp(&b.preload_mass));
        TorqueCurve { points }
    }
}

/// Reads `voltage_vpp,speed_rpm` rows.
pub fn read_speed_csv(path: &Path) -> Result<Vec<SpeedPoint>> {
    read_pairs(path, ["voltage_vpp", "speed_rpm"])
        .map(|v| v.into_iter().map(|(a, b)| SpeedPoint { drive_vpp: a, speed_rpm: b }).collect())
}

/// Reads `preload_g,torque_mNm` rows; preloads are returned in kg.
pub fn read_torque_csv(path: &Path) -> Result<Vec<TorquePoint>> {
    read_pairs(path, ["preload_g", "torque_mNm"]).map(|v| {
        v.into_iter()
            .map(|(a, b)| TorquePoint {
                preload_mass: a * 1e-3,
                torque_mnm: b,
            })
            .collect()
    })
}

fn read_pairs(path: &Path, header: [&str; 2]) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, e))?;
    let h = r.headers().map_err(|e| Error::io(path, e))?.clone();
    if h.len() != 2 || h[0] != *header[0] || h[1] != *header[1] {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!("expected header `{},{}` in {}", header[0], header[1], path.display()),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::io(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parse = |i: usize| {
            rec[i].parse::<f64>().map_err(|e| Error::Parse {
                line,
                column: i + 1,
                message: format!("`{}`: {e}", &rec[i]),
            })
        };
        out.push((parse(0)?, parse(1)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn calibrated_hcm1() -> ContactConfig {
        let a = hcm1_anchors();
        let mut c = ContactConfig::new("HCM1", 10.7e-3, 1.0);
        calibrate_torque(&mut c, a.torque_points[0], a.torque_points[1]).unwrap();
        c
    }

    #[test]
    fn rest_gives_zero_speed_and_zero_torque() {
        let c = ContactConfig::new("x", 0.01, 1.0);
        assert_eq!(no_load_speed(0.0, &c), 0.0);
        assert_eq!(stall_torque(&c, 0.0), 0.0);
    }

    #[test]
    fn speed_is_proportional_and_independent_of_preload() {
        let mut c = ContactConfig::new("x", 0.0107, 1.0);
        c.contact_efficiency = 0.37;
        let full = no_load_speed(0.8, &c);
        assert!((no_load_speed(0.4, &c) - 0.5 * full).abs() <= 1e-9 * full);
        c.preload_mass = 0.05;
        assert_eq!(no_load_speed(0.8, &c), full);
    }

    #[test]
    fn efficiency_calibration_hits_the_anchor() {
        let eff = calibrate_efficiency(0.9, 383.3333, 0.0107).unwrap();
        let mut c = ContactConfig::new("x", 0.0107, 1.0);
        c.contact_efficiency = eff;
        assert!((no_load_speed(0.9, &c) - 383.3333).abs() < 1e-9);
    }

    #[test]
    fn torque_calibration_reproduces_both_anchors() {
        let c = calibrated_hcm1();
        assert!((stall_torque(&c, 0.0) - 25.5166).abs() < 1e-9);
        assert!((stall_torque(&c, 0.010 * c.gravity) - 33.4833).abs() < 1e-9);
        // Held-out 50 g point: affine extrapolation.
        let t50 = stall_torque(&c, 0.050 * c.gravity);
        assert!((t50 - (25.5166 + 5.0 * (33.4833 - 25.5166))).abs() < 1e-9);
    }

    #[test]
    fn collinear_points_fit_exactly() {
        let pts: Vec<SpeedPoint> = (0..6)
            .map(|k| SpeedPoint {
                drive_vpp: 46.0 + 47.2 * k as f64,
                speed_rpm: 1.3 * (46.0 + 47.2 * k as f64) + 2.0,
            })
            .collect();
        let f = fit_speed_voltage(&pts).unwrap();
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.slope - 1.3).abs() < 1e-12);
        let same = vec![
            SpeedPoint {
                drive_vpp: 5.0,
                speed_rpm: 1.0
            };
            4
        ];
        assert!(matches!(fit_speed_voltage(&same), Err(Error::DegenerateFit(_))));
    }

    /// Zooming grid search on the squared error, independent of the normal
    /// equations.
    fn grid_fit(pts: &[SpeedPoint]) -> (f64, f64) {
        let sse = |a: f64, b: f64| -> f64 { pts.iter().map(|p| (p.speed_rpm - a * p.drive_vpp - b).powi(2)).sum() };
        let (mut a, mut b) = (0.0, 0.0);
        let (mut ha, mut hb) = (10.0, 1000.0);
        for _ in 0..200 {
            let mut best = (sse(a, b), a, b);
            for i in -10..=10 {
                for j in -10..=10 {
                    let (ta, tb) = (a + ha * i as f64 / 10.0, b + hb * j as f64 / 10.0);
                    let s = sse(ta, tb);
                    if s < best.0 {
                        best = (s, ta, tb);
                    }
                }
            }
            if best.1 == a && best.2 == b {
                ha *= 0.5;
                hb *= 0.5;
            }
            a = best.1;
            b = best.2;
        }
        (a, b)
    }

    #[test]
    fn ols_matches_grid_search() {
        let pts = [
            (46.0, 55.0),
            (93.0, 118.0),
            (140.0, 190.0),
            (188.0, 251.0),
            (235.0, 322.0),
            (282.0, 383.3333),
        ]
        .map(|(v, s)| SpeedPoint {
            drive_vpp: v,
            speed_rpm: s,
        });
        let f = fit_speed_voltage(&pts).unwrap();
        let (a, b) = grid_fit(&pts);
        assert!((f.slope - a).abs() < 1e-6, "{} vs {a}", f.slope);
        assert!((f.intercept - b).abs() < 1e-6 * b.abs().max(1.0), "{} vs {b}", f.intercept);
    }

    #[test]
    fn csv_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "# bench\nvoltage_vpp,speed_rpm\n282, 383.3333\n141,190\n").unwrap();
        let v = read_speed_csv(&p).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].speed_rpm, 383.3333);
        let t = dir.path().join("t.csv");
        std::fs::write(&t, "preload_g,torque_mNm\n10,33.4833\n").unwrap();
        assert!((read_torque_csv(&t).unwrap()[0].preload_mass - 0.010).abs() < 1e-15);
        std::fs::write(&t, "preload_g,torque\n10,1\n").unwrap();
        assert!(matches!(read_torque_csv(&t), Err(Error::Parse { .. })));
        std::fs::write(&t, "preload_g,torque_mNm\n10,abc\n").unwrap();
        assert!(matches!(read_torque_csv(&t), Err(Error::Parse { line: 2, column: 2, .. })));
    }

    #[test]
    fn config_validation() {
        let mut c = ContactConfig::new("x", 0.01, 1.0);
        assert!(c.validate().is_ok());
        c.friction_coefficient = 2.5;
        assert!(matches!(c.validate(), Err(Error::Validation { .. })));
        c.friction_coefficient = 0.3;
        c.preload_mass = -1.0;
        assert!(c.validate().is_err());
        c.preload_mass = 0.06;
        assert!(c.validate().is_ok());
        assert!(!c.preload_in_range());
    }

    /// Dimension exponents (kg, m, s) carried through the formula chain.
    #[derive(Clone, Copy, Debug, PartialEq)]
    struct Dim([i32; 3]);
    impl std::ops::Mul for Dim {
        type Output = Dim;
        fn mul(self, o: Dim) -> Dim {
            Dim([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
        }
    }
    impl std::ops::Div for Dim {
        type Output = Dim;
        fn div(self, o: Dim) -> Dim {
            Dim([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
        }
    }

    #[test]
    fn formula_chain_is_dimensionally_consistent() {
        let one = Dim([0, 0, 0]);
        let kg = Dim([1, 0, 0]);
        let m = Dim([0, 1, 0]);
        let s = Dim([0, 0, 1]);
        let accel = m / (s * s);
        let newton = kg * accel;
        // no_load_speed: efficiency · v / r → angular rate.
        assert_eq!(one * (m / s) / m, one / s);
        // normal force: preload mass · g / sin(taper).
        let normal = kg * accel / one;
        assert_eq!(normal, newton);
        // torque: μ · N · r → N·m.
        assert_eq!(one * normal * m, newton * m);
        // calibration: μ = ΔT / (N r) is dimensionless.
        assert_eq!((newton * m) / (newton * m), one);
        // efficiency = ω r / v is dimensionless.
        assert_eq!((one / s) * m / (m / s), one);
    }

    proptest! {
        #[test]
        fn torque_is_affine_and_increasing(m1 in 0.0f64..0.05, m2 in 0.0f64..0.05) {
            let c = calibrated_hcm1();
            let t = |m: f64| stall_torque(&c, m * c.gravity);
            let mid = t(0.5 * (m1 + m2));
            prop_assert!((mid - 0.5 * (t(m1) + t(m2))).abs() <= 1e-9 * mid);
            if m2 > m1 {
                prop_assert!(t(m2) > t(m1));
            }
        }
    }
}
