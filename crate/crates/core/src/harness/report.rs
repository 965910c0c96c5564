//! Deterministic report bundle: markdown summary plus plot-ready CSV and SVG.
//!
//! Layout of the output directory:
//!
//! ```text
//! report.md          summary and tables
//! modes.csv          all computed modes
//! comparison.csv     measured vs simulated frequencies
//! sweep.csv/.svg     frequency response
//! speed.csv/.svg     speed vs drive voltage
//! torque.csv/.svg    torque vs preload
//! materials.json     active material constants
//! config.toml        resolved run configuration
//! ```
//!
//! Files for analyses that were not run are not written. Nothing in the bundle
//! depends on wall-clock time or thread count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::contact::{SpeedCurve, TorqueCurve};
use crate::error::{Error, Result};
use crate::harness::plot::{Plot, Series};
use crate::harness::{ComparisonTable, SweepResult, REFERENCE_MODES};
use crate::materials::MaterialSet;
use crate::modal::ModeSet;
use crate::transient::TransientResult;

/// Mode set with its mode-number assignment.
#[derive(Clone, Debug)]
pub struct ModeReport<'a> {
    pub modes: &'a ModeSet,
    /// `(mode number, eigenmode index)` for each tracked family.
    pub tracked: Vec<(usize, Option<usize>)>,
    /// Metres per mass-normalized unit, if a displacement calibration was done.
    pub displacement_scale: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct LabeledSpeed {
    pub label: String,
    pub curve: SpeedCurve,
}

#[derive(Clone, Debug)]
pub struct LabeledTorque {
    pub label: String,
    pub curve: TorqueCurve,
}

#[derive(Clone, Debug, Default)]
pub struct ReportInputs<'a> {
    pub title: String,
    pub config_echo: Option<String>,
    pub materials: Option<&'a MaterialSet>,
    pub modes: Option<ModeReport<'a>>,
    pub comparison: Option<&'a ComparisonTable>,
    pub sweep: Option<&'a SweepResult>,
    pub transient: Option<&'a TransientResult>,
    pub speed: Vec<LabeledSpeed>,
    pub torque: Vec<LabeledTorque>,
    pub notes: Vec<String>,
}

impl ReportInputs<'_> {
    fn is_empty(&self) -> bool {
        self.modes.is_none()
            && self.comparison.is_none()
            && self.sweep.is_none()
            && self.transient.is_none()
            && self.speed.is_empty()
            && self.torque.is_empty()
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn khz(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{:.4}", x / 1e3))
}

/// Writes the bundle into `dir` and returns the files written, sorted.
pub fn generate_report(inputs: &ReportInputs, dir: &Path) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(Error::invalid("report needs at least one analysis result"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut md = String::new();
    let _ = writeln!(md, "# {}\n", inputs.title);

    if let Some(m) = inputs.materials {
        let _ = writeln!(md, "## Materials\n");
        for c in m.citations() {
            let _ = writeln!(md, "- {c}");
        }
        md.push('\n');
        let p = dir.join("materials.json");
        let json = serde_json::to_string_pretty(&m.to_json()).map_err(|e| Error::io(&p, e))?;
        write(&p, &(json + "\n"))?;
        files.push(p);
    }

    if let Some(mr) = &inputs.modes {
        let _ = writeln!(md, "## Modes\n");
        let _ = writeln!(
            md,
            "Shift target {:.1} Hz, {} Lanczos steps, {} modes.\n",
            mr.modes.shift_target_hz,
            mr.modes.lanczos_steps,
            mr.modes.modes.len()
        );
        let _ = writeln!(md, "| Mode# | Eigenmode | Frequency (kHz) | Reference (kHz) | Diff (%) | Max radial tip disp. (µm) | Reference (µm) |");
        let _ = writeln!(md, "|---|---|---|---|---|---|---|");
        for &(num, idx) in &mr.tracked {
            let reference = REFERENCE_MODES.iter().find(|r| r.0 == num);
            let f = idx.map(|i| mr.modes.modes[i].frequency_hz);
            let diff = match (f, reference) {
                (Some(f), Some(r)) => format!("{:+.2}", 100.0 * (f / (r.1 * 1e3) - 1.0)),
                _ => "-".into(),
            };
            let disp = match (idx, mr.displacement_scale) {
                (Some(i), Some(s)) => format!("{:.4}", mr.modes.modes[i].max_radial_tip_displacement * s * 1e6),
                _ => "-".into(),
            };
            let _ = writeln!(
                md,
                "| {num} | {} | {} | {} | {diff} | {disp} | {} |",
                idx.map_or("-".into(), |i| i.to_string()),
                khz(f),
                reference.map_or("-".into(), |r| format!("{:.4}", r.1)),
                reference.map_or("-".into(), |r| format!("{:.4}", r.2)),
            );
        }
        md.push('\n');
        if let Some(s) = mr.displacement_scale {
            let _ = writeln!(md, "Displacement calibration factor: {s:.6e} m per mass-normalized unit.\n");
        }
        let low: Vec<String> = mr
            .modes
            .modes
            .iter()
            .filter(|m| m.frequency_hz < 12e3)
            .map(|m| format!("{:.1} Hz (nd {})", m.frequency_hz, m.nodal_diameter))
            .collect();
        if !low.is_empty() {
            let _ = writeln!(md, "Modes below 12 kHz (no correspondence claimed): {}.\n", low.join(", "));
        }
        let p = dir.join("modes.csv");
        mr.modes.write_csv(&p, mr.displacement_scale.unwrap_or(1.0))?;
        files.push(p);
    }

    if let Some(c) = inputs.comparison {
        let _ = writeln!(md, "## Measured vs simulated frequencies (kHz)\n");
        let _ = writeln!(md, "| Mode# | HCM#1 | HCM#2 | C360 Sim | Copper Sim | Max diff (%) |");
        let _ = writeln!(md, "|---|---|---|---|---|---|");
        for r in &c.rows {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} |",
                r.mode,
                khz(r.measured_hcm1_hz),
                khz(r.measured_hcm2_hz),
                khz(r.sim_c360_hz),
                khz(r.sim_copper_hz),
                r.pct_diff_max.map_or("-".into(), |x| format!("{x:.2}"))
            );
        }
        if let Some(d) = c.pct_diff_max() {
            let _ = writeln!(md, "\nLargest difference: {d:.2} %.\n");
        }
        let p = dir.join("comparison.csv");
        c.write_csv(&p)?;
        files.push(p);
    }

    if let Some(s) = inputs.sweep {
        let _ = writeln!(md, "## Frequency sweep\n");
        let (lo, hi) = (s.frequencies[0], s.frequencies[s.frequencies.len() - 1]);
        let _ = writeln!(
            md,
            "{:.0} to {:.0} Hz, {} points, noise floor {:.3e} m/V.\n",
            lo,
            hi,
            s.frequencies.len(),
            s.noise_floor
        );
        let _ = writeln!(md, "| Peak (kHz) | Amplitude (m/V) | Matched eigenmode |");
        let _ = writeln!(md, "|---|---|---|");
        for p in &s.detected_peaks {
            let _ = writeln!(
                md,
                "| {:.3} | {:.3e} | {} |",
                p.freq_hz / 1e3,
                p.amplitude,
                p.matched_mode.map_or("-".into(), |i| i.to_string())
            );
        }
        for w in &s.warnings {
            let _ = writeln!(md, "\nWarning: {w}");
        }
        md.push('\n');
        let csv = dir.join("sweep.csv");
        s.write_csv(&csv)?;
        let svg = dir.join("sweep.svg");
        let plot = Plot::new("Frequency sweep", "Frequency (kHz)", "Tip amplitude (m/V)")
            .log_y()
            .with(Series::line(
                "response",
                s.frequencies.iter().zip(&s.response_amplitude).map(|(f, a)| (f / 1e3, *a)).collect(),
            ))
            .with(Series::scatter(
                "peaks",
                s.detected_peaks.iter().map(|p| (p.freq_hz / 1e3, p.amplitude)).collect(),
            ));
        write(&svg, &plot.to_svg())?;
        files.extend([csv, svg]);
    }

    if let Some(t) = inputs.transient {
        let _ = writeln!(md, "## Transient response\n");
        let opt = |v: Option<f64>| v.map_or("not reached".into(), |x| format!("{:.3} ms", x * 1e3));
        let _ = writeln!(md, "- method: {}", t.method);
        let _ = writeln!(md, "- drive frequency: {:.1} Hz", t.frequency_hz);
        let _ = writeln!(md, "- settling time (envelope within 2 % of final): {}", opt(t.settling_time));
        let _ = writeln!(md, "- settling time (growth below 2 % per period): {}", opt(t.settling_time_growth));
        let _ = writeln!(md, "- standing wave ratio: {:.4}", t.standing_wave_ratio);
        let _ = writeln!(md, "- wave nodal diameter: {}, wave sense {:+}", t.wave_nodal_diameter, t.wave_sense);
        let _ = writeln!(md, "- rotation sense: {:+}", t.rotation_sense);
        let _ = writeln!(md, "- tip amplitude: {:.4e} m", t.tip_amplitude);
        let _ = writeln!(md, "- tangential tip speed: {:.4e} m/s", t.steady_tangential_tip_speed);
        if let Some(e) = t.energy_audit_max() {
            let _ = writeln!(md, "- energy audit, worst period: {:.3e}", e);
        }
        md.push('\n');
    }

    if !inputs.speed.is_empty() {
        let _ = writeln!(md, "## Speed vs drive voltage\n");
        let _ = writeln!(md, "| Motor | Slope (rpm/Vpp) | Intercept (rpm) | R² |");
        let _ = writeln!(md, "|---|---|---|---|");
        let mut csv = String::from("motor,drive_vpp,speed_rpm\n");
        let mut plot = Plot::new("Speed vs drive voltage", "Drive voltage (Vpp)", "Speed (rpm)");
        for s in &inputs.speed {
            let f = &s.curve.linear_fit;
            let _ = writeln!(md, "| {} | {:.5} | {:.4} | {:.4} |", s.label, f.slope, f.intercept, f.r_squared);
            for p in &s.curve.points {
                let _ = writeln!(csv, "{},{:.4},{:.4}", s.label, p.drive_vpp, p.speed_rpm);
            }
            plot = plot.with(Series::line(
                &s.label,
                s.curve.points.iter().map(|p| (p.drive_vpp, p.speed_rpm)).collect(),
            ));
        }
        md.push('\n');
        let (c, g) = (dir.join("speed.csv"), dir.join("speed.svg"));
        write(&c, &csv)?;
        write(&g, &plot.to_svg())?;
        files.extend([c, g]);
    }

    if !inputs.torque.is_empty() {
        let _ = writeln!(md, "## Torque vs preload\n");
        let _ = writeln!(md, "| Curve | Preload (g) | Torque (mNm) |");
        let _ = writeln!(md, "|---|---|---|");
        let mut csv = String::from("curve,preload_g,torque_mNm\n");
        let mut plot = Plot::new("Torque vs preload", "Preload (g)", "Torque (mNm)");
        for t in &inputs.torque {
            for p in &t.curve.points {
                let g = p.preload_mass * 1e3;
                let _ = writeln!(md, "| {} | {:.1} | {:.4} |", t.label, g, p.torque_mnm);
                let _ = writeln!(csv, "{},{:.4},{:.4}", t.label, g, p.torque_mnm);
            }
            plot = plot.with(Series::line(
                &t.label,
                t.curve.points.iter().map(|p| (p.preload_mass * 1e3, p.torque_mnm)).collect(),
            ));
        }
        md.push('\n');
        let (c, g) = (dir.join("torque.csv"), dir.join("torque.svg"));
        write(&c, &csv)?;
        write(&g, &plot.to_svg())?;
        files.extend([c, g]);
    }

    if !inputs.notes.is_empty() {
        let _ = writeln!(md, "## Notes\n");
        for n in &inputs.notes {
            let _ = writeln!(md, "- {n}");
        }
        md.push('\n');
    }

    if let Some(cfg) = &inputs.config_echo {
        let _ = writeln!(md, "## Resolved configuration\n\n```toml\n{}\n```", cfg.trim_end());
        let p = dir.join("config.toml");
        write(&p, cfg)?;
        files.push(p);
    }

    let p = dir.join("report.md");
    write(&p, &md)?;
    files.push(p);
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{hcm1_anchors, ContactConfig, SpeedPoint};
    use crate::harness::{build_comparison, split_fixture, FrequencyTable};

    fn bundle(dir: &Path, mats: &MaterialSet, table: &ComparisonTable) -> Vec<(PathBuf, Vec<u8>)> {
        let mut cfg = ContactConfig::new("HCM1", 12.5e-3, 1f64.to_radians());
        cfg.friction_coefficient = 0.3;
        cfg.baseline_normal_force = 5.0;
        let inputs = ReportInputs {
            title: "Run".into(),
            config_echo: Some("seed = 7\n".into()),
            materials: Some(mats),
            comparison: Some(table),
            speed: vec![LabeledSpeed {
                label: "HCM1".into(),
                curve: SpeedCurve::new(
                    (1..=6)
                        .map(|k| SpeedPoint {
                            drive_vpp: 47.0 * k as f64,
                            speed_rpm: hcm1_anchors().speed_rpm * k as f64 / 6.0,
                        })
                        .collect(),
                )
                .unwrap(),
            }],
            torque: vec![LabeledTorque {
                label: "model".into(),
                curve: TorqueCurve::predict(&cfg, &[0.0, 0.01, 0.05]),
            }],
            ..Default::default()
        };
        generate_report(&inputs, dir)
            .unwrap()
            .into_iter()
            .map(|p| {
                let b = std::fs::read(&p).unwrap();
                (p.strip_prefix(dir).unwrap().to_path_buf(), b)
            })
            .collect()
    }

    #[test]
    fn reruns_are_byte_identical_and_cite_materials() {
        let mats = MaterialSet::default();
        let t = FrequencyTable::parse_csv(include_str!("../../fixtures/table2_frequencies.csv")).unwrap();
        let (m, s) = split_fixture(&t);
        let table = build_comparison(&m, &s).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = bundle(a.path(), &mats, &table);
        let rb = bundle(b.path(), &mats, &table);
        assert_eq!(ra, rb);
        let md = String::from_utf8(ra.iter().find(|(p, _)| p.ends_with("report.md")).unwrap().1.clone()).unwrap();
        for c in mats.citations() {
            assert!(md.contains(&c), "missing citation {c}");
        }
        assert!(md.contains("| Mode# | HCM#1 | HCM#2 | C360 Sim | Copper Sim |"));
        assert!(md.contains("| 7 | - | 65.9930 | 63.8972 | 65.5760 |"));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let d = tempfile::tempdir().unwrap();
        assert!(generate_report(&ReportInputs::default(), d.path()).is_err());
    }
}
