//! Stage orchestration with a content-hash artifact cache.
//!
//! Each stage writes into `<out>/<stage>/` and finishes by writing
//! `manifest.json` with the hash of every input that determines its output.
//! A stage whose manifest matches the current inputs is not rerun; a
//! downstream stage may use it in place of running the upstream stage.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use hcm_core::contact::{
    calibrate_efficiency, calibrate_torque, no_load_speed, read_speed_csv, read_torque_csv, ContactConfig,
    MotorAnchors, SpeedCurve, SpeedPoint, TorqueCurve, TorquePoint,
};
use hcm_core::drive::DriveSignalSpec;
use hcm_core::error::{Error, Result};
use hcm_core::fem::assembly::AssemblyOptions;
use hcm_core::harness::report::{generate_report, LabeledSpeed, LabeledTorque, ModeReport, ReportInputs};
use hcm_core::harness::{
    build_comparison, run_sweep, split_fixture, ComparisonTable, FrequencyTable, Source, SweepOptions, SweepResult,
    REFERENCE_MODES, TABLE2_FIXTURE,
};
use hcm_core::materials::RayleighDamping;
use hcm_core::mesh::{generate_mesh, vtk};
use hcm_core::modal::{displacement_calibration, EigenOptions, ModeSet};
use hcm_core::model::{mode_frequency, track_modes, StatorModel, MODE_NUMBERS};
use hcm_core::par::Execution;
use hcm_core::transient::{integrate, integrate_modal, TransientOptions, TransientResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checks::{self, Check};
use crate::config::{Metal, RunConfig, TransientMethod};

pub const STATUS_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Mesh,
    Modes,
    Transient,
    Sweep,
    Rotor,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Mesh,
        Stage::Modes,
        Stage::Transient,
        Stage::Sweep,
        Stage::Rotor,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Mesh => "mesh",
            Stage::Modes => "modes",
            Stage::Transient => "transient",
            Stage::Sweep => "sweep",
            Stage::Rotor => "rotor",
            Stage::Report => "report",
        }
    }

    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::Mesh => &[],
            Stage::Modes => &[Stage::Mesh],
            Stage::Transient | Stage::Sweep => &[Stage::Modes],
            Stage::Rotor => &[Stage::Transient],
            Stage::Report => &[Stage::Modes],
        }
    }
}

/// Comma-separated stage names, or `all`.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if name == "all" {
            out.extend(Stage::ALL);
            continue;
        }
        let s = Stage::ALL.into_iter().find(|s| s.name() == name).ok_or_else(|| Error::Validation {
            key: "stages".into(),
            message: format!("unknown stage `{name}`; expected one of mesh, modes, transient, sweep, rotor, report"),
        })?;
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::Validation {
            key: "stages".into(),
            message: "no stage requested".into(),
        });
    }
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageState {
    Ran,
    Cached,
    Failed,
    NotRun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub state: StageState,
    pub key: Option<String>,
    pub seconds: f64,
    pub artifacts: Vec<PathBuf>,
    pub error: Option<String>,
}

/// Machine-readable run status, written to `<out>/status.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub schema_version: u32,
    pub tool_version: String,
    pub ok: bool,
    pub exit_code: i32,
    pub requested: Vec<Stage>,
    pub stages: Vec<StageRecord>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    pub threads: usize,
}

impl RunStatus {
    pub fn failed(requested: Vec<Stage>, err: &Error) -> Self {
        RunStatus {
            schema_version: STATUS_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            ok: false,
            exit_code: 1,
            requested,
            stages: Vec::new(),
            checks: Vec::new(),
            warnings: Vec::new(),
            error: Some(err.to_string()),
            threads: hcm_core::par::current_threads(),
        }
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
        let p = out.join("status.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| io(&p, e))?;
        std::fs::write(&p, text + "\n").map_err(|e| io(&p, e))?;
        Ok(p)
    }
}

/// Rotor stage output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotorResult {
    pub anchors: MotorAnchors,
    pub contact: ContactConfig,
    /// Steady tangential tip speed per volt peak-to-peak, m/s/V.
    pub tip_speed_per_vpp: f64,
    /// Sign of rotor rotation about +z.
    pub rotation_sense: i32,
    pub speed: SpeedCurve,
    pub torque: TorqueCurve,
    pub measured_speed: Option<SpeedCurve>,
    pub measured_torque: Option<TorqueCurve>,
    pub warnings: Vec<String>,
}

impl RotorResult {
    /// Model rotor speed, rpm, at a drive voltage.
    pub fn speed_at(&self, vpp: f64) -> f64 {
        no_load_speed(self.tip_speed_per_vpp * vpp, &self.contact)
    }
}

/// Torque calibrated on the first two anchor points with unit efficiency,
/// then the efficiency set so the model hits the speed anchor.
pub fn calibrate_rotor(
    anchors: &MotorAnchors,
    contact_radius: f64,
    taper_angle: f64,
    tip_speed_per_vpp: f64,
) -> Result<(ContactConfig, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut cfg = ContactConfig::new(&anchors.name, contact_radius, taper_angle);
    if anchors.torque_points.len() < 2 {
        return Err(Error::DegenerateFit("torque calibration needs two anchor points".into()));
    }
    calibrate_torque(&mut cfg, anchors.torque_points[0], anchors.torque_points[1])?;
    let eff = calibrate_efficiency(tip_speed_per_vpp * anchors.speed_vpp, anchors.speed_rpm, contact_radius)?;
    if eff > 1.0 {
        warnings.push(format!(
            "contact efficiency {eff:.3} exceeds 1: the stator model under-predicts tangential tip speed"
        ));
    }
    cfg.contact_efficiency = eff;
    Ok((cfg, warnings))
}

fn io(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::IoFailure {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn hash_parts(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex(&h.finalize())
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).unwrap_or_default()
}

fn file_bytes(p: &Option<PathBuf>) -> Result<Vec<u8>> {
    match p {
        Some(p) => std::fs::read(p).map_err(|e| io(p, e)),
        None => Ok(Vec::new()),
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    stage: Stage,
    key: String,
    files: Vec<String>,
}

const SHAPES_MAGIC: &[u8; 8] = b"HCMSHAP1";

/// Mode shapes as little-endian f64, preceded by the mode and DOF counts.
fn write_shapes(path: &Path, set: &ModeSet) -> Result<()> {
    let n_dof = set.modes.first().map_or(0, |m| m.shape.len());
    let mut buf = Vec::with_capacity(24 + 8 * n_dof * set.modes.len());
    buf.extend_from_slice(SHAPES_MAGIC);
    buf.extend_from_slice(&(set.modes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(n_dof as u64).to_le_bytes());
    for m in &set.modes {
        for v in &m.shape {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| io(path, e))?;
    f.write_all(&buf).map_err(|e| io(path, e))
}

fn read_shapes(path: &Path, set: &mut ModeSet) -> Result<()> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| io(path, e))?;
    let bad = || io(path, "corrupt mode shape file");
    if buf.len() < 24 || &buf[..8] != SHAPES_MAGIC {
        return Err(bad());
    }
    let word = |i: usize| u64::from_le_bytes(buf[i..i + 8].try_into().unwrap()) as usize;
    let (n_modes, n_dof) = (word(8), word(16));
    if n_modes != set.modes.len() || buf.len() != 24 + 8 * n_modes * n_dof {
        return Err(bad());
    }
    for (k, m) in set.modes.iter_mut().enumerate() {
        let base = 24 + 8 * k * n_dof;
        m.shape = buf[base..base + 8 * n_dof]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    serde_json::from_str(&text).map_err(|e| io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| io(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io(path, e))
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub execution: Execution,
    model: Option<StatorModel>,
    pub modes: Option<ModeSet>,
    pub transient: Option<TransientResult>,
    pub sweep: Option<SweepResult>,
    pub rotor: Option<RotorResult>,
    pub comparison: Option<ComparisonTable>,
    pub warnings: Vec<String>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Self {
        Pipeline {
            cfg,
            out,
            execution: Execution::Parallel,
            model: None,
            modes: None,
            transient: None,
            sweep: None,
            rotor: None,
            comparison: None,
            warnings: Vec::new(),
        }
    }

    fn stage_dir(&self, s: Stage) -> PathBuf {
        self.out.join(s.name())
    }

    /// Content hash of every input that determines the stage output.
    pub fn key(&self, s: Stage) -> Result<String> {
        let c = &self.cfg;
        let version = env!("CARGO_PKG_VERSION").as_bytes();
        Ok(match s {
            Stage::Mesh => hash_parts(&[version, b"mesh", &json_bytes(&c.geometry), &c.analysis.refinement.to_le_bytes()]),
            Stage::Modes => {
                let m = json_bytes(&(
                    &c.materials,
                    c.analysis.formulation,
                    c.analysis.mode_count,
                    c.analysis.mode_target_hz,
                    c.seed,
                ));
                hash_parts(&[self.key(Stage::Mesh)?.as_bytes(), b"modes", &m])
            }
            Stage::Transient => {
                let a = &c.analysis;
                let t = json_bytes(&(
                    &c.drive,
                    a.transient_method,
                    a.duration,
                    a.steps_per_period,
                    a.damping_ratio,
                    a.rayleigh_alpha,
                    a.rayleigh_beta,
                    c.rotor.motor,
                ));
                hash_parts(&[self.key(Stage::Modes)?.as_bytes(), b"transient", &t])
            }
            Stage::Sweep => {
                let a = &c.analysis;
                let t = json_bytes(&(
                    &c.drive.frequency,
                    a.damping_ratio,
                    a.rayleigh_alpha,
                    a.rayleigh_beta,
                    a.sweep_lo_hz,
                    a.sweep_hi_hz,
                    a.sweep_df_hz,
                    a.sweep_prominence,
                ));
                hash_parts(&[self.key(Stage::Modes)?.as_bytes(), b"sweep", &t])
            }
            Stage::Rotor => hash_parts(&[
                self.key(Stage::Transient)?.as_bytes(),
                b"rotor",
                &json_bytes(&c.rotor),
                &file_bytes(&c.rotor.speed_data)?,
                &file_bytes(&c.rotor.torque_data)?,
            ]),
            Stage::Report => {
                let mut parts: Vec<Vec<u8>> = vec![b"report".to_vec(), c.to_toml().into_bytes()];
                parts.push(file_bytes(&c.report.measured_table)?);
                for up in [Stage::Modes, Stage::Transient, Stage::Sweep, Stage::Rotor] {
                    let k = self.key(up)?;
                    let present = self.cached(up, &k);
                    parts.push(format!("{}:{}", up.name(), if present { k.as_str() } else { "-" }).into_bytes());
                }
                let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
                hash_parts(&refs)
            }
        })
    }

    /// True if the stage directory holds a complete output for `key`.
    pub fn cached(&self, s: Stage, key: &str) -> bool {
        let dir = self.stage_dir(s);
        let Ok(m) = read_json::<Manifest>(&dir.join("manifest.json")) else {
            return false;
        };
        m.schema_version == STATUS_SCHEMA_VERSION
            && m.stage == s
            && m.key == key
            && m.files.iter().all(|f| dir.join(f).is_file())
    }

    fn write_manifest(&self, s: Stage, key: &str, files: &[PathBuf]) -> Result<()> {
        let dir = self.stage_dir(s);
        let mut names: Vec<String> = files
            .iter()
            .filter_map(|p| p.strip_prefix(&dir).ok())
            .map(|p| p.to_string_lossy().into_owned())
            .collect();
        names.sort();
        write_json(
            &dir.join("manifest.json"),
            &Manifest {
                schema_version: STATUS_SCHEMA_VERSION,
                stage: s,
                key: key.into(),
                files: names,
            },
        )
    }

    fn fresh_dir(&self, s: Stage) -> Result<PathBuf> {
        let dir = self.stage_dir(s);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        Ok(dir)
    }

    pub fn model(&mut self) -> Result<&StatorModel> {
        if self.model.is_none() {
            let c = &self.cfg;
            let opts = AssemblyOptions {
                formulation: c.analysis.formulation,
                execution: self.execution,
            };
            self.model = Some(StatorModel::build(&c.geometry, &c.materials()?, c.analysis.refinement, opts)?);
        }
        Ok(self.model.as_ref().unwrap())
    }

    fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            seed: self.cfg.seed,
            ..EigenOptions::default()
        }
    }

    /// Drive frequency: explicit, or the solved frequency of the auto mode.
    pub fn drive_frequency(&self) -> Result<f64> {
        match self.cfg.auto_mode()? {
            None => match self.cfg.drive.frequency {
                crate::config::FrequencySetting::Hz(f) => Ok(f),
                _ => unreachable!(),
            },
            Some(k) => {
                let modes = self.modes.as_ref().ok_or_else(|| Error::InvalidInput("modes not available".into()))?;
                mode_frequency(modes, k).ok_or_else(|| Error::Validation {
                    key: "drive.frequency".into(),
                    message: format!("mode {k} (nodal diameter {k}) was not found among the solved modes"),
                })
            }
        }
    }

    /// Configured Rayleigh damping; by default stiffness-proportional with the
    /// configured ratio at the drive frequency.
    pub fn damping(&self) -> Result<RayleighDamping> {
        let a = &self.cfg.analysis;
        if let (Some(alpha), Some(beta)) = (a.rayleigh_alpha, a.rayleigh_beta) {
            return Ok(RayleighDamping { alpha, beta });
        }
        let w = 2.0 * std::f64::consts::PI * self.drive_frequency()?;
        Ok(RayleighDamping::for_modal_ratio(a.damping_ratio, w))
    }

    fn run_mesh(&mut self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mesh = generate_mesh(&self.cfg.geometry, self.cfg.analysis.refinement)?;
        let vtk_path = dir.join("mesh.vtk");
        vtk::export_mesh(&mesh, &vtk_path)?;
        let stats = dir.join("mesh_stats.json");
        write_json(&stats, &mesh.stats())?;
        Ok(vec![vtk_path, stats])
    }

    fn run_modes(&mut self, dir: &Path) -> Result<Vec<PathBuf>> {
        let (target, count) = (self.cfg.analysis.mode_target_hz, self.cfg.analysis.mode_count);
        let eigen = self.eigen_options();
        let model = self.model()?;
        let set = model.modes(target, count, &eigen)?;
        let mut files = set.write_vtk(&model.mesh, &model.system.dof_map, &dir.join("shapes"))?;
        let csv = dir.join("modes.csv");
        set.write_csv(&csv, 1.0)?;
        let json = dir.join("modes.json");
        write_json(&json, &set)?;
        let bin = dir.join("shapes.bin");
        write_shapes(&bin, &set)?;
        files.extend([csv, json, bin]);
        self.modes = Some(set);
        Ok(files)
    }

    fn load_modes(&mut self) -> Result<()> {
        if self.modes.is_some() {
            return Ok(());
        }
        let dir = self.stage_dir(Stage::Modes);
        let mut set: ModeSet = read_json(&dir.join("modes.json"))?;
        read_shapes(&dir.join("shapes.bin"), &mut set)?;
        self.modes = Some(set);
        Ok(())
    }

    fn run_transient(&mut self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.load_modes()?;
        let f = self.drive_frequency()?;
        let damping = self.damping()?;
        let c = self.cfg.clone();
        let drive = DriveSignalSpec::with_order(
            c.amplitude_v0(),
            f,
            c.geometry.electrode_sectors,
            c.nodal_diameter(),
            c.drive.phase_order.channels(),
        )?;
        let opts = TransientOptions {
            duration: c.analysis.duration,
            dt: Some(1.0 / (f * c.analysis.steps_per_period)),
            damping,
        };
        self.model()?;
        let model = self.model.as_ref().unwrap();
        let modes = self.modes.as_ref().unwrap();
        let result = match c.analysis.transient_method {
            TransientMethod::Modal => integrate_modal(&model.system, modes, &model.probes, &drive, &opts)?,
            TransientMethod::Full => integrate(&model.system, &model.probes, &drive, &opts)?,
        };
        let hist = dir.join("history.csv");
        result.write_history_csv(&hist, 8)?;
        let summary = dir.join("summary.json");
        result.write_summary_json(&summary)?;
        let state = dir.join("transient.json");
        write_json(&state, &result)?;
        self.transient = Some(result);
        Ok(vec![hist, summary, state])
    }

    fn run_sweep(&mut self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.load_modes()?;
        let a = self.cfg.analysis.clone();
        let opts = SweepOptions {
            f_lo: a.sweep_lo_hz,
            f_hi: a.sweep_hi_hz,
            df: a.sweep_df_hz,
            damping: self.damping()?,
            prominence: a.sweep_prominence,
            electrode: 0,
            execution: self.execution,
        };
        self.model()?;
        let model = self.model.as_ref().unwrap();
        let result = run_sweep(&model.system, self.modes.as_ref().unwrap(), &model.probes, &opts)?;
        let csv = dir.join("sweep.csv");
        result.write_csv(&csv)?;
        let json = dir.join("sweep.json");
        write_json(&json, &result)?;
        self.warnings.extend(result.warnings.iter().cloned());
        self.sweep = Some(result);
        Ok(vec![csv, json])
    }

    fn run_rotor(&mut self, dir: &Path) -> Result<Vec<PathBuf>> {
        if self.transient.is_none() {
            self.transient = Some(read_json(&self.stage_dir(Stage::Transient).join("transient.json"))?);
        }
        let tr = self.transient.as_ref().unwrap();
        let c = &self.cfg;
        let vpp = 2.0 * c.amplitude_v0();
        if !(vpp > 0.0) {
            return Err(Error::Validation {
                key: "drive.v0".into(),
                message: "the rotor stage needs a non-zero drive amplitude".into(),
            });
        }
        let anchors = c.rotor.motor.anchors();
        let per_vpp = tr.steady_tangential_tip_speed / vpp;
        let (contact, mut warnings) =
            calibrate_rotor(&anchors, c.geometry.contact_radius(), c.geometry.taper_angle, per_vpp)?;
        let speed_points: Vec<SpeedPoint> = c
            .rotor
            .speed_voltages_vpp
            .iter()
            .map(|&v| SpeedPoint {
                drive_vpp: v,
                speed_rpm: no_load_speed(per_vpp * v, &contact),
            })
            .collect();
        let speed = SpeedCurve::new(speed_points)?;
        let preloads: Vec<f64> = c.rotor.preloads_g.iter().map(|g| g * 1e-3).collect();
        for &m in &preloads {
            if m > contact.max_preload_mass * (1.0 + 1e-12) {
                warnings.push(format!(
                    "preload {:.0} g exceeds the {:.0} g range in which the rotor turns",
                    m * 1e3,
                    contact.max_preload_mass * 1e3
                ));
            }
        }
        let torque = TorqueCurve::predict(&contact, &preloads);
        let measured_speed = match &c.rotor.speed_data {
            Some(p) => Some(SpeedCurve::new(read_speed_csv(p)?)?),
            None => None,
        };
        let measured_torque = Some(match &c.rotor.torque_data {
            Some(p) => TorqueCurve {
                points: read_torque_csv(p)?,
            },
            None => TorqueCurve {
                points: anchors
                    .torque_points
                    .iter()
                    .map(|&(m, t)| TorquePoint {
                        preload_mass: m,
                        torque_mnm: t,
                    })
                    .collect(),
            },
        });
        let result = RotorResult {
            anchors,
            contact,
            tip_speed_per_vpp: per_vpp,
            rotation_sense: tr.rotation_sense,
            speed,
            torque,
            measured_speed,
            measured_torque,
            warnings,
        };
        let json = dir.join("rotor.json");
        write_json(&json, &result)?;
        let mut files = vec![json];
        for (name, body) in [("speed.csv", speed_csv(&result)), ("torque.csv", torque_csv(&result))] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| io(&p, e))?;
            files.push(p);
        }
        self.warnings.extend(result.warnings.iter().cloned());
        self.rotor = Some(result);
        Ok(files)
    }

    fn load_optional<T: for<'de> Deserialize<'de>>(&self, s: Stage, file: &str) -> Result<Option<T>> {
        let k = self.key(s)?;
        if self.cached(s, &k) {
            read_json(&self.stage_dir(s).join(file)).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Measured table against this run's tracked modes.
    pub fn compare(&self) -> Result<ComparisonTable> {
        let table = match &self.cfg.report.measured_table {
            Some(p) => FrequencyTable::read_csv(p)?,
            None => FrequencyTable::parse_csv(TABLE2_FIXTURE)?,
        };
        let (measured, _) = split_fixture(&table);
        let modes = self.modes.as_ref().ok_or_else(|| Error::InvalidInput("modes not available".into()))?;
        let source = match self.cfg.materials.metal {
            Metal::C360 => Source::SimC360,
            Metal::Copper => Source::SimCu,
        };
        let tracked: Vec<Option<usize>> = track_modes(modes).into_iter().map(|t| t.1).collect();
        let sim = FrequencyTable::from_modes(source, modes, MODE_NUMBERS[0], &tracked)?;
        build_comparison(&measured, &sim)
    }

    /// Checks that apply to whatever this run produced.
    pub fn evaluate_checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        if let Some(m) = &self.modes {
            out.push(checks::frequencies("frequencies_within_10pct", m, 0.10));
            out.push(checks::ratios("frequency_ratios_within_5pct", m, 0.05));
            out.push(checks::displacement_uniformity("tip_displacement_spread_3pct", m, 0.03));
        }
        if let Some(t) = &self.transient {
            if self.cfg.auto_mode().ok().flatten() == Some(5) {
                out.push(checks::settling("settling_0.6ms", t, 0.6e-3, 0.2e-3));
            }
        }
        if let Some(r) = &self.rotor {
            out.push(checks::speed_anchor("speed_anchor_and_linearity", r));
            out.push(checks::torque_holdout("torque_holdout_25pct", r, 0.25));
        }
        out
    }

    fn run_report(&mut self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.load_modes()?;
        if self.transient.is_none() {
            self.transient = self.load_optional(Stage::Transient, "transient.json")?;
        }
        if self.sweep.is_none() {
            self.sweep = self.load_optional(Stage::Sweep, "sweep.json")?;
        }
        if self.rotor.is_none() {
            self.rotor = self.load_optional(Stage::Rotor, "rotor.json")?;
        }
        let comparison = self.compare()?;
        let modes = self.modes.as_ref().unwrap();
        let scale = REFERENCE_MODES
            .iter()
            .find(|r| r.0 == 5)
            .and_then(|r| {
                let i = modes.track_by_nodal_diameter(&[5])[0]?;
                displacement_calibration(&modes.modes[i], r.2 * 1e-6).ok()
            });
        let materials = self.cfg.materials()?;
        let mut notes = vec![format!(
            "Mode k is the lowest radially dominated mode with nodal diameter k; refinement {}.",
            self.cfg.analysis.refinement
        )];
        if scale.is_some() {
            notes.push("Tip displacements are scaled so that mode 5 matches its reference amplitude.".into());
        }
        if let Some(r) = &self.rotor {
            notes.push(format!(
                "Rotor profile {}: friction coefficient {:.4}, baseline normal force {:.4} N, contact efficiency {:.4}, rotation sense {:+}.",
                r.anchors.name,
                r.contact.friction_coefficient,
                r.contact.baseline_normal_force,
                r.contact.contact_efficiency,
                r.rotation_sense
            ));
            notes.extend(r.warnings.iter().cloned());
        }
        let mut speed = Vec::new();
        let mut torque = Vec::new();
        if let Some(r) = &self.rotor {
            speed.push(LabeledSpeed {
                label: format!("{} model", r.anchors.name),
                curve: r.speed.clone(),
            });
            if let Some(m) = &r.measured_speed {
                speed.push(LabeledSpeed {
                    label: format!("{} measured", r.anchors.name),
                    curve: m.clone(),
                });
            }
            torque.push(LabeledTorque {
                label: format!("{} model", r.anchors.name),
                curve: r.torque.clone(),
            });
            if let Some(m) = &r.measured_torque {
                torque.push(LabeledTorque {
                    label: format!("{} measured", r.anchors.name),
                    curve: m.clone(),
                });
            }
        }
        let inputs = ReportInputs {
            title: self.cfg.report.title.clone(),
            config_echo: Some(self.cfg.to_toml()),
            materials: Some(&materials),
            modes: Some(ModeReport {
                modes,
                tracked: track_modes(modes),
                displacement_scale: scale,
            }),
            comparison: Some(&comparison),
            sweep: self.sweep.as_ref(),
            transient: self.transient.as_ref(),
            speed,
            torque,
            notes,
        };
        let files = generate_report(&inputs, dir)?;
        self.comparison = Some(comparison);
        Ok(files)
    }

    fn execute(&mut self, s: Stage, dir: &Path) -> Result<Vec<PathBuf>> {
        match s {
            Stage::Mesh => self.run_mesh(dir),
            Stage::Modes => self.run_modes(dir),
            Stage::Transient => self.run_transient(dir),
            Stage::Sweep => self.run_sweep(dir),
            Stage::Rotor => self.run_rotor(dir),
            Stage::Report => self.run_report(dir),
        }
    }

    /// Loads a cached stage's result so later stages and checks can use it.
    fn load_cached(&mut self, s: Stage) -> Result<()> {
        let dir = self.stage_dir(s);
        match s {
            Stage::Mesh | Stage::Report => {}
            Stage::Modes => self.load_modes()?,
            Stage::Transient => self.transient = Some(read_json(&dir.join("transient.json"))?),
            Stage::Sweep => self.sweep = Some(read_json(&dir.join("sweep.json"))?),
            Stage::Rotor => self.rotor = Some(read_json(&dir.join("rotor.json"))?),
        }
        Ok(())
    }

    /// Every dependency of a requested stage is requested too or cached.
    pub fn check_dependencies(&self, requested: &[Stage]) -> Result<()> {
        for &s in requested {
            for &d in s.dependencies() {
                if !requested.contains(&d) && !self.cached(d, &self.key(d)?) {
                    return Err(Error::StageDependency {
                        stage: s.name().into(),
                        missing: d.name().into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Runs the requested stages in pipeline order and returns the status,
    /// which is also written to `<out>/status.json`.
    pub fn run(&mut self, requested: &[Stage]) -> RunStatus {
        let mut records = Vec::new();
        let mut error = None;
        if let Err(e) = self.check_dependencies(requested) {
            error = Some(e.to_string());
        } else {
            for &s in &Stage::ALL {
                if !requested.contains(&s) {
                    continue;
                }
                let t0 = Instant::now();
                let rec = match self.run_one(s) {
                    Ok((state, key, artifacts)) => StageRecord {
                        stage: s,
                        state,
                        key: Some(key),
                        seconds: t0.elapsed().as_secs_f64(),
                        artifacts,
                        error: None,
                    },
                    Err(e) => {
                        let e = Error::Stage {
                            stage: s.name().into(),
                            source: Box::new(e),
                        };
                        error = Some(e.to_string());
                        StageRecord {
                            stage: s,
                            state: StageState::Failed,
                            key: None,
                            seconds: t0.elapsed().as_secs_f64(),
                            artifacts: Vec::new(),
                            error: Some(e.to_string()),
                        }
                    }
                };
                records.push(rec);
                if error.is_some() {
                    break;
                }
            }
        }
        for &s in requested {
            if !records.iter().any(|r| r.stage == s) {
                records.push(StageRecord {
                    stage: s,
                    state: StageState::NotRun,
                    key: None,
                    seconds: 0.0,
                    artifacts: Vec::new(),
                    error: None,
                });
            }
        }
        let checks = if self.cfg.report.checks && error.is_none() {
            self.evaluate_checks()
        } else {
            Vec::new()
        };
        let ok = error.is_none() && checks.iter().all(|c| c.passed);
        let status = RunStatus {
            schema_version: STATUS_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            ok,
            exit_code: if ok { 0 } else { 1 },
            requested: requested.to_vec(),
            stages: records,
            checks,
            warnings: self.warnings.clone(),
            error,
            threads: hcm_core::par::current_threads(),
        };
        if let Err(e) = status.write(&self.out) {
            let mut s = status;
            s.ok = false;
            s.exit_code = 1;
            s.error = Some(e.to_string());
            return s;
        }
        status
    }

    fn run_one(&mut self, s: Stage) -> Result<(StageState, String, Vec<PathBuf>)> {
        let key = self.key(s)?;
        let dir = self.stage_dir(s);
        if self.cached(s, &key) {
            self.load_cached(s)?;
            let m: Manifest = read_json(&dir.join("manifest.json"))?;
            return Ok((StageState::Cached, key, m.files.iter().map(|f| dir.join(f)).collect()));
        }
        let dir = self.fresh_dir(s)?;
        let files = self.execute(s, &dir)?;
        self.write_manifest(s, &key, &files)?;
        Ok((StageState::Ran, key, files))
    }
}

fn speed_csv(r: &RotorResult) -> String {
    let mut s = String::from("voltage_vpp,speed_rpm\n");
    for p in &r.speed.points {
        let _ = writeln!(s, "{},{:.6}", p.drive_vpp, p.speed_rpm);
    }
    s
}

fn torque_csv(r: &RotorResult) -> String {
    let mut s = String::from("preload_g,torque_mNm\n");
    for p in &r.torque.points {
        let _ = writeln!(s, "{},{:.6}", p.preload_mass * 1e3, p.torque_mnm);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_lists() {
        assert_eq!(parse_stages("report, mesh").unwrap(), vec![Stage::Mesh, Stage::Report]);
        assert_eq!(parse_stages("all").unwrap(), Stage::ALL.to_vec());
        assert!(matches!(parse_stages("mesh,solve"), Err(Error::Validation { .. })));
        assert!(parse_stages(" ").is_err());
    }

    #[test]
    fn shapes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mode = |f: f64, shape: Vec<f64>| hcm_core::modal::Mode {
            frequency_hz: f,
            eigenvalue: 0.0,
            shape,
            residual: 0.0,
            nodal_diameter: 0,
            nd_ambiguous: false,
            radial_fraction: 0.0,
            max_radial_tip_displacement: 0.0,
            axial_profile: Vec::new(),
        };
        let set = ModeSet {
            modes: vec![mode(1.0, vec![1.0, -2.5, 3.0]), mode(2.0, vec![0.0, 1e-300, f64::MAX])],
            shift_target_hz: 1.0,
            lanczos_steps: 3,
        };
        let p = dir.path().join("s.bin");
        write_shapes(&p, &set).unwrap();
        let mut back = set.clone();
        back.modes.iter_mut().for_each(|m| m.shape.clear());
        read_shapes(&p, &mut back).unwrap();
        assert_eq!(back, set);
        std::fs::write(&p, b"HCMSHAP1").unwrap();
        assert!(read_shapes(&p, &mut back).is_err());
    }

    #[test]
    fn rotor_calibration_hits_both_anchors() {
        let a = hcm_core::contact::hcm1_anchors();
        let (c, w) = calibrate_rotor(&a, 12e-3, 1.0, 3e-3).unwrap();
        let rpm = no_load_speed(3e-3 * a.speed_vpp, &c);
        assert!((rpm / a.speed_rpm - 1.0).abs() < 1e-12);
        let t10 = hcm_core::contact::stall_torque(&c, a.torque_points[1].0 * c.gravity);
        assert!((t10 - a.torque_points[1].1).abs() < 1e-9);
        assert!(w.is_empty());
        let (_, w) = calibrate_rotor(&a, 12e-3, 1.0, 1e-4).unwrap();
        assert_eq!(w.len(), 1);
    }
}
