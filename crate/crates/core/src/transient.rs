//! Newmark integration of the driven stator and traveling-wave metrics.
//!
//! Two paths share the post-processing: [`integrate`] works on the full
//! condensed system and is the reference; [`integrate_modal`] projects onto a
//! set of mass-normalized modes and is used for long runs and sweeps.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::drive::SectorVoltages;
use crate::error::{Error, Result};
use crate::fem::assembly::{CondensedSystem, DofMap};
use crate::fem::sparse::{dot, SparseLdlt};
use crate::materials::RayleighDamping;
use crate::mesh::Mesh;
use crate::modal::ModeSet;

const NEWMARK_BETA: f64 = 0.25;
const NEWMARK_GAMMA: f64 = 0.5;

/// Tooth-tip probe: a node on the contact ring and its in-plane DOFs.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub node: usize,
    pub theta: f64,
    pub ux: Option<usize>,
    pub uy: Option<usize>,
}

impl Probe {
    fn radial(&self, u: &[f64]) -> f64 {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        self.ux.map_or(0.0, |i| u[i]) * c + self.uy.map_or(0.0, |i| u[i]) * s
    }

    fn tangential(&self, u: &[f64]) -> f64 {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        -self.ux.map_or(0.0, |i| u[i]) * s + self.uy.map_or(0.0, |i| u[i]) * c
    }
}

/// Probes on every node of the tooth-tip contact ring, ordered by angle.
pub fn tip_probes(mesh: &Mesh, dof_map: &DofMap) -> Result<Vec<Probe>> {
    let ring = mesh.contact_ring_nodes();
    if ring.len() < 3 {
        return Err(Error::invalid("tooth contact ring is empty"));
    }
    let idx = dof_map.u_index();
    Ok(ring
        .into_iter()
        .map(|n| Probe {
            node: n,
            theta: mesh.angle(n),
            ux: idx[3 * n],
            uy: idx[3 * n + 1],
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransientOptions {
    pub duration: f64,
    /// `None` uses 40 steps per drive period.
    pub dt: Option<f64>,
    pub damping: RayleighDamping,
}

impl TransientOptions {
    pub fn resolve_dt(&self, frequency_hz: f64) -> Result<(f64, usize)> {
        let period = 1.0 / frequency_hz;
        let dt = self.dt.unwrap_or(period / 40.0);
        let limit = period / 20.0;
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, limit });
        }
        if !(self.duration >= 10.0 * period * (1.0 - 1e-12)) {
            return Err(Error::invalid(format!(
                "duration {:.3e} s is shorter than 10 drive periods ({:.3e} s)",
                self.duration,
                10.0 * period
            )));
        }
        self.damping.validate()?;
        Ok((dt, (self.duration / dt).round() as usize))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransientResult {
    pub method: String,
    pub frequency_hz: f64,
    pub time_grid: Vec<f64>,
    pub probe_angles: Vec<f64>,
    /// `[probe][sample]`, m.
    #[serde(skip)]
    pub radial: Vec<Vec<f64>>,
    #[serde(skip)]
    pub tangential: Vec<Vec<f64>>,
    /// Largest |u_r| on the ring within each full drive period.
    pub envelope: Vec<f64>,
    /// Start of the first run of three periods whose envelope lies within 2 %
    /// of the final period's envelope.
    pub settling_time: Option<f64>,
    /// Start of the first run of three periods in which the envelope grows by
    /// less than 2 % per period.
    pub settling_time_growth: Option<f64>,
    pub standing_wave_ratio: f64,
    /// Mean tangential tip speed at the instant of maximum inward excursion.
    pub steady_tangential_tip_speed: f64,
    /// Sign of that tangential velocity (positive = counter-clockwise about +z).
    pub rotation_sense: i32,
    /// Propagation direction of the radial wave (positive = towards +θ).
    pub wave_sense: i32,
    pub wave_nodal_diameter: usize,
    /// Mean steady radial tip amplitude, m.
    pub tip_amplitude: f64,
    /// Per-period `|ΔE − W| / |W|`; only filled for undamped runs.
    pub energy_audit: Vec<f64>,
}

impl TransientResult {
    pub fn energy_audit_max(&self) -> Option<f64> {
        if self.energy_audit.is_empty() {
            None
        } else {
            Some(self.energy_audit.iter().fold(0.0, |m: f64, v| m.max(*v)))
        }
    }

    /// Time history CSV: `t` then radial and tangential displacement of up to
    /// `max_probes` probes spread evenly over the ring.
    pub fn write_history_csv(&self, path: &Path, max_probes: usize) -> Result<()> {
        let n = self.probe_angles.len();
        let pick: Vec<usize> = if n <= max_probes {
            (0..n).collect()
        } else {
            (0..max_probes).map(|k| k * n / max_probes).collect()
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e))?;
        let mut header = vec!["t_s".to_string()];
        for &p in &pick {
            header.push(format!("ur_{:.4}", self.probe_angles[p]));
            header.push(format!("ut_{:.4}", self.probe_angles[p]));
        }
        w.write_record(&header).map_err(|e| Error::io(path, e))?;
        for (s, t) in self.time_grid.iter().enumerate() {
            let mut rec = vec![format!("{t:e}")];
            for &p in &pick {
                rec.push(format!("{:e}", self.radial[p][s]));
                rec.push(format!("{:e}", self.tangential[p][s]));
            }
            w.write_record(&rec).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        let v = serde_json::json!({
            "method": self.method,
            "frequency_hz": self.frequency_hz,
            "duration_s": self.time_grid.last().copied().unwrap_or(0.0),
            "settling_time_s": self.settling_time,
            "settling_time_growth_s": self.settling_time_growth,
            "standing_wave_ratio": self.standing_wave_ratio,
            "steady_tangential_tip_speed_m_per_s": self.steady_tangential_tip_speed,
            "rotation_sense": self.rotation_sense,
            "wave_sense": self.wave_sense,
            "wave_nodal_diameter": self.wave_nodal_diameter,
            "tip_amplitude_m": self.tip_amplitude,
            "energy_audit_max": self.energy_audit_max(),
            "envelope": self.envelope,
        });
        let text = serde_json::to_string_pretty(&v).map_err(|e| Error::io(path, e))?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct Coefficients {
    a0: f64,
    a1: f64,
    a2: f64,
    a3: f64,
    a4: f64,
    a5: f64,
}

fn newmark_coefficients(dt: f64) -> Coefficients {
    let (b, g) = (NEWMARK_BETA, NEWMARK_GAMMA);
    Coefficients {
        a0: 1.0 / (b * dt * dt),
        a1: g / (b * dt),
        a2: 1.0 / (b * dt),
        a3: 1.0 / (2.0 * b) - 1.0,
        a4: g / b - 1.0,
        a5: dt / 2.0 * (g / b - 2.0),
    }
}

/// Accumulates probe samples and energy bookkeeping during a run.
struct Recorder {
    time: Vec<f64>,
    radial: Vec<Vec<f64>>,
    tangential: Vec<Vec<f64>>,
    audit: Vec<f64>,
    period_work: f64,
    period_start_energy: f64,
    track_energy: bool,
}

impl Recorder {
    fn new(n_probes: usize, n_samples: usize, track_energy: bool) -> Self {
        Recorder {
            time: Vec::with_capacity(n_samples),
            radial: vec![Vec::with_capacity(n_samples); n_probes],
            tangential: vec![Vec::with_capacity(n_samples); n_probes],
            audit: Vec::new(),
            period_work: 0.0,
            period_start_energy: 0.0,
            track_energy,
        }
    }

    fn push(&mut self, t: f64, radial: impl Iterator<Item = (f64, f64)>) {
        self.time.push(t);
        for (k, (r, tg)) in radial.enumerate() {
            self.radial[k].push(r);
            self.tangential[k].push(tg);
        }
    }

    fn close_period(&mut self, energy: f64) {
        if self.track_energy {
            let de = energy - self.period_start_energy;
            let w = self.period_work;
            let scale = w.abs().max(de.abs()).max(f64::MIN_POSITIVE);
            self.audit.push((de - w).abs() / scale);
        }
        self.period_work = 0.0;
        self.period_start_energy = energy;
    }
}

/// Full-order Newmark (average acceleration) integration from rest.
pub fn integrate(
    sys: &CondensedSystem,
    probes: &[Probe],
    drive: &dyn SectorVoltages,
    opts: &TransientOptions,
) -> Result<TransientResult> {
    let f = drive.frequency_hz();
    let (dt, steps) = opts.resolve_dt(f)?;
    if drive.n_sectors() != sys.n_electrodes() {
        return Err(Error::IncompatiblePattern(format!(
            "drive has {} sectors, model has {} electrodes",
            drive.n_sectors(),
            sys.n_electrodes()
        )));
    }
    let n = sys.n_u();
    let c = newmark_coefficients(dt);
    let RayleighDamping { alpha, beta } = opts.damping;
    let solver = sys.shifted_solver(1.0 + c.a1 * beta, c.a0 + c.a1 * alpha)?;
    let mass_factor = SparseLdlt::factorize(&sys.mass)?;

    let mut volts = vec![0.0; drive.n_sectors()];
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    drive.voltages_into(0.0, &mut volts);
    let mut f_prev = vec![0.0; n];
    sys.electrode_forces(&volts, &mut f_prev);
    let mut acc = mass_factor.solve(&f_prev);

    let period = 1.0 / f;
    let track = opts.damping.is_zero();
    let mut rec = Recorder::new(probes.len(), steps + 1, track);
    rec.push(0.0, probes.iter().map(|p| (p.radial(&u), p.tangential(&u))));

    let mut f_next = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut mv = vec![0.0; n];
    let mut kv = vec![0.0; n];
    let mut next_period_end = period;
    for step in 1..=steps {
        let t = step as f64 * dt;
        drive.voltages_into(t, &mut volts);
        sys.electrode_forces(&volts, &mut f_next);
        for i in 0..n {
            y[i] = c.a0 * u[i] + c.a2 * v[i] + c.a3 * acc[i];
        }
        sys.mass_mul(&y, &mut rhs);
        if alpha != 0.0 || beta != 0.0 {
            for i in 0..n {
                y[i] = c.a1 * u[i] + c.a4 * v[i] + c.a5 * acc[i];
            }
            if alpha != 0.0 {
                sys.mass_mul(&y, &mut tmp);
                rhs.iter_mut().zip(&tmp).for_each(|(r, x)| *r += alpha * x);
            }
            if beta != 0.0 {
                sys.k_star_mul(&y, &mut tmp);
                rhs.iter_mut().zip(&tmp).for_each(|(r, x)| *r += beta * x);
            }
        }
        rhs.iter_mut().zip(&f_next).for_each(|(r, x)| *r += x);
        let u_new = solver.solve(&rhs);
        let mut work = 0.0;
        for i in 0..n {
            let du = u_new[i] - u[i];
            work += 0.5 * (f_prev[i] + f_next[i]) * du;
            let a_new = c.a0 * du - c.a2 * v[i] - c.a3 * acc[i];
            v[i] += dt * ((1.0 - NEWMARK_GAMMA) * acc[i] + NEWMARK_GAMMA * a_new);
            acc[i] = a_new;
        }
        u = u_new;
        std::mem::swap(&mut f_prev, &mut f_next);
        rec.period_work += work;
        rec.push(t, probes.iter().map(|p| (p.radial(&u), p.tangential(&u))));
        if t >= next_period_end - 0.5 * dt {
            let energy = if track {
                sys.mass_mul(&v, &mut mv);
                sys.k_star_mul(&u, &mut kv);
                0.5 * dot(&v, &mv) + 0.5 * dot(&u, &kv)
            } else {
                0.0
            };
            rec.close_period(energy);
            next_period_end += period;
        }
    }
    Ok(finish(rec, probes, f, "full"))
}

/// Modal superposition with the same Newmark scheme applied per mode.
pub fn integrate_modal(
    sys: &CondensedSystem,
    modes: &ModeSet,
    probes: &[Probe],
    drive: &dyn SectorVoltages,
    opts: &TransientOptions,
) -> Result<TransientResult> {
    let f = drive.frequency_hz();
    let (dt, steps) = opts.resolve_dt(f)?;
    if drive.n_sectors() != sys.n_electrodes() {
        return Err(Error::IncompatiblePattern(format!(
            "drive has {} sectors, model has {} electrodes",
            drive.n_sectors(),
            sys.n_electrodes()
        )));
    }
    if modes.modes.is_empty() {
        return Err(Error::invalid("modal integration needs at least one mode"));
    }
    let basis = ModalBasis::new(sys, modes, probes);
    let nm = basis.omega.len();
    let c = newmark_coefficients(dt);
    let damp: Vec<f64> = basis.omega.iter().map(|&w| 2.0 * opts.damping.ratio_at(w) * w).collect();
    let keff: Vec<f64> = (0..nm)
        .map(|i| basis.omega[i].powi(2) + c.a0 + c.a1 * damp[i])
        .collect();

    let mut volts = vec![0.0; drive.n_sectors()];
    let mut q = vec![0.0; nm];
    let mut qd = vec![0.0; nm];
    drive.voltages_into(0.0, &mut volts);
    let mut f_prev = basis.modal_forces(&volts);
    let mut qdd = f_prev.clone();

    let period = 1.0 / f;
    let track = opts.damping.is_zero();
    let mut rec = Recorder::new(probes.len(), steps + 1, track);
    rec.push(0.0, basis.probe_values(&q));
    let mut next_period_end = period;
    for step in 1..=steps {
        let t = step as f64 * dt;
        drive.voltages_into(t, &mut volts);
        let f_next = basis.modal_forces(&volts);
        let mut work = 0.0;
        for i in 0..nm {
            let rhs = f_next[i]
                + c.a0 * q[i]
                + c.a2 * qd[i]
                + c.a3 * qdd[i]
                + damp[i] * (c.a1 * q[i] + c.a4 * qd[i] + c.a5 * qdd[i]);
            let q_new = rhs / keff[i];
            let dq = q_new - q[i];
            work += 0.5 * (f_prev[i] + f_next[i]) * dq;
            let a_new = c.a0 * dq - c.a2 * qd[i] - c.a3 * qdd[i];
            qd[i] += dt * ((1.0 - NEWMARK_GAMMA) * qdd[i] + NEWMARK_GAMMA * a_new);
            qdd[i] = a_new;
            q[i] = q_new;
        }
        f_prev = f_next;
        rec.period_work += work;
        rec.push(t, basis.probe_values(&q));
        if t >= next_period_end - 0.5 * dt {
            let energy: f64 = (0..nm).map(|i| 0.5 * (qd[i].powi(2) + basis.omega[i].powi(2) * q[i].powi(2))).sum();
            rec.close_period(energy);
            next_period_end += period;
        }
    }
    Ok(finish(rec, probes, f, "modal"))
}

/// Modal quantities needed for superposition: frequencies, participation of
/// each electrode and probe values of each mode.
pub struct ModalBasis {
    pub omega: Vec<f64>,
    /// `[mode][electrode]`: `φᵀ L_k`.
    pub participation: Vec<Vec<f64>>,
    /// `[mode][probe]`: radial and tangential probe values of each shape.
    pub probe_radial: Vec<Vec<f64>>,
    pub probe_tangential: Vec<Vec<f64>>,
}

impl ModalBasis {
    pub fn new(sys: &CondensedSystem, modes: &ModeSet, probes: &[Probe]) -> Self {
        let mut out = ModalBasis {
            omega: Vec::new(),
            participation: Vec::new(),
            probe_radial: Vec::new(),
            probe_tangential: Vec::new(),
        };
        for m in &modes.modes {
            out.omega.push(m.eigenvalue.max(0.0).sqrt());
            out.participation
                .push(sys.electrode_load_map.iter().map(|l| dot(&m.shape, l)).collect());
            out.probe_radial.push(probes.iter().map(|p| p.radial(&m.shape)).collect());
            out.probe_tangential.push(probes.iter().map(|p| p.tangential(&m.shape)).collect());
        }
        out
    }

    pub fn modal_forces(&self, volts: &[f64]) -> Vec<f64> {
        self.participation
            .iter()
            .map(|g| g.iter().zip(volts).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn probe_values<'a>(&'a self, q: &'a [f64]) -> impl Iterator<Item = (f64, f64)> + 'a {
        let np = self.probe_radial.first().map_or(0, |v| v.len());
        (0..np).map(move |p| {
            let mut r = 0.0;
            let mut t = 0.0;
            for (i, qi) in q.iter().enumerate() {
                r += qi * self.probe_radial[i][p];
                t += qi * self.probe_tangential[i][p];
            }
            (r, t)
        })
    }
}

/// Least-squares fit of `a + Re(c e^{iωt})` to a sampled series.
fn harmonic_fit(t: &[f64], x: &[f64], omega: f64) -> (f64, f64) {
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for (&ti, &xi) in t.iter().zip(x) {
        let row = nalgebra::Vector3::new(1.0, (omega * ti).cos(), (omega * ti).sin());
        ata += row * row.transpose();
        atb += row * xi;
    }
    let s = ata.lu().solve(&atb).unwrap_or_else(nalgebra::Vector3::zeros);
    // x ≈ a + s1 cos ωt + s2 sin ωt = a + Re((s1 − i s2) e^{iωt})
    (s[1], -s[2])
}

fn finish(rec: Recorder, probes: &[Probe], f: f64, method: &str) -> TransientResult {
    let omega = 2.0 * PI * f;
    let period = 1.0 / f;
    let time = rec.time;
    let t_end = *time.last().unwrap_or(&0.0);

    // Envelope per full period.
    let n_periods = (t_end / period + 1e-9).floor() as usize;
    let mut envelope = vec![0.0f64; n_periods];
    for (s, &t) in time.iter().enumerate() {
        if t <= 0.0 {
            continue;
        }
        let p = ((t / period) - 1e-9).floor() as usize;
        if p < n_periods {
            let m = rec.radial.iter().fold(0.0f64, |m, r| m.max(r[s].abs()));
            envelope[p] = envelope[p].max(m);
        }
    }
    let settling_time = settle_index(&envelope, |env, p| {
        let last = *env.last().unwrap();
        (env[p] - last).abs() <= 0.02 * last
    })
    .map(|p| p as f64 * period);
    let settling_time_growth = settle_index(&envelope, |env, p| p > 0 && env[p] <= 1.02 * env[p - 1]).map(|p| p as f64 * period);

    // Steady harmonic content over the last two full periods.
    let window_start = t_end - 2.0 * period - 1e-12 * period;
    let first = time.iter().position(|&t| t >= window_start).unwrap_or(0);
    let tw = &time[first..];
    let cr: Vec<(f64, f64)> = rec.radial.iter().map(|r| harmonic_fit(tw, &r[first..], omega)).collect();
    let ct: Vec<(f64, f64)> = rec.tangential.iter().map(|r| harmonic_fit(tw, &r[first..], omega)).collect();
    let amp: Vec<f64> = cr.iter().map(|c| c.0.hypot(c.1)).collect();
    let a_max = amp.iter().fold(0.0f64, |m, v| m.max(*v));
    let a_min = amp.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let standing_wave_ratio = if a_min > 0.0 { a_max / a_min } else { f64::INFINITY };
    let tip_amplitude = if amp.is_empty() { 0.0 } else { amp.iter().sum::<f64>() / amp.len() as f64 };

    // Tangential velocity when each tip is furthest inward.
    let mut v_contact = 0.0;
    for (r, t) in cr.iter().zip(&ct) {
        let mag = r.0.hypot(r.1);
        if mag == 0.0 {
            continue;
        }
        // e^{iωt*} = −conj(c_r)/|c_r| puts u_r at its minimum.
        let (er, ei) = (-r.0 / mag, r.1 / mag);
        // v_θ = Re(iω c_θ e^{iωt*}) = −ω Im(c_θ e^{iωt*})
        v_contact += -omega * (t.0 * ei + t.1 * er);
    }
    let v_contact = if cr.is_empty() { 0.0 } else { v_contact / cr.len() as f64 };

    // Direction of the radial wave from the ring phase progression.
    let thetas: Vec<f64> = probes.iter().map(|p| p.theta).collect();
    let (wave_nd, wave_sense) = wave_direction(&thetas, &cr);

    TransientResult {
        method: method.to_string(),
        frequency_hz: f,
        time_grid: time,
        probe_angles: thetas,
        radial: rec.radial,
        tangential: rec.tangential,
        envelope,
        settling_time,
        settling_time_growth,
        standing_wave_ratio,
        steady_tangential_tip_speed: v_contact.abs(),
        rotation_sense: if v_contact >= 0.0 { 1 } else { -1 },
        wave_sense,
        wave_nodal_diameter: wave_nd,
        tip_amplitude,
        energy_audit: rec.audit,
    }
}

/// First period `p` such that `ok` holds for `p`, `p + 1` and `p + 2`.
fn settle_index(env: &[f64], ok: impl Fn(&[f64], usize) -> bool) -> Option<usize> {
    if env.len() < 3 || *env.last().unwrap() <= 0.0 {
        return None;
    }
    (0..env.len() - 2).find(|&p| (p..p + 3).all(|q| ok(env, q)))
}

/// Dominant circumferential index of the complex radial amplitudes and the
/// sign of its propagation direction.
fn wave_direction(theta: &[f64], c: &[(f64, f64)]) -> (usize, i32) {
    let m = theta.len();
    if m < 3 {
        return (0, 0);
    }
    let w: Vec<f64> = (0..m)
        .map(|i| 0.5 * (theta[(i + 1) % m] - theta[(i + m - 1) % m]).rem_euclid(2.0 * PI))
        .collect();
    let mut best = (0usize, 0i32, 0.0f64);
    for n in 1..=m / 2 {
        // Projections of c(θ) on e^{+inθ} and e^{-inθ}.
        let (mut pr, mut pi, mut mr, mut mi) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..m {
            let (cs, sn) = ((n as f64 * theta[k]).cos(), (n as f64 * theta[k]).sin());
            let (a, b) = c[k];
            pr += w[k] * (a * cs - b * sn);
            pi += w[k] * (a * sn + b * cs);
            mr += w[k] * (a * cs + b * sn);
            mi += w[k] * (b * cs - a * sn);
        }
        let plus = pr.hypot(pi);
        let minus = mr.hypot(mi);
        let total = plus.max(minus);
        if total > best.2 {
            // u = Re(e^{-inθ} e^{iωt}) = cos(ωt − nθ) travels towards +θ and
            // projects onto e^{+inθ}.
            best = (n, if plus >= minus { 1 } else { -1 }, total);
        }
    }
    (best.0, best.1)
}

/// Newmark response of `q̈ + 2ζω q̇ + ω² q = f(t)` from rest.
pub fn newmark_sdof(omega: f64, zeta: f64, force: impl Fn(f64) -> f64, dt: f64, steps: usize) -> Vec<f64> {
    let c = newmark_coefficients(dt);
    let damp = 2.0 * zeta * omega;
    let keff = omega * omega + c.a0 + c.a1 * damp;
    let (mut q, mut qd, mut qdd) = (0.0, 0.0, force(0.0));
    let mut out = Vec::with_capacity(steps + 1);
    out.push(q);
    for s in 1..=steps {
        let rhs = force(s as f64 * dt) + c.a0 * q + c.a2 * qd + c.a3 * qdd + damp * (c.a1 * q + c.a4 * qd + c.a5 * qdd);
        let q_new = rhs / keff;
        let a_new = c.a0 * (q_new - q) - c.a2 * qd - c.a3 * qdd;
        qd += dt * ((1.0 - NEWMARK_GAMMA) * qdd + NEWMARK_GAMMA * a_new);
        qdd = a_new;
        q = q_new;
        out.push(q);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undamped_oscillator_matches_closed_form() {
        let (wn, w, f0) = (2.0 * PI * 1000.0, 2.0 * PI * 700.0, 3.0);
        let period = 2.0 * PI / w;
        let r = w / wn;
        let exact = |t: f64| f0 / (wn * wn * (1.0 - r * r)) * ((w * t).sin() - r * (wn * t).sin());
        let amp = f0 / (wn * wn * (1.0 - r * r)) * (1.0 + r);
        let max_err = |per_period: f64| {
            let dt = period / per_period;
            let steps = (10.0 * per_period).round() as usize;
            newmark_sdof(wn, 0.0, |t| f0 * (w * t).sin(), dt, steps)
                .iter()
                .enumerate()
                .map(|(s, v)| (v - exact(s as f64 * dt)).abs())
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (max_err(200.0), max_err(400.0));
        // Second order: halving the step quarters the phase error.
        assert!((coarse / fine - 4.0).abs() < 0.3, "ratio {}", coarse / fine);
        assert!(fine < 0.005 * amp, "max error {fine:e} vs amplitude {amp:e}");
    }

    #[test]
    fn settling_index_needs_three_periods() {
        let env = [0.1, 0.5, 0.9, 0.99, 1.0, 1.0, 1.0];
        assert_eq!(settle_index(&env, |e, p| (e[p] - 1.0).abs() <= 0.02), Some(3));
        assert_eq!(settle_index(&[0.0, 0.0, 0.0], |_, _| true), None);
    }

    #[test]
    fn harmonic_fit_recovers_phase() {
        let w = 2.0 * PI * 50.0;
        let t: Vec<f64> = (0..200).map(|k| k as f64 * 1e-4).collect();
        let x: Vec<f64> = t.iter().map(|&t| 0.3 + 2.0 * (w * t + 0.4).cos()).collect();
        let (re, im) = harmonic_fit(&t, &x, w);
        assert!((re.hypot(im) - 2.0).abs() < 1e-9);
        assert!((im.atan2(re) - 0.4).abs() < 1e-9);
    }

    #[test]
    fn wave_direction_of_synthetic_waves() {
        let m = 64;
        let theta: Vec<f64> = (0..m).map(|k| 2.0 * PI * k as f64 / m as f64).collect();
        // cos(ωt − 3θ): c = e^{−3iθ}
        let fwd: Vec<(f64, f64)> = theta.iter().map(|t| ((3.0 * t).cos(), -(3.0 * t).sin())).collect();
        assert_eq!(wave_direction(&theta, &fwd), (3, 1));
        let back: Vec<(f64, f64)> = theta.iter().map(|t| ((3.0 * t).cos(), (3.0 * t).sin())).collect();
        assert_eq!(wave_direction(&theta, &back), (3, -1));
    }

    #[test]
    fn step_and_duration_limits() {
        let o = TransientOptions {
            duration: 1e-3,
            dt: Some(1e-5),
            damping: RayleighDamping::NONE,
        };
        assert!(matches!(o.resolve_dt(40e3), Err(Error::StepTooLarge { .. })));
        let o = TransientOptions { dt: None, ..o };
        assert_eq!(o.resolve_dt(40e3).unwrap().1, 1600);
        let short = TransientOptions { duration: 1e-4, ..o };
        assert!(short.resolve_dt(40e3).is_err());
        let neg = TransientOptions {
            damping: RayleighDamping { alpha: -1.0, beta: 0.0 },
            ..o
        };
        assert!(matches!(neg.resolve_dt(40e3), Err(Error::DampingNegative { .. })));
    }
}
