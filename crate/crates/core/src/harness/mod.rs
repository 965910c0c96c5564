//! Bench-style analyses on top of the model: a frequency sweep that mimics
//! the holography search for resonances, and the measured-vs-simulated
//! frequency table.

pub mod plot;
pub mod report;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::assembly::CondensedSystem;
use crate::materials::RayleighDamping;
use crate::modal::ModeSet;
use crate::par::{self, Execution};
use crate::transient::{ModalBasis, Probe};

/// Reference C360 eigenfrequency table: `(mode, kHz, max radial tip µm)`.
pub const REFERENCE_MODES: [(usize, f64, f64); 6] = [
    (2, 12.4812, 56.1362),
    (3, 21.8119, 45.6770),
    (4, 30.5002, 45.9448),
    (5, 39.8604, 45.7191),
    (6, 49.1277, 46.3130),
    (7, 63.8972, 45.9928),
];

/// Bench holography table in the `mode,freq_khz,source` schema, with the
/// simulated columns of the original study.
pub const TABLE2_FIXTURE: &str = include_str!("../../fixtures/table2_frequencies.csv");

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub f_lo: f64,
    pub f_hi: f64,
    pub df: f64,
    pub damping: RayleighDamping,
    /// Peaks must exceed this multiple of the median response.
    pub prominence: f64,
    /// Electrode driven with 1 V; all others grounded.
    pub electrode: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            f_lo: 1e3,
            f_hi: 60e3,
            df: 100.0,
            damping: RayleighDamping::NONE,
            prominence: 3.0,
            electrode: 0,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub freq_hz: f64,
    pub amplitude: f64,
    /// Index into the mode set of the nearest mode within one grid step.
    pub matched_mode: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub frequencies: Vec<f64>,
    /// Largest radial tip displacement per volt, m/V.
    pub response_amplitude: Vec<f64>,
    pub detected_peaks: Vec<Peak>,
    pub noise_floor: f64,
    pub warnings: Vec<String>,
}

impl SweepResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e))?;
        w.write_record(["freq_hz", "amplitude_m_per_v"]).map_err(|e| Error::io(path, e))?;
        for (f, a) in self.frequencies.iter().zip(&self.response_amplitude) {
            w.write_record([format!("{f:.3}"), format!("{a:.6e}")])
                .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Steady-state tip response over a frequency grid by modal superposition,
/// with resonance peaks picked by a local-maximum and prominence rule.
pub fn run_sweep(sys: &CondensedSystem, modes: &ModeSet, probes: &[Probe], opts: &SweepOptions) -> Result<SweepResult> {
    if !(opts.f_lo > 0.0 && opts.f_hi > opts.f_lo && opts.df > 0.0) {
        return Err(Error::invalid("sweep needs 0 < f_lo < f_hi and df > 0"));
    }
    opts.damping.validate()?;
    if opts.damping.is_zero() {
        return Err(Error::DampingRequired);
    }
    if opts.electrode >= sys.n_electrodes() {
        return Err(Error::invalid(format!(
            "electrode {} does not exist ({} electrodes)",
            opts.electrode,
            sys.n_electrodes()
        )));
    }
    let in_band: Vec<usize> = (0..modes.modes.len())
        .filter(|&i| (opts.f_lo..=opts.f_hi).contains(&modes.modes[i].frequency_hz))
        .collect();
    if in_band.is_empty() {
        return Err(Error::NoModesInBand {
            f_lo: opts.f_lo,
            f_hi: opts.f_hi,
        });
    }
    let basis = ModalBasis::new(sys, modes, probes);
    let mut volts = vec![0.0; sys.n_electrodes()];
    volts[opts.electrode] = 1.0;
    let force = basis.modal_forces(&volts);
    let zeta: Vec<f64> = basis.omega.iter().map(|&w| opts.damping.ratio_at(w)).collect();

    let n = ((opts.f_hi - opts.f_lo) / opts.df + 1e-9).floor() as usize + 1;
    let freqs: Vec<f64> = (0..n).map(|k| opts.f_lo + k as f64 * opts.df).collect();
    let amps = par::map_slice(&freqs, opts.execution, |&f| {
        let w = 2.0 * std::f64::consts::PI * f;
        let q: Vec<(f64, f64)> = (0..basis.omega.len())
            .map(|i| {
                let wi = basis.omega[i];
                let (re, im) = (wi * wi - w * w, 2.0 * zeta[i] * wi * w);
                let d = re * re + im * im;
                (force[i] * re / d, -force[i] * im / d)
            })
            .collect();
        let mut best: f64 = 0.0;
        for p in 0..probes.len() {
            let (mut a, mut b) = (0.0, 0.0);
            for (i, qi) in q.iter().enumerate() {
                a += qi.0 * basis.probe_radial[i][p];
                b += qi.1 * basis.probe_radial[i][p];
            }
            best = best.max(a.hypot(b));
        }
        best
    });

    let mut sorted = amps.clone();
    sorted.sort_by(f64::total_cmp);
    let noise_floor = sorted[sorted.len() / 2];
    let mut peaks = Vec::new();
    for k in 0..n {
        let left = if k > 0 { amps[k - 1] } else { f64::NEG_INFINITY };
        let right = if k + 1 < n { amps[k + 1] } else { f64::NEG_INFINITY };
        if amps[k] > left && amps[k] >= right && amps[k] > opts.prominence * noise_floor {
            let f = freqs[k];
            let matched_mode = in_band
                .iter()
                .copied()
                .filter(|&i| (modes.modes[i].frequency_hz - f).abs() <= opts.df)
                .min_by(|&a, &b| {
                    (modes.modes[a].frequency_hz - f)
                        .abs()
                        .total_cmp(&(modes.modes[b].frequency_hz - f).abs())
                });
            peaks.push(Peak {
                freq_hz: f,
                amplitude: amps[k],
                matched_mode,
            });
        }
    }

    let mut warnings = Vec::new();
    for w in in_band.windows(2) {
        let (fa, fb) = (modes.modes[w[0]].frequency_hz, modes.modes[w[1]].frequency_hz);
        // Exact degenerate pairs are one resonance, not two.
        if fb - fa > 1e-6 * fb && fb - fa < opts.df {
            warnings.push(format!(
                "modes at {fa:.1} Hz and {fb:.1} Hz are closer than the {:.1} Hz grid step; their peaks merge",
                opts.df
            ));
        }
    }
    Ok(SweepResult {
        frequencies: freqs,
        response_amplitude: amps,
        detected_peaks: peaks,
        noise_floor,
        warnings,
    })
}

/// Column of a frequency table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "HCM1")]
    Hcm1,
    #[serde(rename = "HCM2")]
    Hcm2,
    #[serde(rename = "SIM_C360")]
    SimC360,
    #[serde(rename = "SIM_CU")]
    SimCu,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Hcm1, Source::Hcm2, Source::SimC360, Source::SimCu];

    pub fn label(self) -> &'static str {
        match self {
            Source::Hcm1 => "HCM1",
            Source::Hcm2 => "HCM2",
            Source::SimC360 => "SIM_C360",
            Source::SimCu => "SIM_CU",
        }
    }

    pub fn parse(s: &str) -> Option<Source> {
        Source::ALL.into_iter().find(|x| x.label() == s)
    }

    pub fn is_measured(self) -> bool {
        matches!(self, Source::Hcm1 | Source::Hcm2)
    }
}

/// Frequencies in Hz keyed by mode number and source.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub cells: BTreeMap<usize, BTreeMap<Source, f64>>,
}

impl FrequencyTable {
    pub fn insert(&mut self, mode: usize, source: Source, hz: f64) -> Result<()> {
        let row = self.cells.entry(mode).or_default();
        if let Some(old) = row.insert(source, hz) {
            return Err(Error::ModeAlignmentConflict(format!(
                "mode {mode} has two {} entries ({old} Hz and {hz} Hz)",
                source.label()
            )));
        }
        Ok(())
    }

    pub fn get(&self, mode: usize, source: Source) -> Option<f64> {
        self.cells.get(&mode).and_then(|r| r.get(&source)).copied()
    }

    /// Fixture CSV with columns `mode,freq_khz,source`; `#` lines are comments.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let h = r.headers().map_err(|e| Error::invalid(e.to_string()))?.clone();
        if h.iter().collect::<Vec<_>>() != ["mode", "freq_khz", "source"] {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "expected header `mode,freq_khz,source`".into(),
            });
        }
        let mut t = FrequencyTable::default();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::invalid(e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let err = |column: usize, message: String| Error::Parse { line, column, message };
            let mode: usize = rec[0].parse().map_err(|e| err(1, format!("mode `{}`: {e}", &rec[0])))?;
            let khz: f64 = rec[1].parse().map_err(|e| err(2, format!("frequency `{}`: {e}", &rec[1])))?;
            let source = Source::parse(&rec[2]).ok_or_else(|| err(3, format!("unknown source `{}`", &rec[2])))?;
            t.insert(mode, source, khz * 1e3)?;
        }
        Ok(t)
    }

    /// Simulated column from a mode set; `tracked[k]` is the eigenmode index
    /// assigned to mode number `first_mode + k`.
    pub fn from_modes(source: Source, modes: &ModeSet, first_mode: usize, tracked: &[Option<usize>]) -> Result<Self> {
        let mut t = FrequencyTable::default();
        let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
        for (k, idx) in tracked.iter().enumerate() {
            let Some(i) = *idx else { continue };
            let mode = first_mode + k;
            if let Some(prev) = owner.insert(i, mode) {
                return Err(Error::ModeAlignmentConflict(format!(
                    "eigenmode {i} ({:.1} Hz) matched to both mode {prev} and mode {mode}",
                    modes.modes[i].frequency_hz
                )));
            }
            t.insert(mode, source, modes.modes[i].frequency_hz)?;
        }
        Ok(t)
    }

    pub fn merge(&mut self, other: &FrequencyTable) -> Result<()> {
        for (&mode, row) in &other.cells {
            for (&s, &hz) in row {
                self.insert(mode, s, hz)?;
            }
        }
        Ok(())
    }
}

/// Relative difference with the smaller value as reference, so the result
/// does not depend on which column is called measured.
pub fn pct_diff(a: f64, b: f64) -> f64 {
    100.0 * (a - b).abs() / a.min(b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub mode: usize,
    pub measured_hcm1_hz: Option<f64>,
    pub measured_hcm2_hz: Option<f64>,
    pub sim_c360_hz: Option<f64>,
    pub sim_copper_hz: Option<f64>,
    /// Largest difference over populated measured/simulated pairs, %.
    pub pct_diff_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn pct_diff_max(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.pct_diff_max).reduce(f64::max)
    }

    /// Largest difference restricted to one measured and one simulated column.
    pub fn pct_diff_between(&self, measured: Source, simulated: Source) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| match (r.cell(measured), r.cell(simulated)) {
                (Some(m), Some(s)) => Some(pct_diff(m, s)),
                _ => None,
            })
            .reduce(f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e))?;
        w.write_record(["mode", "hcm1_khz", "hcm2_khz", "c360_sim_khz", "copper_sim_khz", "pct_diff_max"])
            .map_err(|e| Error::io(path, e))?;
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.4}", x / 1e3));
        for r in &self.rows {
            w.write_record([
                r.mode.to_string(),
                cell(r.measured_hcm1_hz),
                cell(r.measured_hcm2_hz),
                cell(r.sim_c360_hz),
                cell(r.sim_copper_hz),
                r.pct_diff_max.map_or("-".into(), |x| format!("{x:.2}")),
            ])
            .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl ComparisonRow {
    pub fn cell(&self, s: Source) -> Option<f64> {
        match s {
            Source::Hcm1 => self.measured_hcm1_hz,
            Source::Hcm2 => self.measured_hcm2_hz,
            Source::SimC360 => self.sim_c360_hz,
            Source::SimCu => self.sim_copper_hz,
        }
    }
}

/// Aligns measured and simulated columns by mode number.
pub fn build_comparison(measured: &FrequencyTable, simulated: &FrequencyTable) -> Result<ComparisonTable> {
    for (mode, row) in &measured.cells {
        if let Some(s) = row.keys().find(|s| !s.is_measured()) {
            return Err(Error::invalid(format!("mode {mode}: {} is not a measured column", s.label())));
        }
    }
    for (mode, row) in &simulated.cells {
        if let Some(s) = row.keys().find(|s| s.is_measured()) {
            return Err(Error::invalid(format!("mode {mode}: {} is not a simulated column", s.label())));
        }
    }
    let mut all = measured.clone();
    all.merge(simulated)?;
    let rows = all
        .cells
        .keys()
        .map(|&mode| {
            let get = |s| all.get(mode, s);
            let mut diff: Option<f64> = None;
            for m in [Source::Hcm1, Source::Hcm2] {
                for s in [Source::SimC360, Source::SimCu] {
                    if let (Some(a), Some(b)) = (get(m), get(s)) {
                        let d = pct_diff(a, b);
                        diff = Some(diff.map_or(d, |x: f64| x.max(d)));
                    }
                }
            }
            ComparisonRow {
                mode,
                measured_hcm1_hz: get(Source::Hcm1),
                measured_hcm2_hz: get(Source::Hcm2),
                sim_c360_hz: get(Source::SimC360),
                sim_copper_hz: get(Source::SimCu),
                pct_diff_max: diff,
            }
        })
        .collect();
    Ok(ComparisonTable { rows })
}

/// Splits a fixture into its measured and simulated parts.
pub fn split_fixture(t: &FrequencyTable) -> (FrequencyTable, FrequencyTable) {
    let (mut m, mut s) = (FrequencyTable::default(), FrequencyTable::default());
    for (&mode, row) in &t.cells {
        for (&src, &hz) in row {
            let target = if src.is_measured() { &mut m } else { &mut s };
            target.cells.entry(mode).or_default().insert(src, hz);
        }
    }
    (m, s)
}
