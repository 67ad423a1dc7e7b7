//! Trial recordings: time-aligned EMG, ankle angle, and reference columns,
//! persisted as CSV with `#` provenance comment lines.
//!
//! The EMG rate is the canonical rate: every row is one EMG sample. Slower
//! columns (mocap-rate angle, reference torque, GRF) may leave cells empty;
//! they are linearly interpolated between their knots on load, held flat
//! outside them. Required columns must be dense.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One recorded (or synthesized) trial at a uniform sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecording {
    pub time: Vec<f64>,
    pub emg_ta: Vec<f64>,
    pub emg_gas: Vec<f64>,
    pub ankle_angle: Vec<f64>,
    pub ankle_torque_ref: Option<Vec<f64>>,
    pub grf_z: Option<Vec<f64>>,
    pub event: Option<Vec<i64>>,
    /// Ground-truth sidecar columns (`gt_*`), dense after interpolation.
    pub sidecar: Vec<(String, Vec<f64>)>,
    pub fs_hz: f64,
}

impl TrialRecording {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.time.last().copied().unwrap_or(0.0) - self.time.first().copied().unwrap_or(0.0)
    }

    /// Sidecar column by name.
    pub fn sidecar_column(&self, name: &str) -> Option<&[f64]> {
        self.sidecar
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// Structural validation shared by the loader and writers.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.time.len();
        if n < 2 {
            return Err(format!("need at least 2 samples, got {n}"));
        }
        for (name, col) in [
            ("time", &self.time),
            ("emg_ta", &self.emg_ta),
            ("emg_gas", &self.emg_gas),
            ("ankle_angle", &self.ankle_angle),
        ] {
            if col.len() != n {
                return Err(format!("column {name} has {} rows, expected {n}", col.len()));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(format!("non-finite value in column {name}, data row {}", i + 1));
            }
        }
        for opt in [&self.ankle_torque_ref, &self.grf_z] {
            if let Some(col) = opt {
                if col.len() != n {
                    return Err("optional column length mismatch".into());
                }
            }
        }
        if let Some(ev) = &self.event {
            if ev.len() != n {
                return Err("event column length mismatch".into());
            }
        }
        for (name, col) in &self.sidecar {
            if col.len() != n {
                return Err(format!("sidecar column {name} length mismatch"));
            }
        }
        // Strictly increasing, uniform time base within 1 ppm.
        let dt_mean = (self.time[n - 1] - self.time[0]) / (n - 1) as f64;
        if !(dt_mean > 0.0) {
            return Err("time column is not increasing".into());
        }
        for i in 1..n {
            let dt = self.time[i] - self.time[i - 1];
            if dt <= 0.0 {
                return Err(format!("time not strictly increasing at data row {}", i + 1));
            }
            if (dt - dt_mean).abs() > 1e-6 * dt_mean {
                return Err(format!(
                    "non-uniform time step at data row {}: {dt:.9e} vs mean {dt_mean:.9e}",
                    i + 1
                ));
            }
        }
        let fs = (n - 1) as f64 / (self.time[n - 1] - self.time[0]);
        if (fs - self.fs_hz).abs() > 1e-6 * fs {
            return Err(format!("stored rate {} Hz disagrees with time column ({fs} Hz)", self.fs_hz));
        }
        Ok(())
    }
}

/// Linear interpolation of a sparse column onto 0..n, flat outside the knots.
fn interpolate_sparse(knots: &[(usize, f64)], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if knots.is_empty() {
        return out;
    }
    let mut k = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        while k + 1 < knots.len() && knots[k + 1].0 <= i {
            k += 1;
        }
        *slot = if i <= knots[0].0 {
            knots[0].1
        } else if k + 1 >= knots.len() {
            knots[knots.len() - 1].1
        } else {
            let (i0, v0) = knots[k];
            let (i1, v1) = knots[k + 1];
            v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
        };
    }
    out
}

const REQUIRED: [&str; 4] = ["time", "emg_ta", "emg_gas", "ankle_angle"];
const OPTIONAL: [&str; 3] = ["ankle_torque_ref", "grf_z", "event"];

/// Load and validate a trial CSV. Comment lines start with `#`; the first
/// non-comment line is the header.
pub fn load_trial(path: impl AsRef<Path>) -> Result<TrialRecording> {
    let path = path.as_ref();
    let fail = |reason: String| Error::InvalidTrial {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#') && !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| fail("file has no header line".into()))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();

    for name in &names {
        if !REQUIRED.contains(name) && !OPTIONAL.contains(name) && !name.starts_with("gt_") {
            return Err(fail(format!("unknown column '{name}'")));
        }
    }
    for req in REQUIRED {
        if !names.contains(&req) {
            return Err(fail(format!("missing required column '{req}'")));
        }
    }
    if names.len() != names.iter().collect::<std::collections::HashSet<_>>().len() {
        return Err(fail("duplicate column name in header".into()));
    }

    let col_index: Vec<(usize, String)> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (i, n.to_string()))
        .collect();
    let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    let mut rows = 0usize;
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(fail(format!(
                "line {}: {} fields, expected {}",
                line_no + 1,
                fields.len(),
                names.len()
            )));
        }
        for (ci, field) in fields.iter().enumerate() {
            let v = if field.is_empty() {
                None
            } else {
                let parsed: f64 = field.parse().map_err(|_| {
                    fail(format!(
                        "line {}: column {} value '{}' is not a number",
                        line_no + 1,
                        names[ci],
                        field
                    ))
                })?;
                if !parsed.is_finite() {
                    return Err(fail(format!(
                        "line {}: column {} value is not finite",
                        line_no + 1,
                        names[ci]
                    )));
                }
                Some(parsed)
            };
            cells[ci].push(v);
        }
        rows += 1;
    }
    if rows < 2 {
        return Err(fail(format!("need at least 2 data rows, got {rows}")));
    }

    let dense = |name: &str| -> Result<Vec<f64>> {
        let ci = col_index.iter().find(|(_, n)| n == name).unwrap().0;
        cells[ci]
            .iter()
            .enumerate()
            .map(|(ri, v)| {
                v.ok_or_else(|| fail(format!("column {name} empty at data row {}", ri + 1)))
            })
            .collect()
    };
    let sparse = |name: &str| -> Option<Vec<f64>> {
        let ci = col_index.iter().find(|(_, n)| n == name)?.0;
        let knots: Vec<(usize, f64)> = cells[ci]
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|x| (i, x)))
            .collect();
        if knots.is_empty() {
            None
        } else {
            Some(interpolate_sparse(&knots, rows))
        }
    };

    let time = dense("time")?;
    let emg_ta = dense("emg_ta")?;
    let emg_gas = dense("emg_gas")?;
    let ankle_angle = sparse("ankle_angle")
        .ok_or_else(|| fail("column ankle_angle has no values".into()))?;

    let event = col_index.iter().find(|(_, n)| n == "event").map(|&(ci, _)| {
        cells[ci]
            .iter()
            .map(|v| v.map(|x| x.round() as i64).unwrap_or(0))
            .collect()
    });

    let mut sidecar = Vec::new();
    for (_, name) in col_index.iter().filter(|(_, n)| n.starts_with("gt_")) {
        if let Some(col) = sparse(name) {
            sidecar.push((name.clone(), col));
        }
    }

    let fs_hz = (rows - 1) as f64 / (time[rows - 1] - time[0]);
    let trial = TrialRecording {
        time,
        emg_ta,
        emg_gas,
        ankle_angle,
        ankle_torque_ref: sparse("ankle_torque_ref"),
        grf_z: sparse("grf_z"),
        event,
        sidecar,
        fs_hz,
    };
    trial.validate().map_err(fail)?;
    Ok(trial)
}

/// Serialize a trial to CSV text: `#` comment lines, header, dense rows.
/// Floats are written with shortest round-trip formatting, so save/load is
/// value-exact and byte-deterministic.
pub fn trial_to_csv(trial: &TrialRecording, comments: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in comments {
        let _ = writeln!(out, "# {k}: {v}");
    }
    let mut header = vec!["time", "emg_ta", "emg_gas", "ankle_angle"];
    if trial.ankle_torque_ref.is_some() {
        header.push("ankle_torque_ref");
    }
    if trial.grf_z.is_some() {
        header.push("grf_z");
    }
    if trial.event.is_some() {
        header.push("event");
    }
    for (name, _) in &trial.sidecar {
        header.push(name);
    }
    let _ = writeln!(out, "{}", header.join(","));
    for i in 0..trial.len() {
        let _ = write!(
            out,
            "{},{},{},{}",
            trial.time[i], trial.emg_ta[i], trial.emg_gas[i], trial.ankle_angle[i]
        );
        if let Some(c) = &trial.ankle_torque_ref {
            let _ = write!(out, ",{}", c[i]);
        }
        if let Some(c) = &trial.grf_z {
            let _ = write!(out, ",{}", c[i]);
        }
        if let Some(c) = &trial.event {
            let _ = write!(out, ",{}", c[i]);
        }
        for (_, col) in &trial.sidecar {
            let _ = write!(out, ",{}", col[i]);
        }
        out.push('\n');
    }
    out
}

pub fn save_trial(
    path: impl AsRef<Path>,
    trial: &TrialRecording,
    comments: &[(String, String)],
) -> Result<()> {
    let path = path.as_ref();
    trial.validate().map_err(|reason| Error::InvalidTrial {
        path: path.display().to_string(),
        reason,
    })?;
    std::fs::write(path, trial_to_csv(trial, comments)).map_err(|e| Error::io(path, e))
}
