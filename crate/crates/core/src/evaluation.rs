//! Accuracy evaluation: repetition segmentation, percent-completion
//! normalization with mean and SD curves, and the NRMSE / R-squared metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::TrialRecording;

/// How repetition boundaries are found in a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentMethod {
    /// Heel strikes: vertical GRF rising through a threshold (N).
    Grf,
    /// Rising crossings of the angle's session mean.
    Angle,
    /// Nonzero markers in the event column.
    Event,
}

/// Segmentation knobs; the defaults are recorded configuration choices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentParams {
    pub grf_threshold_n: f64,
    pub min_segment_s: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            grf_threshold_n: 20.0,
            min_segment_s: 0.3,
        }
    }
}

/// Half-open sample ranges [start, end), non-overlapping and ordered.
pub fn segment_repetitions(
    trial: &TrialRecording,
    method: SegmentMethod,
    params: &SegmentParams,
) -> Result<Vec<(usize, usize)>> {
    let boundaries: Vec<usize> = match method {
        SegmentMethod::Grf => {
            let grf = trial.grf_z.as_ref().ok_or_else(|| {
                Error::SegmentationFailure("grf method requires a grf_z column".into())
            })?;
            rising_crossings(grf, params.grf_threshold_n)
        }
        SegmentMethod::Angle => {
            let mean = trial.ankle_angle.iter().sum::<f64>() / trial.ankle_angle.len() as f64;
            rising_crossings(&trial.ankle_angle, mean)
        }
        SegmentMethod::Event => {
            let ev = trial.event.as_ref().ok_or_else(|| {
                Error::SegmentationFailure("event method requires an event column".into())
            })?;
            ev.iter()
                .enumerate()
                .filter_map(|(i, &m)| (m != 0).then_some(i))
                .collect()
        }
    };
    if boundaries.len() < 2 {
        return Err(Error::SegmentationFailure(format!(
            "found {} boundary marker(s), need at least 2",
            boundaries.len()
        )));
    }
    let min_len = (params.min_segment_s * trial.fs_hz).round() as usize;
    let segments: Vec<(usize, usize)> = boundaries
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|&(a, b)| b - a >= min_len.max(2))
        .collect();
    if segments.is_empty() {
        return Err(Error::SegmentationFailure(format!(
            "no segment longer than {:.2} s",
            params.min_segment_s
        )));
    }
    Ok(segments)
}

/// Indices i where the series rises through `threshold`: x[i-1] < t <= x[i].
fn rising_crossings(x: &[f64], threshold: f64) -> Vec<usize> {
    (1..x.len())
        .filter(|&i| x[i - 1] < threshold && x[i] >= threshold)
        .collect()
}

/// Repetition curves on a common percent-completion axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionSet {
    pub segments: Vec<(usize, usize)>,
    /// One curve per repetition, each `points` long.
    pub curves: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Pointwise sample standard deviation (zero with one repetition).
    pub sd: Vec<f64>,
}

/// Linearly resample one segment's samples onto `points` (0..100%).
pub fn resample_segment(samples: &[f64], points: usize) -> Vec<f64> {
    assert!(points >= 2);
    let n = samples.len();
    if n == 1 {
        return vec![samples[0]; points];
    }
    (0..points)
        .map(|j| {
            let pos = j as f64 * (n - 1) as f64 / (points - 1) as f64;
            let i = (pos.floor() as usize).min(n - 2);
            let frac = pos - i as f64;
            samples[i] + (samples[i + 1] - samples[i]) * frac
        })
        .collect()
}

/// Resample each segment of `signal` to 101 points and average pointwise.
pub fn normalize_and_average(
    signal: &[f64],
    segments: &[(usize, usize)],
    points: usize,
) -> Result<RepetitionSet> {
    if segments.is_empty() {
        return Err(Error::SegmentationFailure("no segments to average".into()));
    }
    for &(a, b) in segments {
        if b <= a || b > signal.len() {
            return Err(Error::InvalidInput(format!(
                "segment [{a}, {b}) out of range for signal of length {}",
                signal.len()
            )));
        }
    }
    let curves: Vec<Vec<f64>> = segments
        .iter()
        .map(|&(a, b)| resample_segment(&signal[a..b], points))
        .collect();
    let m = curves.len() as f64;
    let mean: Vec<f64> = (0..points)
        .map(|j| curves.iter().map(|c| c[j]).sum::<f64>() / m)
        .collect();
    let sd: Vec<f64> = (0..points)
        .map(|j| {
            if curves.len() < 2 {
                0.0
            } else {
                let var = curves
                    .iter()
                    .map(|c| (c[j] - mean[j]).powi(2))
                    .sum::<f64>()
                    / (m - 1.0);
                var.sqrt()
            }
        })
        .collect();
    Ok(RepetitionSet {
        segments: segments.to_vec(),
        curves,
        mean,
        sd,
    })
}

/// Root-mean-square error normalized by the reference range (max - min).
pub fn nrmse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(pred, reference)?;
    let (lo, hi) = reference
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if range <= 0.0 {
        return Err(Error::UndefinedMetric(
            "NRMSE undefined: reference is constant".into(),
        ));
    }
    let mse = pred
        .iter()
        .zip(reference)
        .map(|(&p, &r)| (p - r) * (p - r))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt() / range)
}

/// Squared Pearson correlation between the two series.
pub fn r_squared(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(pred, reference)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mr = reference.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&p, &r) in pred.iter().zip(reference) {
        sxy += (p - mp) * (r - mr);
        sxx += (p - mp) * (p - mp);
        syy += (r - mr) * (r - mr);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedMetric(
            "R^2 undefined: a series is constant".into(),
        ));
    }
    Ok((sxy * sxy) / (sxx * syy))
}

/// Coefficient of determination, 1 - SS_res/SS_tot. Unlike the squared
/// correlation this can go negative for badly scaled predictions; offered
/// as the alternative definition.
pub fn r_squared_cod(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(pred, reference)?;
    let n = reference.len() as f64;
    let mr = reference.iter().sum::<f64>() / n;
    let ss_tot: f64 = reference.iter().map(|&r| (r - mr) * (r - mr)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::UndefinedMetric(
            "R^2 undefined: reference is constant".into(),
        ));
    }
    let ss_res: f64 = pred
        .iter()
        .zip(reference)
        .map(|(&p, &r)| (p - r) * (p - r))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

fn check_pair(pred: &[f64], reference: &[f64]) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "series lengths differ: {} vs {}",
            pred.len(),
            reference.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 samples".into()));
    }
    Ok(())
}

/// Metrics for one prediction/reference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub nrmse: f64,
    pub r_squared: f64,
    /// Coefficient-of-determination alternative, for comparison.
    pub r_squared_cod: f64,
    pub n_repetitions: usize,
    pub task: String,
}

/// The persisted evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalDocument {
    pub format_version: u32,
    #[serde(default)]
    pub provenance: crate::config::Provenance,
    /// Leading transient excluded from the metrics (ms).
    pub skip_ms: f64,
    /// Segmentation method behind `n_repetitions`, when one was used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment: Option<SegmentMethod>,
    pub metrics: MetricReport,
}

impl EvalDocument {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("eval report serializes")
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let doc: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig {
            path: origin.to_string(),
            reason: e.to_string(),
        })?;
        if doc.format_version != crate::config::FORMAT_VERSION {
            return Err(Error::InvalidConfig {
                path: origin.to_string(),
                reason: format!("unsupported format_version {}", doc.format_version),
            });
        }
        Ok(doc)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}
