//! Angular velocity estimation from the sampled ankle angle.
//!
//! Batch prediction defaults to centered finite differences (one-sided at
//! the endpoints). The streaming service cannot look ahead, so it uses the
//! causal backward difference; a model document can select `causal` for the
//! batch path too, which makes offline and online outputs identical.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::signal::{design_lowpass, CascadeState, FilterSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VelocityMode {
    #[default]
    Centered,
    Causal,
}

/// Centered finite differences, one-sided at both ends (deg/s).
pub fn centered_velocity(theta_deg: &[f64], fs_hz: f64) -> Vec<f64> {
    let n = theta_deg.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| {
                if i == 0 {
                    (theta_deg[1] - theta_deg[0]) * fs_hz
                } else if i == n - 1 {
                    (theta_deg[n - 1] - theta_deg[n - 2]) * fs_hz
                } else {
                    (theta_deg[i + 1] - theta_deg[i - 1]) * fs_hz / 2.0
                }
            })
            .collect(),
    }
}

/// Streaming velocity estimator: backward difference (first sample reports
/// zero) with an optional Butterworth low-pass on the estimate.
#[derive(Debug, Clone)]
pub struct CausalVelocity {
    fs_hz: f64,
    last: Option<f64>,
    smoother: Option<(FilterSpec, CascadeState)>,
}

impl CausalVelocity {
    /// `lowpass_hz` = 0 disables smoothing.
    pub fn new(fs_hz: f64, lowpass_hz: f64) -> Result<Self> {
        let smoother = if lowpass_hz > 0.0 {
            let f = design_lowpass(fs_hz, lowpass_hz, 2)?;
            let st = f.state();
            Some((f, st))
        } else {
            None
        };
        Ok(Self {
            fs_hz,
            last: None,
            smoother,
        })
    }

    pub fn step(&mut self, theta_deg: f64) -> f64 {
        let raw = match self.last {
            Some(prev) => (theta_deg - prev) * self.fs_hz,
            None => 0.0,
        };
        self.last = Some(theta_deg);
        match &mut self.smoother {
            Some((f, st)) => st.step(f, raw),
            None => raw,
        }
    }

    pub fn reset(&mut self) {
        self.last = None;
        if let Some((_, st)) = &mut self.smoother {
            st.reset();
        }
    }
}

/// Whole-trial velocity series for a given mode, with the same optional
/// smoothing filter streamed over the estimates.
pub fn velocity_series(
    theta_deg: &[f64],
    fs_hz: f64,
    mode: VelocityMode,
    lowpass_hz: f64,
) -> Result<Vec<f64>> {
    match mode {
        VelocityMode::Causal => {
            let mut est = CausalVelocity::new(fs_hz, lowpass_hz)?;
            Ok(theta_deg.iter().map(|&th| est.step(th)).collect())
        }
        VelocityMode::Centered => {
            let raw = centered_velocity(theta_deg, fs_hz);
            if lowpass_hz > 0.0 {
                let f = design_lowpass(fs_hz, lowpass_hz, 2)?;
                let mut st = f.state();
                Ok(raw.iter().map(|&v| st.step(&f, v)).collect())
            } else {
                Ok(raw)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn centered_is_exact_on_linear_ramp() {
        let fs = 100.0;
        let theta: Vec<f64> = (0..50).map(|i| 80.0 + 0.3 * i as f64).collect();
        let v = centered_velocity(&theta, fs);
        for &w in &v {
            assert_relative_eq!(w, 0.3 * fs, max_relative = 1e-12);
        }
    }

    #[test]
    fn centered_second_order_on_sine() {
        let fs = 1000.0;
        let f = 1.0;
        let theta: Vec<f64> = (0..1000)
            .map(|i| 100.0 + 10.0 * (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin())
            .collect();
        let v = centered_velocity(&theta, fs);
        for i in 1..999 {
            let t = i as f64 / fs;
            let expect =
                10.0 * 2.0 * std::f64::consts::PI * f * (2.0 * std::f64::consts::PI * f * t).cos();
            assert_relative_eq!(v[i], expect, max_relative = 1e-4, epsilon = 1e-3);
        }
    }

    #[test]
    fn causal_reports_zero_then_backward_difference() {
        let mut est = CausalVelocity::new(10.0, 0.0).unwrap();
        assert_eq!(est.step(90.0), 0.0);
        assert_relative_eq!(est.step(91.0), 10.0, max_relative = 1e-12);
        assert_relative_eq!(est.step(90.5), -5.0, max_relative = 1e-12);
    }

    #[test]
    fn series_matches_streaming_in_causal_mode() {
        let theta: Vec<f64> = (0..200).map(|i| 100.0 + (i as f64 * 0.11).sin()).collect();
        let batch = velocity_series(&theta, 500.0, VelocityMode::Causal, 6.0).unwrap();
        let mut est = CausalVelocity::new(500.0, 6.0).unwrap();
        for (i, &th) in theta.iter().enumerate() {
            assert_eq!(est.step(th), batch[i]);
        }
    }

    #[test]
    fn smoothing_attenuates_noise() {
        let fs = 1000.0;
        // Angle with high-frequency dither: raw backward difference is
        // noisy, smoothed estimate should stay near the true slope.
        let theta: Vec<f64> = (0..2000)
            .map(|i| 90.0 + 0.01 * i as f64 + 0.002 * if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let raw = velocity_series(&theta, fs, VelocityMode::Causal, 0.0).unwrap();
        let smooth = velocity_series(&theta, fs, VelocityMode::Causal, 6.0).unwrap();
        let spread = |v: &[f64]| {
            v[1500..]
                .iter()
                .map(|&x| (x - 10.0).abs())
                .fold(0.0f64, f64::max)
        };
        assert!(spread(&smooth) < 0.05 * spread(&raw));
    }
}
