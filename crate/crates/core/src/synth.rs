//! Synthetic-trial generator: the round-trip oracle behind the acceptance
//! tests and a convenient data source for exercising the pipeline.
//!
//! The generator works backwards through the controller. Commanded
//! activations are unshaped and divided by the recursion's DC gain to get
//! the excitation the pipeline must reconstruct; that excitation is written
//! onto a sign-alternating carrier at the Nyquist frequency, where the
//! high-pass is exactly transparent and rectification recovers the
//! magnitude. Every known delay in the chain (envelope window center,
//! electromechanical delay, filter and recursion group delay) is
//! compensated by evaluating the command trajectories ahead of time, so the
//! predicted torque matches the embedded ground truth to well under 1%
//! after the startup transient.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::activation::unshape_activation;
use crate::controller::PipelineConfig;
use crate::error::{Error, Result};
use crate::msk::{ankle_torque, AnkleModel};
use crate::signal::{design_highpass, MovingAverageState};
use crate::trial::TrialRecording;

/// An analytic command trajectory, evaluable at any real time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Trajectory {
    Constant {
        value: f64,
    },
    Sine {
        mean: f64,
        amplitude: f64,
        frequency_hz: f64,
        #[serde(default)]
        phase_rad: f64,
    },
    /// Linear between (time_s, value) points, flat outside them.
    Piecewise {
        points: Vec<[f64; 2]>,
    },
}

impl Trajectory {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Trajectory::Constant { value } => *value,
            Trajectory::Sine {
                mean,
                amplitude,
                frequency_hz,
                phase_rad,
            } => mean + amplitude * (2.0 * std::f64::consts::PI * frequency_hz * t + phase_rad).sin(),
            Trajectory::Piecewise { points } => {
                if points.is_empty() {
                    return 0.0;
                }
                if t <= points[0][0] {
                    return points[0][1];
                }
                let last = points[points.len() - 1];
                if t >= last[0] {
                    return last[1];
                }
                let i = points.partition_point(|p| p[0] <= t) - 1;
                let (t0, v0) = (points[i][0], points[i][1]);
                let (t1, v1) = (points[i + 1][0], points[i + 1][1]);
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }

    /// Analytic time derivative (right-sided at piecewise knots).
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Trajectory::Constant { .. } => 0.0,
            Trajectory::Sine {
                amplitude,
                frequency_hz,
                phase_rad,
                ..
            } => {
                let w = 2.0 * std::f64::consts::PI * frequency_hz;
                amplitude * w * (w * t + phase_rad).cos()
            }
            Trajectory::Piecewise { points } => {
                if points.len() < 2 || t < points[0][0] || t >= points[points.len() - 1][0] {
                    return 0.0;
                }
                let i = points.partition_point(|p| p[0] <= t) - 1;
                let i = i.min(points.len() - 2);
                (points[i + 1][1] - points[i][1]) / (points[i + 1][0] - points[i][0])
            }
        }
    }

    /// Conservative value bounds over all time.
    fn bounds(&self) -> (f64, f64) {
        match self {
            Trajectory::Constant { value } => (*value, *value),
            Trajectory::Sine { mean, amplitude, .. } => {
                (mean - amplitude.abs(), mean + amplitude.abs())
            }
            Trajectory::Piecewise { points } => points.iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])),
            ),
        }
    }

    fn validate(&self, name: &str, lo: f64, hi: f64) -> Result<()> {
        if let Trajectory::Piecewise { points } = self {
            if points.is_empty() {
                return Err(Error::InvalidProfile(format!("{name}: no points")));
            }
            for w in points.windows(2) {
                if w[1][0] <= w[0][0] {
                    return Err(Error::InvalidProfile(format!(
                        "{name}: times not strictly increasing at t = {}",
                        w[1][0]
                    )));
                }
            }
        }
        let (vmin, vmax) = self.bounds();
        if !(vmin.is_finite() && vmax.is_finite()) || vmin < lo || vmax > hi {
            return Err(Error::InvalidProfile(format!(
                "{name}: values [{vmin}, {vmax}] outside allowed [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

fn default_format_version() -> u32 {
    crate::config::FORMAT_VERSION
}

/// What a synthetic trial should contain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticProfile {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    pub duration_s: f64,
    pub rate_hz: f64,
    /// Gaussian noise on the reference torque column, as a fraction of the
    /// clean torque's standard deviation. Zero for exact round trips.
    #[serde(default)]
    pub noise_level: f64,
    /// Commanded dorsiflexor (TA) activation.
    pub ta: Trajectory,
    /// Commanded plantarflexor (GAS) activation.
    pub gas: Trajectory,
    /// Ankle angle (deg).
    pub angle: Trajectory,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        Self {
            format_version: default_format_version(),
            duration_s: 10.0,
            rate_hz: 1000.0,
            noise_level: 0.0,
            ta: Trajectory::Sine {
                mean: 0.25,
                amplitude: 0.2,
                frequency_hz: 0.4,
                phase_rad: 0.0,
            },
            gas: Trajectory::Sine {
                mean: 0.35,
                amplitude: 0.3,
                frequency_hz: 0.25,
                phase_rad: 1.2,
            },
            angle: Trajectory::Sine {
                mean: 100.0,
                amplitude: 12.0,
                frequency_hz: 0.5,
                phase_rad: 0.0,
            },
        }
    }
}

impl SyntheticProfile {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != crate::config::FORMAT_VERSION {
            return Err(Error::InvalidProfile(format!(
                "unsupported profile format_version {}",
                self.format_version
            )));
        }
        if !(self.duration_s > 0.0) || !(self.rate_hz > 0.0) {
            return Err(Error::InvalidProfile(
                "duration and rate must be positive".into(),
            ));
        }
        if self.duration_s * self.rate_hz < 2.0 {
            return Err(Error::InvalidProfile("profile yields fewer than 2 samples".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::InvalidProfile(format!(
                "noise level {} outside [0, 1]",
                self.noise_level
            )));
        }
        self.ta.validate("ta activation", 0.0, 1.0)?;
        self.gas.validate("gas activation", 0.0, 1.0)?;
        self.angle.validate("ankle angle", 70.0, 130.0)?;
        Ok(())
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let p: SyntheticProfile = toml::from_str(text).map_err(|e| Error::InvalidConfig {
            path: origin.to_string(),
            reason: e.to_string(),
        })?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("profile serializes")
    }
}

/// Group delay of the designed high-pass at the Nyquist frequency, in
/// samples; the carrier's envelope is delayed by this much.
fn nyquist_group_delay_samples(fs_hz: f64, cutoff_hz: f64, order: usize) -> Result<f64> {
    let filter = design_highpass(fs_hz, cutoff_hz, order)?;
    let f_nyq = fs_hz / 2.0;
    let h = 1e-4 * f_nyq;
    let phi_at = |f: f64| filter.response_at(f).arg();
    // Phase at Nyquist is exactly 0 by the section normalization.
    let dphi = phi_at(f_nyq - h) - phi_at(f_nyq);
    let domega = 2.0 * std::f64::consts::PI * h / fs_hz;
    Ok(dphi / domega)
}

/// Forward-evaluate the model along a profile and synthesize a trial whose
/// processed prediction reproduces the commanded activations.
///
/// Ground truth goes to sidecar columns (`gt_torque`, `gt_a_ta`,
/// `gt_a_gas`); `ankle_torque_ref` carries the ground-truth torque plus
/// seeded Gaussian noise scaled by `profile.noise_level`.
pub fn generate_trial(
    model: &AnkleModel,
    pipeline: &PipelineConfig,
    profile: &SyntheticProfile,
    seed: u64,
) -> Result<TrialRecording> {
    profile.validate()?;
    model.validate()?;
    pipeline.validate()?;

    let fs = profile.rate_hz;
    let n = (profile.duration_s * fs).round() as usize;
    let dt = 1.0 / fs;

    // Delay budget compensated by evaluating commands ahead of time:
    // envelope window center, whole-sample electromechanical delay, filter
    // group delay at the carrier, recursion group delay at DC.
    let window = MovingAverageState::window_len(fs, pipeline.envelope_window_ms);
    let act = model.activation;
    let d_samples = act.with_shape(-1.0).delay_samples(fs);
    let rec_delay = -(act.beta1 + 2.0 * act.beta2) / (1.0 + act.beta1 + act.beta2);
    let hp_delay =
        nyquist_group_delay_samples(fs, pipeline.filter_cutoff_hz, pipeline.filter_order)?;
    let lead_s = (d_samples as f64 + (window as f64 - 1.0) / 2.0 + rec_delay + hp_delay) * dt;

    let dc_gain = act.alpha / (1.0 + act.beta1 + act.beta2);
    let excitation_cmd = |traj: &Trajectory, shape_a: f64, t: f64| -> f64 {
        let a = traj.eval(t).clamp(0.0, 1.0);
        unshape_activation(a, shape_a) / dc_gain
    };

    let mut time = Vec::with_capacity(n);
    let mut emg_ta = Vec::with_capacity(n);
    let mut emg_gas = Vec::with_capacity(n);
    let mut angle = Vec::with_capacity(n);
    let mut gt_torque = Vec::with_capacity(n);
    let mut gt_a_ta = Vec::with_capacity(n);
    let mut gt_a_gas = Vec::with_capacity(n);

    for k in 0..n {
        let t = k as f64 * dt;
        let carrier = if k % 2 == 0 { 1.0 } else { -1.0 };
        let m_ta = excitation_cmd(&profile.ta, model.dorsiflexor.shape_a, t + lead_s);
        let m_gas = excitation_cmd(&profile.gas, model.plantarflexor.shape_a, t + lead_s);
        let th = profile.angle.eval(t);
        let om = profile.angle.derivative(t);
        let a_ta = profile.ta.eval(t).clamp(0.0, 1.0);
        let a_gas = profile.gas.eval(t).clamp(0.0, 1.0);
        let tau = ankle_torque(a_ta, a_gas, th, om, model)?;

        time.push(t);
        emg_ta.push(pipeline.mvc_ta_v * carrier * m_ta);
        emg_gas.push(pipeline.mvc_gas_v * carrier * m_gas);
        angle.push(th);
        gt_torque.push(tau);
        gt_a_ta.push(a_ta);
        gt_a_gas.push(a_gas);
    }

    let torque_ref = if profile.noise_level > 0.0 {
        let mean = gt_torque.iter().sum::<f64>() / n as f64;
        let sd = (gt_torque.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64)
            .sqrt();
        let normal = Normal::new(0.0, profile.noise_level * sd).map_err(|e| {
            Error::InvalidProfile(format!("noise distribution: {e}"))
        })?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        gt_torque
            .iter()
            .map(|&v| v + normal.sample(&mut rng))
            .collect()
    } else {
        gt_torque.clone()
    };

    Ok(TrialRecording {
        time,
        emg_ta,
        emg_gas,
        ankle_angle: angle,
        ankle_torque_ref: Some(torque_ref),
        grf_z: None,
        event: None,
        sidecar: vec![
            ("gt_torque".to_string(), gt_torque),
            ("gt_a_ta".to_string(), gt_a_ta),
            ("gt_a_gas".to_string(), gt_a_gas),
        ],
        fs_hz: fs,
    })
}
