//! The EMG-to-torque controller: conditioning, activation dynamics and the
//! musculoskeletal engine composed into one streaming step, plus the batch
//! trial predictor built on the identical code path.

use serde::{Deserialize, Serialize};

use crate::activation::ActivationState;
use crate::error::{Error, Result};
use crate::msk::{ankle_torque, AnkleModel};
use crate::signal::{design_highpass, EmgChannelState, MvcChannel};
use crate::trial::TrialRecording;
use crate::velocity::{velocity_series, VelocityMode};

fn default_cutoff() -> f64 {
    40.0
}
fn default_order() -> usize {
    4
}
fn default_window() -> f64 {
    100.0
}
fn default_mvc() -> f64 {
    1.0
}

/// Signal-path settings stored in the model document. The MVC constants are
/// baked in here so a model file is self-sufficient for prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_cutoff")]
    pub filter_cutoff_hz: f64,
    #[serde(default = "default_order")]
    pub filter_order: usize,
    #[serde(default = "default_window")]
    pub envelope_window_ms: f64,
    /// MVC normalization constant for the TA (dorsiflexor) channel (V).
    #[serde(default = "default_mvc")]
    pub mvc_ta_v: f64,
    /// MVC normalization constant for the GAS (plantarflexor) channel (V).
    #[serde(default = "default_mvc")]
    pub mvc_gas_v: f64,
    #[serde(default)]
    pub velocity_mode: VelocityMode,
    /// Optional low-pass on the velocity estimate (Hz), 0 disables.
    #[serde(default)]
    pub velocity_lowpass_hz: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            filter_cutoff_hz: default_cutoff(),
            filter_order: default_order(),
            envelope_window_ms: default_window(),
            mvc_ta_v: default_mvc(),
            mvc_gas_v: default_mvc(),
            velocity_mode: VelocityMode::default(),
            velocity_lowpass_hz: 0.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.envelope_window_ms > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "envelope window {} ms must be > 0",
                self.envelope_window_ms
            )));
        }
        if !(self.mvc_ta_v > 0.0 && self.mvc_gas_v > 0.0) {
            return Err(Error::InvalidSpec("MVC constants must be > 0".into()));
        }
        if self.velocity_lowpass_hz < 0.0 {
            return Err(Error::InvalidSpec("velocity low-pass must be >= 0".into()));
        }
        Ok(())
    }
}

/// One controller tick's outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    /// Net ankle torque command (N·m), positive = dorsiflexion.
    pub tau_nm: f64,
    /// Dorsiflexor (TA) activation.
    pub a_ta: f64,
    /// Plantarflexor (GAS) activation.
    pub a_gas: f64,
}

/// Streaming controller: one instance per stream, advanced once per sample.
/// TA drives the dorsiflexor, GAS the plantarflexor.
#[derive(Debug, Clone)]
pub struct Controller {
    model: AnkleModel,
    ta: EmgChannelState,
    gas: EmgChannelState,
    act_ta: ActivationState,
    act_gas: ActivationState,
    fs_hz: f64,
}

impl Controller {
    pub fn new(model: AnkleModel, pipeline: &PipelineConfig, fs_hz: f64) -> Result<Self> {
        model.validate()?;
        pipeline.validate()?;
        if !(fs_hz > 0.0) {
            return Err(Error::InvalidInput(format!("rate {fs_hz} Hz must be > 0")));
        }
        let filter = design_highpass(fs_hz, pipeline.filter_cutoff_hz, pipeline.filter_order)?;
        let ta = EmgChannelState::new(
            filter.clone(),
            pipeline.envelope_window_ms,
            pipeline.mvc_ta_v,
        )?;
        let gas = EmgChannelState::new(filter, pipeline.envelope_window_ms, pipeline.mvc_gas_v)?;
        let act_ta = ActivationState::new(
            model.activation.with_shape(model.dorsiflexor.shape_a),
            fs_hz,
        )?;
        let act_gas = ActivationState::new(
            model.activation.with_shape(model.plantarflexor.shape_a),
            fs_hz,
        )?;
        Ok(Self {
            model,
            ta,
            gas,
            act_ta,
            act_gas,
            fs_hz,
        })
    }

    /// Convenience constructor when MVC constants come from a calibration
    /// rather than the pipeline config.
    pub fn with_mvc(
        model: AnkleModel,
        pipeline: &PipelineConfig,
        fs_hz: f64,
        ta: &MvcChannel,
        gas: &MvcChannel,
    ) -> Result<Self> {
        let cfg = PipelineConfig {
            mvc_ta_v: ta.constant_v,
            mvc_gas_v: gas.constant_v,
            ..*pipeline
        };
        Controller::new(model, &cfg, fs_hz)
    }

    pub fn fs_hz(&self) -> f64 {
        self.fs_hz
    }

    pub fn model(&self) -> &AnkleModel {
        &self.model
    }

    /// Clamp counts (TA, GAS): excitation samples that exceeded calibration.
    pub fn clamp_counts(&self) -> (usize, usize) {
        (self.ta.clamp_count(), self.gas.clamp_count())
    }

    /// One sample in, one torque command out. The angular velocity is an
    /// input so batch and streaming callers can share this exact path.
    pub fn step(
        &mut self,
        emg_ta_v: f64,
        emg_gas_v: f64,
        theta_deg: f64,
        omega_deg_s: f64,
    ) -> Result<StepOutput> {
        let e_ta = self.ta.step(emg_ta_v);
        let e_gas = self.gas.step(emg_gas_v);
        let a_ta = self.act_ta.step(e_ta);
        let a_gas = self.act_gas.step(e_gas);
        let tau_nm = ankle_torque(a_ta, a_gas, theta_deg, omega_deg_s, &self.model)?;
        Ok(StepOutput { tau_nm, a_ta, a_gas })
    }

    pub fn reset(&mut self) {
        self.ta.reset();
        self.gas.reset();
        self.act_ta.reset();
        self.act_gas.reset();
    }
}

/// Batch prediction over a whole trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub time: Vec<f64>,
    pub tau_nm: Vec<f64>,
    pub a_ta: Vec<f64>,
    pub a_gas: Vec<f64>,
    pub clamp_ta: usize,
    pub clamp_gas: usize,
}

/// Run the full controller over a recorded trial. Velocity comes from the
/// pipeline's configured estimator; everything else streams through the
/// same per-sample step as the online service.
pub fn predict_trial(
    trial: &TrialRecording,
    model: &AnkleModel,
    pipeline: &PipelineConfig,
) -> Result<Prediction> {
    let mut ctl = Controller::new(*model, pipeline, trial.fs_hz)?;
    let omega = velocity_series(
        &trial.ankle_angle,
        trial.fs_hz,
        pipeline.velocity_mode,
        pipeline.velocity_lowpass_hz,
    )?;
    let n = trial.len();
    let mut tau_nm = Vec::with_capacity(n);
    let mut a_ta = Vec::with_capacity(n);
    let mut a_gas = Vec::with_capacity(n);
    for i in 0..n {
        let out = ctl.step(
            trial.emg_ta[i],
            trial.emg_gas[i],
            trial.ankle_angle[i],
            omega[i],
        )?;
        tau_nm.push(out.tau_nm);
        a_ta.push(out.a_ta);
        a_gas.push(out.a_gas);
    }
    let (clamp_ta, clamp_gas) = ctl.clamp_counts();
    Ok(Prediction {
        time: trial.time.clone(),
        tau_nm,
        a_ta,
        a_gas,
        clamp_ta,
        clamp_gas,
    })
}
