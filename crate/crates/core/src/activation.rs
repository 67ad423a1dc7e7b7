//! Excitation-to-activation dynamics: a delayed second-order linear
//! recursion followed by a nonlinear shaping curve.
//!
//! The recursion u(t) = alpha e(t - d) - beta1 u(t-1) - beta2 u(t-2) models
//! calcium dynamics; the exponential curve a = (exp(A u) - 1)/(exp(A) - 1)
//! models the nonlinear EMG-to-force relation at low effort.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shared neural recursion coefficients as they appear in the model
/// document; the per-muscle shaping exponent joins them at runtime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuralCoeffs {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Electromechanical delay (ms), applied to the excitation input.
    pub delay_ms: f64,
}

impl Default for NeuralCoeffs {
    fn default() -> Self {
        Self {
            alpha: 0.9486,
            beta1: -0.056,
            beta2: 0.000627,
            delay_ms: 40.0,
        }
    }
}

impl NeuralCoeffs {
    pub fn with_shape(self, shape_a: f64) -> ActivationParams {
        ActivationParams {
            alpha: self.alpha,
            beta1: self.beta1,
            beta2: self.beta2,
            delay_ms: self.delay_ms,
            shape_a,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.with_shape(-1.0).validate()
    }
}

/// Recursion and shaping coefficients for one muscle's activation stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Electromechanical delay, applied to the excitation input.
    pub delay_ms: f64,
    /// Shaping exponent A, strictly between -3 and 0 (or ~0 for linear).
    pub shape_a: f64,
}

impl Default for ActivationParams {
    fn default() -> Self {
        Self {
            alpha: 0.9486,
            beta1: -0.056,
            beta2: 0.000627,
            delay_ms: 40.0,
            shape_a: -1.0,
        }
    }
}

impl ActivationParams {
    /// Poles of the recursion characteristic equation
    /// z^2 + beta1 z + beta2 = 0. Real and inside the unit circle for the
    /// default coefficients.
    pub fn poles(&self) -> (f64, f64) {
        let disc = self.beta1 * self.beta1 - 4.0 * self.beta2;
        assert!(disc >= 0.0, "complex recursion poles");
        let r = disc.sqrt();
        ((-self.beta1 + r) / 2.0, (-self.beta1 - r) / 2.0)
    }

    /// Steady-state u for constant unit excitation: alpha / (1 + beta1 + beta2).
    pub fn steady_state_gain(&self) -> f64 {
        self.alpha / (1.0 + self.beta1 + self.beta2)
    }

    pub fn validate(&self) -> Result<()> {
        let (p1, p2) = {
            let disc = self.beta1 * self.beta1 - 4.0 * self.beta2;
            if disc < 0.0 {
                let m = self.beta2.sqrt();
                (m, m)
            } else {
                let r = disc.sqrt();
                (
                    ((-self.beta1 + r) / 2.0).abs(),
                    ((-self.beta1 - r) / 2.0).abs(),
                )
            }
        };
        if p1 >= 1.0 || p2 >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "activation recursion is unstable (pole magnitudes {p1:.4}, {p2:.4})"
            )));
        }
        if !self.shape_a.is_finite() || self.shape_a <= -3.0 || self.shape_a >= 0.0 {
            // A exactly 0 is handled by the linear limit, but the stored
            // parameter must stay in the open interval to match the model's
            // identifiable range.
            if self.shape_a != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "shape exponent {} outside (-3, 0)",
                    self.shape_a
                )));
            }
        }
        if !(0.0..=100.0).contains(&self.delay_ms) {
            return Err(Error::InvalidParameter(format!(
                "delay {} ms outside [0, 100]",
                self.delay_ms
            )));
        }
        Ok(())
    }

    /// Delay in whole samples at a given rate (rounded).
    pub fn delay_samples(&self, fs_hz: f64) -> usize {
        (self.delay_ms / 1000.0 * fs_hz).round() as usize
    }
}

/// Nonlinear shaping a = (exp(A u) - 1)/(exp(A) - 1), with the linear limit
/// a = u as A -> 0. Monotonic on [0, 1] with fixed points at 0 and 1.
pub fn shape_activation(u: f64, shape_a: f64) -> f64 {
    if shape_a.abs() < 1e-6 {
        u
    } else {
        ((shape_a * u).exp_m1()) / (shape_a.exp_m1())
    }
}

/// Inverse of `shape_activation` on [0, 1] (used to construct command
/// profiles that land on a target activation).
pub fn unshape_activation(a: f64, shape_a: f64) -> f64 {
    if shape_a.abs() < 1e-6 {
        a
    } else {
        (a * shape_a.exp_m1()).ln_1p() / shape_a
    }
}

/// Streaming activation state: input delay line plus the last two unclamped
/// recursion outputs. The recursion history stays linear (unclamped); only
/// the returned activation is clamped to [0, 1].
#[derive(Debug, Clone)]
pub struct ActivationState {
    params: ActivationParams,
    delay: std::collections::VecDeque<f64>,
    u1: f64,
    u2: f64,
    last_u_raw: f64,
}

impl ActivationState {
    pub fn new(params: ActivationParams, fs_hz: f64) -> Result<Self> {
        params.validate()?;
        if !(fs_hz > 0.0) {
            return Err(Error::InvalidInput(format!("sample rate {fs_hz} Hz must be > 0")));
        }
        let d = params.delay_samples(fs_hz);
        let mut delay = std::collections::VecDeque::with_capacity(d + 1);
        delay.extend(std::iter::repeat(0.0).take(d));
        Ok(Self {
            params,
            delay,
            u1: 0.0,
            u2: 0.0,
            last_u_raw: 0.0,
        })
    }

    /// One excitation sample in, one activation sample out.
    pub fn step(&mut self, e: f64) -> f64 {
        // Pre-trial history is zero, so the delay line starts full of zeros.
        self.delay.push_back(e);
        let e_delayed = self.delay.pop_front().unwrap_or(e);
        let u = self.params.alpha * e_delayed - self.params.beta1 * self.u1
            - self.params.beta2 * self.u2;
        self.u2 = self.u1;
        self.u1 = u;
        self.last_u_raw = u;
        shape_activation(u.clamp(0.0, 1.0), self.params.shape_a)
    }

    /// Unclamped recursion output of the most recent step (steady-state and
    /// pole tests need the raw linear value).
    pub fn last_neural_raw(&self) -> f64 {
        self.last_u_raw
    }

    pub fn params(&self) -> &ActivationParams {
        &self.params
    }

    pub fn reset(&mut self) {
        for v in self.delay.iter_mut() {
            *v = 0.0;
        }
        self.u1 = 0.0;
        self.u2 = 0.0;
        self.last_u_raw = 0.0;
    }
}

/// Batch activation of a whole excitation series.
pub fn activation_series(e: &[f64], params: ActivationParams, fs_hz: f64) -> Result<Vec<f64>> {
    let mut st = ActivationState::new(params, fs_hz)?;
    Ok(e.iter().map(|&x| st.step(x)).collect())
}
