//! EMG conditioning: high-pass filtering, rectification, envelope, MVC normalization.
//!
//! Raw electrode voltage goes through a Butterworth high-pass (motion-artifact
//! removal), full-wave rectification, a causal moving-average envelope, and
//! division by the channel's maximum-voluntary-contraction constant, producing
//! a dimensionless excitation in [0, 1]. The streaming state types make the
//! offline and online paths run the exact same arithmetic.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One raw EMG voltage channel at a uniform sample rate.
#[derive(Debug, Clone)]
pub struct RawEmgSeries {
    pub samples: Vec<f64>,
    pub fs_hz: f64,
}

impl RawEmgSeries {
    pub fn new(samples: Vec<f64>, fs_hz: f64) -> Result<Self> {
        if !(fs_hz > 0.0) {
            return Err(Error::InvalidInput(format!("sample rate {fs_hz} Hz must be > 0")));
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("EMG series is empty".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite EMG sample at index {i}")));
        }
        Ok(Self { samples, fs_hz })
    }
}

/// Second-order section in direct form II transposed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Both poles strictly inside the unit circle.
    fn is_stable(&self) -> bool {
        // Roots of z^2 + a1 z + a2.
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc >= 0.0 {
            let r = disc.sqrt();
            let z1 = 0.5 * (-self.a1 + r);
            let z2 = 0.5 * (-self.a1 - r);
            z1.abs() < 1.0 && z2.abs() < 1.0
        } else {
            // Complex pair: |z|^2 = a2.
            self.a2 < 1.0
        }
    }

    fn response_at(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = Complex64::from_polar(1.0, -2.0 * omega);
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (Complex64::new(1.0, 0.0) + self.a1 * z1 + self.a2 * z2)
    }
}

/// Pass band of a designed Butterworth filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    HighPass,
    LowPass,
}

/// A realized Butterworth filter: cascaded second-order sections for one
/// sample rate.
#[derive(Debug, Clone)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub cutoff_hz: f64,
    pub order: usize,
    pub fs_hz: f64,
    pub sections: Vec<Biquad>,
}

impl FilterSpec {
    /// Complex frequency response at `f_hz`.
    pub fn response_at(&self, f_hz: f64) -> Complex64 {
        let omega = 2.0 * PI * f_hz / self.fs_hz;
        self.sections
            .iter()
            .map(|s| s.response_at(omega))
            .product()
    }

    /// Magnitude response at `f_hz`.
    pub fn gain_at(&self, f_hz: f64) -> f64 {
        self.response_at(f_hz).norm()
    }

    /// Fresh all-zero streaming state for this filter.
    pub fn state(&self) -> CascadeState {
        CascadeState {
            regs: vec![[0.0; 2]; self.sections.len()],
        }
    }
}

fn design_butterworth(fs_hz: f64, cutoff_hz: f64, order: usize, kind: FilterKind) -> Result<FilterSpec> {
    if !(fs_hz > 0.0) {
        return Err(Error::InvalidSpec(format!("sample rate {fs_hz} Hz must be > 0")));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0) {
        return Err(Error::InvalidSpec(format!(
            "cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({} Hz)",
            fs_hz / 2.0
        )));
    }
    if order < 2 || order % 2 != 0 {
        return Err(Error::InvalidSpec(format!("order {order} must be even and >= 2")));
    }

    // Pre-warped analog cutoff so the bilinear transform lands the -3 dB
    // point exactly on cutoff_hz.
    let warped = 2.0 * fs_hz * (PI * cutoff_hz / fs_hz).tan();
    let two_fs = 2.0 * fs_hz;
    let n = order as f64;

    let mut sections = Vec::with_capacity(order / 2);
    for k in 0..order / 2 {
        // Upper-half-plane Butterworth prototype pole; its conjugate forms
        // the section's pair.
        let angle = PI * (2.0 * (k as f64 + 1.0) + n - 1.0) / (2.0 * n);
        let proto = Complex64::from_polar(1.0, angle);
        let pole_s = match kind {
            FilterKind::HighPass => warped / proto,
            FilterKind::LowPass => warped * proto,
        };
        // Bilinear transform of the analog pole.
        let pole_z = (two_fs + pole_s) / (two_fs - pole_s);
        let a1 = -2.0 * pole_z.re;
        let a2 = pole_z.norm_sqr();
        let (b0, b1, b2) = match kind {
            FilterKind::HighPass => {
                // Zeros at z = 1; normalize to unit gain at Nyquist.
                let g = (1.0 - a1 + a2) / 4.0;
                (g, -2.0 * g, g)
            }
            FilterKind::LowPass => {
                // Zeros at z = -1; normalize to unit gain at DC.
                let g = (1.0 + a1 + a2) / 4.0;
                (g, 2.0 * g, g)
            }
        };
        let s = Biquad { b0, b1, b2, a1, a2 };
        if !s.is_stable() {
            return Err(Error::InvalidSpec(format!(
                "designed section {k} is unstable (a1={a1}, a2={a2})"
            )));
        }
        sections.push(s);
    }

    Ok(FilterSpec {
        kind,
        cutoff_hz,
        order,
        fs_hz,
        sections,
    })
}

/// Butterworth high-pass as order/2 cascaded biquads via the bilinear
/// transform with frequency pre-warping. DC gain is exactly zero and the
/// magnitude at the cutoff is 1/sqrt(2).
pub fn design_highpass(fs_hz: f64, cutoff_hz: f64, order: usize) -> Result<FilterSpec> {
    design_butterworth(fs_hz, cutoff_hz, order, FilterKind::HighPass)
}

/// Butterworth low-pass, same machinery (used for optional velocity
/// smoothing).
pub fn design_lowpass(fs_hz: f64, cutoff_hz: f64, order: usize) -> Result<FilterSpec> {
    design_butterworth(fs_hz, cutoff_hz, order, FilterKind::LowPass)
}

/// Streaming state for one biquad cascade. One per stream; never shared.
#[derive(Debug, Clone)]
pub struct CascadeState {
    regs: Vec<[f64; 2]>,
}

impl CascadeState {
    /// Advance the cascade one sample.
    pub fn step(&mut self, filter: &FilterSpec, x: f64) -> f64 {
        let mut v = x;
        for (s, r) in filter.sections.iter().zip(self.regs.iter_mut()) {
            let y = s.b0 * v + r[0];
            r[0] = s.b1 * v - s.a1 * y + r[1];
            r[1] = s.b2 * v - s.a2 * y;
            v = y;
        }
        v
    }

    pub fn reset(&mut self) {
        for r in &mut self.regs {
            *r = [0.0; 2];
        }
    }
}

/// Streaming causal moving average. The window covers the trailing `len`
/// samples and is shorter while filling.
#[derive(Debug, Clone)]
pub struct MovingAverageState {
    ring: Vec<f64>,
    head: usize,
    filled: usize,
}

impl MovingAverageState {
    pub fn new(len: usize) -> Self {
        Self {
            ring: vec![0.0; len.max(1)],
            head: 0,
            filled: 0,
        }
    }

    /// Window length for a given rate and window duration.
    pub fn window_len(fs_hz: f64, window_ms: f64) -> usize {
        ((window_ms / 1000.0 * fs_hz).round() as usize).max(1)
    }

    pub fn step(&mut self, x: f64) -> f64 {
        self.ring[self.head] = x;
        self.head = (self.head + 1) % self.ring.len();
        if self.filled < self.ring.len() {
            self.filled += 1;
        }
        // Recomputing the sum keeps the result independent of history length
        // (no running-sum drift), which the determinism contract relies on.
        let mut sum = 0.0;
        if self.filled == self.ring.len() {
            for v in &self.ring {
                sum += v;
            }
        } else {
            for i in 0..self.filled {
                let idx = (self.head + self.ring.len() - 1 - i) % self.ring.len();
                sum += self.ring[idx];
            }
        }
        sum / self.filled as f64
    }

    pub fn reset(&mut self) {
        self.ring.iter_mut().for_each(|v| *v = 0.0);
        self.head = 0;
        self.filled = 0;
    }
}

/// One channel's MVC normalization: the constant is the arithmetic mean of
/// the three effort peaks.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvcChannel {
    pub constant_v: f64,
    pub peaks_v: [f64; 3],
}

impl MvcChannel {
    pub fn from_peaks(peaks_v: [f64; 3]) -> Result<Self> {
        let constant_v = (peaks_v[0] + peaks_v[1] + peaks_v[2]) / 3.0;
        if !(constant_v > 0.0) {
            return Err(Error::InvalidInput(format!(
                "MVC constant {constant_v} must be > 0"
            )));
        }
        Ok(Self { constant_v, peaks_v })
    }
}

/// Peak-detection knobs for MVC calibration. A calibration recording is a
/// handful of maximal-effort bursts; these defaults keep distinct bursts
/// from merging and ignore the quiet floor between them.
#[derive(Debug, Clone, Copy)]
pub struct PeakDetection {
    pub min_separation_s: f64,
    pub threshold_frac: f64,
}

impl Default for PeakDetection {
    fn default() -> Self {
        Self {
            min_separation_s: 1.0,
            threshold_frac: 0.2,
        }
    }
}

/// Envelope of one channel: high-pass, rectify, moving average. No MVC
/// division; shared by calibration and processing.
fn envelope_of(raw: &RawEmgSeries, filter: &FilterSpec, window_ms: f64) -> Result<Vec<f64>> {
    if (raw.fs_hz - filter.fs_hz).abs() > 1e-9 * filter.fs_hz {
        return Err(Error::InvalidInput(format!(
            "series rate {} Hz does not match filter rate {} Hz",
            raw.fs_hz, filter.fs_hz
        )));
    }
    let mut cascade = filter.state();
    let mut ma = MovingAverageState::new(MovingAverageState::window_len(raw.fs_hz, window_ms));
    Ok(raw
        .samples
        .iter()
        .map(|&x| ma.step(cascade.step(filter, x).abs()))
        .collect())
}

/// Calibrate one channel from a recording containing three separated
/// maximal-effort bursts: filter, rectify, envelope, then take the mean of
/// the three highest well-separated envelope peaks.
pub fn calibrate_mvc_channel(
    channel: &str,
    raw: &RawEmgSeries,
    filter: &FilterSpec,
    window_ms: f64,
    detection: PeakDetection,
) -> Result<MvcChannel> {
    let env = envelope_of(raw, filter, window_ms)?;
    let global_max = env.iter().cloned().fold(0.0f64, f64::max);
    if !(global_max > 0.0) {
        return Err(Error::CalibrationFailure {
            channel: channel.into(),
            reason: "envelope is identically zero".into(),
        });
    }
    let threshold = detection.threshold_frac * global_max;
    let min_gap = (detection.min_separation_s * raw.fs_hz).round() as usize;

    // Local maxima above threshold, candidate list in time order.
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for i in 1..env.len().saturating_sub(1) {
        if env[i] >= env[i - 1] && env[i] > env[i + 1] && env[i] >= threshold {
            candidates.push((i, env[i]));
        }
    }
    // Greedy selection by amplitude with the separation constraint.
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut picked: Vec<(usize, f64)> = Vec::new();
    for &(i, v) in &candidates {
        if picked.iter().all(|&(j, _)| i.abs_diff(j) >= min_gap) {
            picked.push((i, v));
        }
        if picked.len() == 3 {
            break;
        }
    }
    if picked.len() < 3 {
        return Err(Error::CalibrationFailure {
            channel: channel.into(),
            reason: format!(
                "found {} separated effort peak(s), need 3 (threshold {:.3e} V, separation {:.2} s)",
                picked.len(),
                threshold,
                detection.min_separation_s
            ),
        });
    }
    picked.sort_by_key(|&(i, _)| i);
    MvcChannel::from_peaks([picked[0].1, picked[1].1, picked[2].1])
}

/// Excitation signal e(t): dimensionless, clamped to [0, 1].
#[derive(Debug, Clone)]
pub struct ExcitationSeries {
    pub e: Vec<f64>,
    pub fs_hz: f64,
    /// Samples that exceeded the MVC constant and were clamped to 1.
    pub clamp_count: usize,
}

/// Streaming per-channel pipeline state: filter registers, envelope ring
/// and the MVC divisor. Single owner per stream.
#[derive(Debug, Clone)]
pub struct EmgChannelState {
    filter: FilterSpec,
    cascade: CascadeState,
    envelope: MovingAverageState,
    mvc_constant_v: f64,
    clamp_count: usize,
}

impl EmgChannelState {
    pub fn new(filter: FilterSpec, window_ms: f64, mvc_constant_v: f64) -> Result<Self> {
        if !(mvc_constant_v > 0.0) {
            return Err(Error::InvalidInput(format!(
                "MVC constant {mvc_constant_v} must be > 0"
            )));
        }
        let cascade = filter.state();
        let envelope =
            MovingAverageState::new(MovingAverageState::window_len(filter.fs_hz, window_ms));
        Ok(Self {
            filter,
            cascade,
            envelope,
            mvc_constant_v,
            clamp_count: 0,
        })
    }

    /// One raw voltage sample in, one excitation sample out.
    pub fn step(&mut self, x: f64) -> f64 {
        let filtered = self.cascade.step(&self.filter, x);
        let env = self.envelope.step(filtered.abs());
        let e = env / self.mvc_constant_v;
        if e > 1.0 {
            self.clamp_count += 1;
            1.0
        } else {
            e
        }
    }

    pub fn clamp_count(&self) -> usize {
        self.clamp_count
    }

    pub fn reset(&mut self) {
        self.cascade.reset();
        self.envelope.reset();
        self.clamp_count = 0;
    }
}

/// Full conditioning chain on a recorded series: high-pass, full-wave
/// rectification, causal moving average over `window_ms`, MVC division.
pub fn process_emg(
    raw: &RawEmgSeries,
    filter: &FilterSpec,
    window_ms: f64,
    mvc: &MvcChannel,
) -> Result<ExcitationSeries> {
    if (raw.fs_hz - filter.fs_hz).abs() > 1e-9 * filter.fs_hz {
        return Err(Error::InvalidInput(format!(
            "series rate {} Hz does not match filter rate {} Hz",
            raw.fs_hz, filter.fs_hz
        )));
    }
    let mut state = EmgChannelState::new(filter.clone(), window_ms, mvc.constant_v)?;
    let e: Vec<f64> = raw.samples.iter().map(|&x| state.step(x)).collect();
    Ok(ExcitationSeries {
        e,
        fs_hz: raw.fs_hz,
        clamp_count: state.clamp_count,
    })
}
