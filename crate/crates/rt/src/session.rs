//! Per-connection compute state: controller, velocity estimator, plant, and
//! the tick accounting (latency histogram, deadline misses, faults).

use std::time::Instant;

use ankle_msk::{AnkleModel, CausalVelocity, Controller, PipelineConfig};

use crate::error::Result;
use crate::plant::{PlantConfig, VirtualPlant};
use crate::protocol::{TickRequest, TickResponse};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    /// Control rate (Hz); one tick must finish within 1/rate.
    pub rate_hz: f64,
    pub plant: PlantConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { rate_hz: 1000.0, plant: PlantConfig::default() }
    }
}

/// Upper edges of the latency buckets (µs); the last bucket is open.
const LATENCY_EDGES_US: [u64; 13] =
    [1, 2, 5, 10, 20, 50, 100, 200, 500, 1_000, 2_000, 5_000, 10_000];

#[derive(Debug, Clone)]
pub struct LatencyHistogram {
    counts: [u64; LATENCY_EDGES_US.len() + 1],
    total: u64,
    max_us: u64,
}

impl Default for LatencyHistogram {
    fn default() -> Self {
        Self { counts: [0; LATENCY_EDGES_US.len() + 1], total: 0, max_us: 0 }
    }
}

impl LatencyHistogram {
    pub fn record(&mut self, us: u64) {
        let idx = LATENCY_EDGES_US.partition_point(|&edge| edge < us);
        self.counts[idx] += 1;
        self.total += 1;
        self.max_us = self.max_us.max(us);
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn max_us(&self) -> u64 {
        self.max_us
    }

    /// Conservative quantile: the upper edge of the bucket where the
    /// cumulative count first reaches `q` of the total.
    pub fn quantile_upper_us(&self, q: f64) -> u64 {
        if self.total == 0 {
            return 0;
        }
        let threshold = (q.clamp(0.0, 1.0) * self.total as f64).ceil() as u64;
        let mut seen = 0;
        for (idx, &count) in self.counts.iter().enumerate() {
            seen += count;
            if seen >= threshold.max(1) {
                return LATENCY_EDGES_US.get(idx).copied().unwrap_or(self.max_us);
            }
        }
        self.max_us
    }

    pub fn summary(&self) -> String {
        format!(
            "n={} p50<={}us p99<={}us max={}us",
            self.total,
            self.quantile_upper_us(0.50),
            self.quantile_upper_us(0.99),
            self.max_us
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TickStats {
    pub ticks: u64,
    pub deadline_misses: u64,
    /// Samples rejected (non-finite input or model failure) where the
    /// previous command was held.
    pub faults: u64,
    pub latency: LatencyHistogram,
}

/// One connection's controller-plus-plant loop. Owns every piece of mutable
/// state, so ticking needs no locks and sessions cannot observe each other.
pub struct Session {
    controller: Controller,
    velocity: CausalVelocity,
    plant: VirtualPlant,
    dt_s: f64,
    held: HeldOutput,
    stats: TickStats,
}

#[derive(Debug, Clone, Copy)]
struct HeldOutput {
    tau_cmd: f64,
    a_ta: f64,
    a_gas: f64,
}

impl Session {
    pub fn new(model: &AnkleModel, pipeline: &PipelineConfig, config: &SessionConfig) -> Result<Self> {
        if !(config.rate_hz.is_finite() && config.rate_hz > 0.0) {
            return Err(crate::error::RtError::Config(format!(
                "rate {} Hz must be positive",
                config.rate_hz
            )));
        }
        let controller = Controller::new(*model, pipeline, config.rate_hz)?;
        let velocity = CausalVelocity::new(config.rate_hz, pipeline.velocity_lowpass_hz)?;
        let plant = VirtualPlant::new(config.plant)?;
        Ok(Self {
            controller,
            velocity,
            plant,
            dt_s: 1.0 / config.rate_hz,
            held: HeldOutput { tau_cmd: 0.0, a_ta: 0.0, a_gas: 0.0 },
            stats: TickStats::default(),
        })
    }

    /// One control period: condition, activate, solve torque, drive the
    /// plant. A sample that cannot produce a finite command (non-finite
    /// input, geometry failure) is rejected: the previous command is held
    /// and the fault counter incremented. The plant always advances, so
    /// time stays uniform.
    pub fn tick(&mut self, req: &TickRequest) -> TickResponse {
        let start = Instant::now();
        if req.is_finite() {
            let omega = self.velocity.step(req.theta);
            match self.controller.step(req.emg_ta, req.emg_gas, req.theta, omega) {
                Ok(out) if out.tau_nm.is_finite() => {
                    self.held = HeldOutput { tau_cmd: out.tau_nm, a_ta: out.a_ta, a_gas: out.a_gas };
                }
                _ => self.stats.faults += 1,
            }
        } else {
            self.stats.faults += 1;
        }
        let (tau_meas, theta_plant) = self.plant.step(self.held.tau_cmd, self.dt_s);

        let elapsed = start.elapsed();
        let lat_us = elapsed.as_micros().min(u64::MAX as u128) as u64;
        self.stats.ticks += 1;
        self.stats.latency.record(lat_us);
        if elapsed.as_secs_f64() > self.dt_s {
            self.stats.deadline_misses += 1;
        }
        TickResponse {
            t: req.t,
            tau_cmd: self.held.tau_cmd,
            tau_meas,
            theta_plant,
            a_ta: self.held.a_ta,
            a_gas: self.held.a_gas,
            lat_us,
        }
    }

    pub fn stats(&self) -> &TickStats {
        &self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ankle_msk::{predict_trial, TrialRecording, VelocityMode};

    fn request(t: f64, emg_ta: f64, emg_gas: f64, theta: f64) -> TickRequest {
        TickRequest { t, emg_ta, emg_gas, theta }
    }

    fn causal_pipeline() -> PipelineConfig {
        PipelineConfig {
            velocity_mode: VelocityMode::Causal,
            velocity_lowpass_hz: 6.0,
            ..Default::default()
        }
    }

    #[test]
    fn silent_muscles_at_neutral_command_zero_torque() {
        let model = AnkleModel::default();
        let mut session =
            Session::new(&model, &PipelineConfig::default(), &SessionConfig::default()).unwrap();
        for i in 0..50 {
            let resp = session.tick(&request(i as f64 * 1e-3, 0.0, 0.0, 90.0));
            assert_eq!(resp.tau_cmd, 0.0);
            assert_eq!(resp.tau_meas, 0.0);
            assert_eq!(resp.theta_plant, 90.0);
        }
        assert_eq!(session.stats().faults, 0);
        assert_eq!(session.stats().ticks, 50);
    }

    #[test]
    fn ticking_matches_batch_prediction() {
        let fs = 500.0;
        let n = 800;
        let mut trial = TrialRecording {
            time: (0..n).map(|i| i as f64 / fs).collect(),
            emg_ta: vec![0.0; n],
            emg_gas: vec![0.0; n],
            ankle_angle: vec![0.0; n],
            ankle_torque_ref: None,
            grf_z: None,
            event: None,
            sidecar: Vec::new(),
            fs_hz: fs,
        };
        for i in 0..n {
            let t = i as f64 / fs;
            let carrier = if i % 2 == 0 { 1.0 } else { -1.0 };
            trial.emg_ta[i] = carrier * 0.3 * (1.0 + (2.2 * t).sin()) / 2.0;
            trial.emg_gas[i] = carrier * 0.45 * (1.0 + (1.3 * t + 0.7).cos()) / 2.0;
            trial.ankle_angle[i] = 100.0 + 11.0 * (3.1 * t).sin();
        }
        let model = AnkleModel::default();
        let pipeline = causal_pipeline();
        let batch = predict_trial(&trial, &model, &pipeline).unwrap();

        let config = SessionConfig { rate_hz: fs, ..Default::default() };
        let mut session = Session::new(&model, &pipeline, &config).unwrap();
        for i in 0..n {
            let resp = session.tick(&request(
                trial.time[i],
                trial.emg_ta[i],
                trial.emg_gas[i],
                trial.ankle_angle[i],
            ));
            assert_eq!(resp.tau_cmd, batch.tau_nm[i], "sample {i}");
            assert_eq!(resp.a_ta, batch.a_ta[i]);
            assert_eq!(resp.a_gas, batch.a_gas[i]);
        }
        assert_eq!(session.stats().faults, 0);
    }

    #[test]
    fn non_finite_sample_holds_previous_command() {
        let model = AnkleModel::default();
        let pipeline = causal_pipeline();
        let mut session =
            Session::new(&model, &pipeline, &SessionConfig::default()).unwrap();
        // Drive to a non-trivial command first.
        let mut last = 0.0;
        for i in 0..400 {
            let carrier = if i % 2 == 0 { 0.8 } else { -0.8 };
            last = session.tick(&request(i as f64 * 1e-3, carrier, 0.0, 95.0)).tau_cmd;
        }
        assert!(last > 0.0);

        let resp = session.tick(&request(0.4, f64::NAN, 0.0, 95.0));
        assert_eq!(resp.tau_cmd, last, "held command");
        assert!(resp.tau_meas.is_finite());
        assert_eq!(session.stats().faults, 1);

        let resp = session.tick(&request(0.401, 0.8, 0.0, f64::INFINITY));
        assert_eq!(resp.tau_cmd, last);
        assert_eq!(session.stats().faults, 2);

        // A valid sample resumes normal operation.
        let resp = session.tick(&request(0.402, 0.8, 0.0, 95.0));
        assert!(resp.tau_cmd.is_finite());
        assert_eq!(session.stats().faults, 2);
        assert_eq!(session.stats().ticks, 403);
    }

    #[test]
    fn geometry_failure_is_a_fault_not_a_crash() {
        let model = AnkleModel::default();
        let pipeline = causal_pipeline();
        let mut session =
            Session::new(&model, &pipeline, &SessionConfig::default()).unwrap();
        // 250 deg puts both muscles past the geometric validity window.
        let resp = session.tick(&request(0.0, 0.0, 0.0, 250.0));
        assert_eq!(resp.tau_cmd, 0.0);
        assert_eq!(session.stats().faults, 1);
    }

    #[test]
    fn rejected_samples_do_not_disturb_controller_state() {
        // Controller and velocity state advance only on accepted samples, so
        // after a fault the command stream continues exactly as if the bad
        // sample had never arrived.
        let fs = 200.0;
        let pipeline = causal_pipeline();
        let model = AnkleModel::default();
        let config = SessionConfig { rate_hz: fs, ..Default::default() };
        let mut clean = Session::new(&model, &pipeline, &config).unwrap();
        let mut faulty = Session::new(&model, &pipeline, &config).unwrap();

        for i in 0..100 {
            let t = i as f64 / fs;
            let th = 100.0 + 0.1 * i as f64;
            let emg = if i % 2 == 0 { 0.3 } else { -0.3 };
            if i == 50 {
                faulty.tick(&request(t, f64::NAN, 0.0, th));
            }
            let a = clean.tick(&request(t, emg, 0.0, th));
            let b = faulty.tick(&request(t, emg, 0.0, th));
            assert_eq!(a.tau_cmd, b.tau_cmd, "sample {i}");
            assert_eq!(a.a_ta, b.a_ta);
            assert_eq!(a.a_gas, b.a_gas);
        }
        assert_eq!(clean.stats().faults, 0);
        assert_eq!(faulty.stats().faults, 1);
    }

    #[test]
    fn latency_histogram_quantiles() {
        let mut hist = LatencyHistogram::default();
        for us in [1u64, 3, 3, 7, 40, 90, 90, 90, 150, 600] {
            hist.record(us);
        }
        assert_eq!(hist.total(), 10);
        assert_eq!(hist.max_us(), 600);
        // Median falls in the (20, 50] bucket: five samples at or below 40.
        assert_eq!(hist.quantile_upper_us(0.5), 50);
        assert_eq!(hist.quantile_upper_us(1.0), 1_000);
        assert!(hist.summary().contains("n=10"));
    }

    #[test]
    fn deadline_miss_detection_uses_the_configured_period() {
        // A 1 MHz rate makes the 1 µs deadline impossible to meet, so every
        // tick must count as a miss; sanity for the accounting path.
        let model = AnkleModel::default();
        let config = SessionConfig { rate_hz: 1_000_000.0, ..Default::default() };
        let mut session = Session::new(&model, &causal_pipeline(), &config).unwrap();
        for i in 0..20 {
            session.tick(&request(i as f64 * 1e-6, 0.0, 0.0, 90.0));
        }
        assert!(session.stats().deadline_misses > 0);
    }
}
