//! Virtual prosthesis plant: a saturated first-order torque actuator,
//! optionally wrapped in an impedance law that maps torque to ankle angle.

use crate::error::{Result, RtError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PlantMode {
    #[default]
    TorqueTracking,
    ImpedanceAngle,
}

fn default_lag() -> f64 {
    20.0
}
fn default_saturation() -> f64 {
    150.0
}
fn default_kp() -> f64 {
    2.0
}
fn default_neutral() -> f64 {
    90.0
}

/// Stand-in actuator constants; none are measured values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(default)]
    pub mode: PlantMode,
    /// Actuator lag time constant (ms).
    #[serde(default = "default_lag")]
    pub lag_ms: f64,
    /// Torque saturation, symmetric (N·m).
    #[serde(default = "default_saturation")]
    pub saturation_nm: f64,
    /// Impedance stiffness (N·m/deg).
    #[serde(default = "default_kp")]
    pub k_p_nm_per_deg: f64,
    /// Impedance neutral angle (deg).
    #[serde(default = "default_neutral")]
    pub neutral_deg: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            mode: PlantMode::default(),
            lag_ms: default_lag(),
            saturation_nm: default_saturation(),
            k_p_nm_per_deg: default_kp(),
            neutral_deg: default_neutral(),
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lag_ms > 0.0) {
            return Err(RtError::Config(format!("plant lag {} ms must be > 0", self.lag_ms)));
        }
        if !(self.saturation_nm > 0.0) {
            return Err(RtError::Config(format!(
                "plant saturation {} N·m must be > 0",
                self.saturation_nm
            )));
        }
        if !(self.k_p_nm_per_deg > 0.0) {
            return Err(RtError::Config(format!(
                "impedance stiffness {} N·m/deg must be > 0",
                self.k_p_nm_per_deg
            )));
        }
        if !(70.0..=130.0).contains(&self.neutral_deg) {
            return Err(RtError::Config(format!(
                "neutral angle {} deg outside [70, 130]",
                self.neutral_deg
            )));
        }
        Ok(())
    }
}

/// First-order lag toward the saturated command, discretized exactly so an
/// n-step response equals the continuous closed form at n·dt.
#[derive(Debug, Clone)]
pub struct VirtualPlant {
    config: PlantConfig,
    tau_nm: f64,
    theta_deg: f64,
}

impl VirtualPlant {
    pub fn new(config: PlantConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tau_nm: 0.0,
            theta_deg: config.neutral_deg,
        })
    }

    /// Advances one control period. Returns (measured torque, plant angle).
    pub fn step(&mut self, tau_cmd_nm: f64, dt_s: f64) -> (f64, f64) {
        debug_assert!(dt_s > 0.0);
        let sat = self.config.saturation_nm;
        let target = tau_cmd_nm.clamp(-sat, sat);
        let decay = (-dt_s / (self.config.lag_ms / 1000.0)).exp();
        self.tau_nm = target + (self.tau_nm - target) * decay;
        if self.config.mode == PlantMode::ImpedanceAngle {
            self.theta_deg = (self.config.neutral_deg
                - self.tau_nm / self.config.k_p_nm_per_deg)
                .clamp(70.0, 130.0);
        }
        (self.tau_nm, self.theta_deg)
    }

    pub fn torque_nm(&self) -> f64 {
        self.tau_nm
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta_deg
    }

    pub fn reset(&mut self) {
        self.tau_nm = 0.0;
        self.theta_deg = self.config.neutral_deg;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_stays_at_rest() {
        let mut plant = VirtualPlant::new(PlantConfig::default()).unwrap();
        for _ in 0..100 {
            let (tau, theta) = plant.step(0.0, 1e-3);
            assert_eq!(tau, 0.0);
            assert_eq!(theta, 90.0);
        }
    }

    #[test]
    fn step_response_matches_closed_form() {
        let mut plant = VirtualPlant::new(PlantConfig::default()).unwrap();
        let tau_target = 50.0;
        // 20 steps of 1 ms = one 20 ms time constant.
        let mut last = 0.0;
        for _ in 0..20 {
            last = plant.step(tau_target, 1e-3).0;
        }
        let expected = tau_target * (1.0 - (-1.0f64).exp());
        assert!((last - expected).abs() < 1e-6, "{last} vs {expected}");
    }

    #[test]
    fn saturation_bounds_measured_torque() {
        let mut plant = VirtualPlant::new(PlantConfig::default()).unwrap();
        let mut last = 0.0;
        for _ in 0..2000 {
            last = plant.step(500.0, 1e-3).0;
            assert!(last.abs() <= 150.0 + 1e-12);
        }
        assert!((last - 150.0).abs() < 1e-6);
    }

    #[test]
    fn impedance_mode_deflects_and_clamps() {
        let config = PlantConfig {
            mode: PlantMode::ImpedanceAngle,
            ..Default::default()
        };
        let mut plant = VirtualPlant::new(config).unwrap();
        // Sustained dorsiflexion torque: angle decreases from neutral.
        let (tau, theta) = {
            let mut out = (0.0, 0.0);
            for _ in 0..100 {
                out = plant.step(10.0, 1e-3);
            }
            out
        };
        assert!((theta - (90.0 - tau / 2.0)).abs() < 1e-9);
        assert!(theta < 90.0);
        // Saturated torque would ask for 90 - 75 = 15 deg: clamped at 70.
        for _ in 0..2000 {
            plant.step(1000.0, 1e-3);
        }
        assert_eq!(plant.theta_deg(), 70.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        for config in [
            PlantConfig { lag_ms: 0.0, ..Default::default() },
            PlantConfig { saturation_nm: -1.0, ..Default::default() },
            PlantConfig { k_p_nm_per_deg: 0.0, ..Default::default() },
            PlantConfig { neutral_deg: 60.0, ..Default::default() },
        ] {
            assert!(VirtualPlant::new(config).is_err());
        }
    }
}
