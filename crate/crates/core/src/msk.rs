//! Musculoskeletal engine: joint-angle geometry, Hill-type contraction
//! dynamics, and net ankle torque from two antagonist virtual muscles.
//!
//! Conventions: the ankle angle theta is the shank-foot angle in degrees,
//! near 90 in neutral stance and increasing with plantarflexion. Torque is
//! positive for dorsiflexion. Fiber velocity is negative when shortening.

use serde::{Deserialize, Serialize};

use crate::activation::NeuralCoeffs;
use crate::error::{Error, Result};

fn default_phi_ref() -> f64 {
    0.0
}
fn default_l_slack() -> f64 {
    0.0
}
fn default_w() -> f64 {
    0.56
}
fn default_v_max() -> f64 {
    -10.0
}
fn default_k() -> f64 {
    5.0
}
fn default_n() -> f64 {
    1.5
}
fn default_eps_pe() -> f64 {
    0.56
}
fn default_shape_a() -> f64 {
    -1.0
}

/// One virtual muscle's physiological constants.
///
/// The action sign `s` orients the muscle on the joint: +1 for the
/// plantarflexor (shortens as theta grows), -1 for the dorsiflexor.
/// `v_max` is signed negative (maximum shortening velocity, in optimal
/// fiber lengths per second).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuscleParams {
    /// Maximum isometric force (N).
    pub f_max: f64,
    /// Optimal fiber length (m).
    pub l_opt: f64,
    /// Maximum moment arm (m).
    pub r_max: f64,
    /// Angle of maximum moment arm (deg).
    pub theta_max_deg: f64,
    /// Angle where the fiber sits at optimal length (deg).
    pub theta_ref_deg: f64,
    /// Pennation angle at the reference posture (deg).
    #[serde(default = "default_phi_ref")]
    pub phi_ref_deg: f64,
    /// Tendon slack length (m). Torque-irrelevant under the rigid-tendon
    /// assumption but kept as a config field.
    #[serde(default = "default_l_slack")]
    pub l_slack: f64,
    /// Active force-length bell width.
    #[serde(default = "default_w")]
    pub w: f64,
    /// Maximum shortening velocity, signed negative (l_opt/s).
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    /// Force-velocity curvature.
    #[serde(default = "default_k")]
    pub k: f64,
    /// Eccentric force ceiling, > 1.
    #[serde(default = "default_n")]
    pub n: f64,
    /// Passive-element reference strain.
    #[serde(default = "default_eps_pe")]
    pub eps_pe: f64,
    /// Action sign: +1 plantarflexor, -1 dorsiflexor.
    pub action_sign: f64,
    /// Activation shaping exponent for this muscle.
    #[serde(default = "default_shape_a")]
    pub shape_a: f64,
}

impl MuscleParams {
    /// Plantarflexor with the reference fitted values.
    pub fn default_plantarflexor() -> Self {
        Self {
            f_max: 4800.0,
            l_opt: 0.0402,
            r_max: 0.0375,
            theta_max_deg: 112.0,
            theta_ref_deg: 70.0,
            phi_ref_deg: default_phi_ref(),
            l_slack: default_l_slack(),
            w: default_w(),
            v_max: default_v_max(),
            k: default_k(),
            n: default_n(),
            eps_pe: default_eps_pe(),
            action_sign: 1.0,
            shape_a: default_shape_a(),
        }
    }

    /// Dorsiflexor with the reference fitted values. Its theta_ref and
    /// theta_max are the plantarflexor's interchanged.
    pub fn default_dorsiflexor() -> Self {
        Self {
            f_max: 1800.0,
            l_opt: 0.065,
            r_max: 0.0449,
            theta_max_deg: 70.0,
            theta_ref_deg: 112.0,
            action_sign: -1.0,
            ..Self::default_plantarflexor()
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let check = |cond: bool, msg: String| -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name}: {msg}")))
            }
        };
        check(self.f_max > 0.0, format!("f_max {} must be > 0", self.f_max))?;
        check(self.l_opt > 0.0, format!("l_opt {} must be > 0", self.l_opt))?;
        check(self.r_max > 0.0, format!("r_max {} must be > 0", self.r_max))?;
        check(self.w > 0.0, format!("w {} must be > 0", self.w))?;
        check(self.k > 0.0, format!("k {} must be > 0", self.k))?;
        check(self.eps_pe > 0.0, format!("eps_pe {} must be > 0", self.eps_pe))?;
        check(self.n > 1.0, format!("n {} must be > 1", self.n))?;
        check(self.v_max < 0.0, format!("v_max {} must be < 0 (signed shortening)", self.v_max))?;
        check(
            self.action_sign == 1.0 || self.action_sign == -1.0,
            format!("action_sign {} must be +1 or -1", self.action_sign),
        )?;
        check(
            (0.0..90.0).contains(&self.phi_ref_deg),
            format!("phi_ref {} deg must lie in [0, 90)", self.phi_ref_deg),
        )?;
        check(self.l_slack >= 0.0, format!("l_slack {} must be >= 0", self.l_slack))?;
        check(
            self.theta_max_deg.is_finite() && self.theta_ref_deg.is_finite(),
            "theta_max/theta_ref must be finite".into(),
        )?;
        check(
            self.shape_a == 0.0 || (-3.0 < self.shape_a && self.shape_a < 0.0),
            format!("shape_a {} outside (-3, 0)", self.shape_a),
        )?;
        Ok(())
    }
}

/// Instantaneous fiber geometry at one joint state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberState {
    /// Contractile element length (m).
    pub l_ce: f64,
    /// Fiber velocity (m/s), negative when shortening.
    pub v_ce: f64,
    /// Pennation angle (deg).
    pub phi_deg: f64,
    /// Muscle-tendon unit length (m).
    pub l_mt: f64,
}

/// Two antagonist muscles plus the shared neural dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnkleModel {
    pub dorsiflexor: MuscleParams,
    pub plantarflexor: MuscleParams,
    pub activation: NeuralCoeffs,
}

impl Default for AnkleModel {
    fn default() -> Self {
        Self {
            dorsiflexor: MuscleParams::default_dorsiflexor(),
            plantarflexor: MuscleParams::default_plantarflexor(),
            activation: NeuralCoeffs::default(),
        }
    }
}

impl AnkleModel {
    /// Checks both muscles, the angle interchange (the dorsiflexor's
    /// reference angle is the plantarflexor's peak-moment-arm angle and
    /// vice versa) and the opposed action signs.
    pub fn validate(&self) -> Result<()> {
        self.plantarflexor.validate("plantarflexor")?;
        self.dorsiflexor.validate("dorsiflexor")?;
        self.activation.validate()?;
        if self.plantarflexor.action_sign != 1.0 || self.dorsiflexor.action_sign != -1.0 {
            return Err(Error::InvalidParameter(
                "plantarflexor must have action_sign +1 and dorsiflexor -1".into(),
            ));
        }
        let d = &self.dorsiflexor;
        let p = &self.plantarflexor;
        if (d.theta_ref_deg - p.theta_max_deg).abs() > 1e-9
            || (d.theta_max_deg - p.theta_ref_deg).abs() > 1e-9
        {
            return Err(Error::InvalidParameter(format!(
                "angle interchange violated: dorsi (ref {}, max {}) vs plant (ref {}, max {})",
                d.theta_ref_deg, d.theta_max_deg, p.theta_ref_deg, p.theta_max_deg
            )));
        }
        Ok(())
    }
}

/// Moment arm r(theta) = r_max cos(theta - theta_max), positive within
/// 90 deg of the peak angle.
pub fn moment_arm(theta_deg: f64, mp: &MuscleParams) -> Result<f64> {
    let delta = theta_deg - mp.theta_max_deg;
    if delta.abs() >= 90.0 {
        return Err(Error::DegenerateGeometry(format!(
            "moment arm non-physical: |theta - theta_max| = {:.2} deg >= 90",
            delta.abs()
        )));
    }
    Ok(mp.r_max * delta.to_radians().cos())
}

/// Muscle-tendon unit length. The bracketed term uses the constant r_max,
/// so d(l_mt)/d(theta) = -s * moment_arm(theta) exactly.
pub fn mtu_length(theta_deg: f64, mp: &MuscleParams) -> f64 {
    let sin_term = (mp.theta_max_deg - theta_deg).to_radians().sin()
        - (mp.theta_max_deg - mp.theta_ref_deg).to_radians().sin();
    mp.l_opt * mp.phi_ref_deg.to_radians().cos() + mp.l_slack + mp.action_sign * mp.r_max * sin_term
}

/// Fiber length, pennation and velocity at a joint state, under a rigid
/// tendon (series element fixed at l_slack) and constant fiber thickness.
pub fn fiber_state(theta_deg: f64, omega_deg_s: f64, mp: &MuscleParams) -> Result<FiberState> {
    let l_mt = mtu_length(theta_deg, mp);
    let p = l_mt - mp.l_slack;
    if p <= 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "fiber projection {p:.4} m <= 0 at theta = {theta_deg:.2} deg (fiber fully slack)"
        )));
    }
    let thickness = mp.l_opt * mp.phi_ref_deg.to_radians().sin();
    let l_ce = p.hypot(thickness);
    let phi_rad = (thickness / l_ce).asin();
    let r = moment_arm(theta_deg, mp)?;
    let v_mt = -mp.action_sign * r * omega_deg_s.to_radians();
    let v_ce = phi_rad.cos() * v_mt;
    Ok(FiberState {
        l_ce,
        v_ce,
        phi_deg: phi_rad.to_degrees(),
        l_mt,
    })
}

/// Active force-length bell: exp(-(l_opt - l_ce)^2 / (l_opt w)^2).
pub fn force_length(l_ce: f64, mp: &MuscleParams) -> f64 {
    let x = (mp.l_opt - l_ce) / (mp.l_opt * mp.w);
    (-x * x).exp()
}

/// Force-velocity scaling. `v_ce` here is normalized to optimal fiber
/// lengths per second; negative = shortening. Clamped to [0, n]: zero at
/// and beyond maximum shortening, capped at the eccentric ceiling.
pub fn force_velocity(v_ce: f64, mp: &MuscleParams) -> f64 {
    if v_ce < 0.0 {
        ((mp.v_max - v_ce) / (mp.v_max + mp.k * v_ce)).max(0.0)
    } else {
        let fv = mp.n + (mp.n - 1.0) * (mp.v_max + v_ce) / (7.56 * mp.k * v_ce - mp.v_max);
        fv.min(mp.n)
    }
}

/// Parallel passive element: quadratic above optimal length, zero below.
pub fn passive_force(l_ce: f64, mp: &MuscleParams) -> f64 {
    if l_ce > mp.l_opt {
        let strain = (l_ce - mp.l_opt) / (mp.l_opt * mp.eps_pe);
        mp.f_max * strain * strain
    } else {
        0.0
    }
}

/// Tendon-line muscle force: (f_max F_l F_v a + F_pe) cos(phi).
pub fn muscle_force(a: f64, fs: &FiberState, mp: &MuscleParams) -> f64 {
    let a = a.clamp(0.0, 1.0);
    let f_l = force_length(fs.l_ce, mp);
    let f_v = force_velocity(fs.v_ce / mp.l_opt, mp);
    let f_pe = passive_force(fs.l_ce, mp);
    (mp.f_max * f_l * f_v * a + f_pe) * fs.phi_deg.to_radians().cos()
}

/// Net ankle torque: dorsiflexor minus plantarflexor contribution,
/// positive = dorsiflexion.
pub fn ankle_torque(
    a_dorsi: f64,
    a_plant: f64,
    theta_deg: f64,
    omega_deg_s: f64,
    model: &AnkleModel,
) -> Result<f64> {
    let fs_d = fiber_state(theta_deg, omega_deg_s, &model.dorsiflexor)?;
    let fs_p = fiber_state(theta_deg, omega_deg_s, &model.plantarflexor)?;
    let f_d = muscle_force(a_dorsi, &fs_d, &model.dorsiflexor);
    let f_p = muscle_force(a_plant, &fs_p, &model.plantarflexor);
    let r_d = moment_arm(theta_deg, &model.dorsiflexor)?;
    let r_p = moment_arm(theta_deg, &model.plantarflexor)?;
    Ok(f_d * r_d - f_p * r_p)
}
