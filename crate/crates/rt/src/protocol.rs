//! Line protocol spoken over TCP.
//!
//! One line per message, newline terminated. The handshake is plain text;
//! everything after it is a JSON object per line. Floats are printed with 18
//! significant digits so every value reparses to the identical bit pattern;
//! the streamed and batch paths must agree to well under 1e-9 per sample and
//! this removes serialization from that budget entirely.

use crate::error::RtError;
use serde::Deserialize;

pub const VERSION: &str = "v1";

/// `{:.17e}` prints 1 + 17 significant digits, enough for exact f64 round
/// trips, in a form JSON accepts.
pub fn fmt_json_f64(v: f64) -> String {
    debug_assert!(v.is_finite(), "protocol floats must be finite");
    format!("{v:.17e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TickRequest {
    /// Sample timestamp (s).
    pub t: f64,
    /// Raw tibialis anterior EMG (V).
    pub emg_ta: f64,
    /// Raw gastrocnemius EMG (V).
    pub emg_gas: f64,
    /// Measured ankle angle (deg).
    pub theta: f64,
}

impl TickRequest {
    pub fn to_line(&self) -> String {
        format!(
            "{{\"t\":{},\"emg_ta\":{},\"emg_gas\":{},\"theta\":{}}}",
            fmt_json_f64(self.t),
            fmt_json_f64(self.emg_ta),
            fmt_json_f64(self.emg_gas),
            fmt_json_f64(self.theta),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.emg_ta.is_finite()
            && self.emg_gas.is_finite()
            && self.theta.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TickResponse {
    pub t: f64,
    /// Torque commanded by the controller (N·m).
    pub tau_cmd: f64,
    /// Torque the plant actually produced (N·m).
    pub tau_meas: f64,
    /// Plant ankle angle (deg).
    pub theta_plant: f64,
    pub a_ta: f64,
    pub a_gas: f64,
    /// Controller compute time for this tick (µs).
    pub lat_us: u64,
}

impl TickResponse {
    pub fn to_line(&self) -> String {
        format!(
            "{{\"t\":{},\"tau_cmd\":{},\"tau_meas\":{},\"theta_plant\":{},\"a_ta\":{},\"a_gas\":{},\"lat_us\":{}}}",
            fmt_json_f64(self.t),
            fmt_json_f64(self.tau_cmd),
            fmt_json_f64(self.tau_meas),
            fmt_json_f64(self.theta_plant),
            fmt_json_f64(self.a_ta),
            fmt_json_f64(self.a_gas),
            self.lat_us,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ErrorLine {
    pub error: String,
    pub msg: String,
}

pub fn error_line(code: &str, msg: &str) -> String {
    // serde_json handles string escaping; its map is ordered, keys sorted.
    serde_json::json!({ "error": code, "msg": msg }).to_string()
}

/// Either side of the post-handshake reply stream.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Error(ErrorLine),
    Tick(TickResponse),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hello {
    pub rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HelloOutcome {
    Accepted(Hello),
    /// Client speaks a different protocol version; the connection must close.
    VersionMismatch(String),
    Malformed(String),
}

pub fn hello_line(rate_hz: f64) -> String {
    format!("HELLO {VERSION} rate={rate_hz}")
}

pub fn parse_hello(line: &str) -> HelloOutcome {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.first() != Some(&"HELLO") {
        return HelloOutcome::Malformed(format!("expected HELLO, got {line:?}"));
    }
    match tokens.get(1) {
        Some(&VERSION) => {}
        Some(other) => {
            return HelloOutcome::VersionMismatch(format!(
                "server speaks {VERSION}, client sent {other}"
            ))
        }
        None => return HelloOutcome::Malformed("missing protocol version".into()),
    }
    let Some(rate_token) = tokens.get(2) else {
        return HelloOutcome::Malformed("missing rate=<Hz>".into());
    };
    let Some(rate_str) = rate_token.strip_prefix("rate=") else {
        return HelloOutcome::Malformed(format!("expected rate=<Hz>, got {rate_token:?}"));
    };
    let Ok(rate_hz) = rate_str.parse::<f64>() else {
        return HelloOutcome::Malformed(format!("unparseable rate {rate_str:?}"));
    };
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return HelloOutcome::Malformed(format!("rate {rate_hz} Hz must be positive"));
    }
    if tokens.len() > 3 {
        return HelloOutcome::Malformed("trailing tokens after rate".into());
    }
    HelloOutcome::Accepted(Hello { rate_hz })
}

pub fn ok_line(model_hash: &str) -> String {
    format!("OK {VERSION} model={model_hash}")
}

/// Client-side parse of the handshake reply. Returns the model hash.
pub fn parse_ok(line: &str) -> Result<String, RtError> {
    if let Ok(err) = serde_json::from_str::<ErrorLine>(line) {
        return Err(RtError::Server { code: err.error, msg: err.msg });
    }
    let tokens: Vec<&str> = line.split_whitespace().collect();
    match tokens.as_slice() {
        ["OK", VERSION, model] => model
            .strip_prefix("model=")
            .map(str::to_owned)
            .ok_or_else(|| RtError::Handshake(format!("expected model=<hash>, got {model:?}"))),
        _ => Err(RtError::Handshake(format!("unexpected handshake reply {line:?}"))),
    }
}
