//! Persistent configuration documents: the model file (muscles, activation,
//! pipeline) and the MVC calibration file, both strict-schema TOML.
//!
//! Documents carry a format version and the content hashes of the inputs
//! that produced them. Writers emit every field explicitly, so a saved file
//! never depends on implicit defaults and save/load is an identity.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::activation::NeuralCoeffs;
use crate::controller::PipelineConfig;
use crate::error::{Error, Result};
use crate::msk::{AnkleModel, MuscleParams};
use crate::signal::MvcChannel;

pub const FORMAT_VERSION: u32 = 1;

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of a file on disk.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Name and content hash of one input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputHash {
    pub name: String,
    pub sha256: String,
}

impl InputHash {
    pub fn of_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self {
            name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            sha256: file_sha256(path)?,
        })
    }
}

/// Where a document came from: generating command, seed, input hashes.
/// Deliberately no timestamps, so outputs are byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Provenance {
    pub source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<InputHash>,
}

/// Human-readable statement of the sign conventions baked into the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Conventions {
    pub angle: String,
    pub torque: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            angle: "shank-foot angle in degrees, ~90 in neutral stance, increasing with plantarflexion".into(),
            torque: "newton-meters, positive = dorsiflexion".into(),
        }
    }
}

/// The model file: everything `predict` and `serve` need besides the trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format_version: u32,
    #[serde(default)]
    pub provenance: Provenance,
    #[serde(default)]
    pub conventions: Conventions,
    #[serde(default)]
    pub activation: NeuralCoeffs,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    pub plantarflexor: MuscleParams,
    pub dorsiflexor: MuscleParams,
}

impl Default for ModelDocument {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            provenance: Provenance {
                source: "built-in defaults".into(),
                seed: None,
                inputs: Vec::new(),
            },
            conventions: Conventions::default(),
            activation: NeuralCoeffs::default(),
            pipeline: PipelineConfig::default(),
            plantarflexor: MuscleParams::default_plantarflexor(),
            dorsiflexor: MuscleParams::default_dorsiflexor(),
        }
    }
}

impl ModelDocument {
    pub fn from_model(model: &AnkleModel, pipeline: PipelineConfig, provenance: Provenance) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            provenance,
            conventions: Conventions::default(),
            activation: model.activation,
            pipeline,
            plantarflexor: model.plantarflexor,
            dorsiflexor: model.dorsiflexor,
        }
    }

    pub fn model(&self) -> AnkleModel {
        AnkleModel {
            dorsiflexor: self.dorsiflexor,
            plantarflexor: self.plantarflexor,
            activation: self.activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidSpec(format!(
                "unsupported model format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.model().validate()?;
        self.pipeline.validate()
    }

    /// Canonical serialized form; also what the model hash covers.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("model document serializes")
    }

    /// SHA-256 of the canonical TOML form, as sent in the service handshake.
    pub fn canonical_hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let doc: ModelDocument = toml::from_str(text).map_err(|e| Error::InvalidConfig {
            path: origin.to_string(),
            reason: e.to_string(),
        })?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

/// The MVC calibration file: per-channel constants and the peaks behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvcDocument {
    pub format_version: u32,
    #[serde(default)]
    pub provenance: Provenance,
    pub ta: MvcChannel,
    pub gas: MvcChannel,
}

impl MvcDocument {
    pub fn new(ta: MvcChannel, gas: MvcChannel, provenance: Provenance) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            provenance,
            ta,
            gas,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidSpec(format!(
                "unsupported MVC format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        for (name, ch) in [("ta", &self.ta), ("gas", &self.gas)] {
            if !(ch.constant_v > 0.0) {
                return Err(Error::CalibrationFailure {
                    channel: name.into(),
                    reason: format!("constant {} must be > 0", ch.constant_v),
                });
            }
            let mean = (ch.peaks_v[0] + ch.peaks_v[1] + ch.peaks_v[2]) / 3.0;
            if (mean - ch.constant_v).abs() > 1e-9 * ch.constant_v.abs() {
                return Err(Error::CalibrationFailure {
                    channel: name.into(),
                    reason: "constant is not the mean of the three peaks".into(),
                });
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("MVC document serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: MvcDocument = toml::from_str(&text).map_err(|e| Error::InvalidConfig {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_document_round_trip_is_identity() {
        let doc = ModelDocument::default();
        let text = doc.to_toml();
        let back = ModelDocument::from_toml(&text, "mem").unwrap();
        assert_eq!(doc, back);
        assert_eq!(text, back.to_toml());
    }

    #[test]
    fn canonical_hash_is_stable_and_content_sensitive() {
        let doc = ModelDocument::default();
        let h1 = doc.canonical_hash();
        let h2 = ModelDocument::default().canonical_hash();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        let mut other = ModelDocument::default();
        other.plantarflexor.f_max = 4801.0;
        assert_ne!(h1, other.canonical_hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = ModelDocument::default().to_toml();
        text.push_str("\nsurprise = 1\n");
        let err = ModelDocument::from_toml(&text, "mem").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { .. }));
    }

    #[test]
    fn wrong_format_version_rejected() {
        let mut doc = ModelDocument::default();
        doc.format_version = 2;
        let text = doc.to_toml();
        assert!(ModelDocument::from_toml(&text, "mem").is_err());
    }

    #[test]
    fn minimal_document_fills_defaults() {
        let text = r#"
format_version = 1

[plantarflexor]
f_max = 4000.0
l_opt = 0.04
r_max = 0.036
theta_max_deg = 110.0
theta_ref_deg = 72.0
action_sign = 1

[dorsiflexor]
f_max = 1500.0
l_opt = 0.06
r_max = 0.045
theta_max_deg = 72.0
theta_ref_deg = 110.0
action_sign = -1
"#;
        let doc = ModelDocument::from_toml(text, "mem").unwrap();
        assert_eq!(doc.pipeline.filter_cutoff_hz, 40.0);
        assert_eq!(doc.activation.alpha, 0.9486);
        assert_eq!(doc.plantarflexor.w, 0.56);
        // Saved form writes the filled defaults explicitly.
        let saved = doc.to_toml();
        assert!(saved.contains("filter_cutoff_hz"));
        assert!(saved.contains("eps_pe"));
    }

    #[test]
    fn interchange_violation_fails_load() {
        let mut doc = ModelDocument::default();
        doc.dorsiflexor.theta_ref_deg = 111.0;
        let text = doc.to_toml();
        assert!(ModelDocument::from_toml(&text, "mem").is_err());
    }

    #[test]
    fn mvc_document_round_trip_and_validation() {
        let ta = MvcChannel::from_peaks([1.0e-3, 1.2e-3, 0.8e-3]).unwrap();
        let gas = MvcChannel::from_peaks([2.0e-3, 2.0e-3, 2.0e-3]).unwrap();
        let doc = MvcDocument::new(ta, gas, Provenance::default());
        let text = doc.to_toml();
        let back: MvcDocument = toml::from_str(&text).unwrap();
        assert_eq!(doc, back);
        back.validate().unwrap();

        let mut bad = doc.clone();
        bad.ta.constant_v = 5.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sha256_known_answer() {
        // Standard test vector for the empty string.
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn save_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let mp = dir.path().join("model.toml");
        let doc = ModelDocument::default();
        doc.save(&mp).unwrap();
        let back = ModelDocument::load(&mp).unwrap();
        assert_eq!(doc, back);

        let missing = ModelDocument::load(dir.path().join("nope.toml"));
        assert!(matches!(missing, Err(Error::Io { .. })));
    }
}
