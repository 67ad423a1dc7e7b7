//! EMG-driven ankle torque estimation around a lumped two-muscle
//! musculotendon model.
//!
//! The crate covers the full chain: raw EMG conditioning ([`signal`]),
//! neural-to-mechanical activation dynamics ([`activation`]), the
//! musculotendon geometry and contraction model ([`msk`]), a streaming
//! controller plus batch predictor ([`controller`]), trial file handling
//! ([`trial`]), configuration documents ([`config`]), repetition metrics
//! ([`evaluation`]), a synthetic-data oracle ([`synth`]) and multi-start
//! parameter identification ([`fitting`]).
//!
//! Conventions throughout: the ankle angle is the shank-foot angle in
//! degrees, near 90 when standing and increasing with plantarflexion;
//! torque is in N·m with dorsiflexion positive.

pub mod activation;
pub mod config;
pub mod controller;
pub mod error;
pub mod evaluation;
pub mod fitting;
pub mod msk;
pub mod signal;
pub mod synth;
pub mod trial;
pub mod velocity;

pub use activation::{ActivationParams, ActivationState, NeuralCoeffs};
pub use config::{ModelDocument, MvcDocument, Provenance};
pub use controller::{predict_trial, Controller, PipelineConfig, Prediction, StepOutput};
pub use error::{Error, Result};
pub use evaluation::{
    normalize_and_average, nrmse, r_squared, segment_repetitions, EvalDocument, MetricReport,
    SegmentMethod, SegmentParams,
};
pub use fitting::{fit, Bounds, FitConfig, FitResult, ParamVector};
pub use msk::{ankle_torque, AnkleModel, MuscleParams};
pub use synth::{generate_trial, SyntheticProfile, Trajectory};
pub use trial::{load_trial, save_trial, TrialRecording};
pub use velocity::{CausalVelocity, VelocityMode};
