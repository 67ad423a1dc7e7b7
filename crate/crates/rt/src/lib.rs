//! Fixed-rate streaming service around the EMG-to-torque controller, with a
//! virtual prosthesis plant in the loop.
//!
//! The wire protocol is newline-delimited: a plain-text handshake
//! (`HELLO v1 rate=<Hz>` answered by `OK v1 model=<hash>`), then one JSON
//! object per tick in each direction. [`serve`] runs the accept loop,
//! [`Client`] speaks the protocol from the other end, and [`Session`] is the
//! per-connection compute core shared by both the service and its tests.

pub mod client;
pub mod error;
pub mod plant;
pub mod protocol;
pub mod server;
pub mod session;

pub use client::Client;
pub use error::{Result, RtError};
pub use plant::{PlantConfig, PlantMode, VirtualPlant};
pub use protocol::{Reply, TickRequest, TickResponse};
pub use server::{serve, ServeConfig};
pub use session::{LatencyHistogram, Session, SessionConfig, TickStats};
