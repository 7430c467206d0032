//! Simulator and control toolkit for a water-circulating thermal robotic cover.

pub mod controller;
pub mod detect;
pub mod error;
pub mod kv;
pub mod lti;
pub mod model;
pub mod mpc;
pub mod observer;
pub mod params;
pub mod plant;
pub mod pump;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod sysid;

pub use error::{Error, ExitCode, Result};
pub use params::{preset_params, AmbientConfig, ControlTarget, Mode, PlantParams};
