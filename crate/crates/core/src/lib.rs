//! Pseudo-spectral simulation of the nonlinear Schrödinger equation with
//! multiplicative colored noise, small-noise large deviations and blow-up
//! tail estimates.

pub mod blowup;
pub mod control;
pub mod error;
pub mod grid;
pub mod events;
pub mod integrator;
pub mod mc;
pub mod noise;
pub mod optimizer;
pub mod parallel;
pub mod rng;
pub mod skeleton;
pub mod snapshot;
pub mod tails;

/// Version of this crate, echoed in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use control::ControlPath;
pub use error::{Error, Result};
pub use grid::{Field, Grid, NormKind, RealField, TimeExponent};
pub use integrator::{simulate, BlowupTime, SimParams, Trajectory};
pub use noise::{KernelConfig, KernelOperator, NoiseIncrement};
pub use events::{EventSpec, PreparedEvent, TerminalTarget, TubeReference};
pub use mc::MCEstimate;
pub use optimizer::{OptimizerOptions, RateCertificate};
pub use rng::StreamFactory;
