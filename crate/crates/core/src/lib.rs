//! Metapopulation models of device-to-device information dissemination.
//!
//! The crate is organised as a pipeline:
//!
//! 1. [`cdr`] turns call-detail-style records into user trajectories and
//!    extracts the mobility parameters (routing matrix, departure and return
//!    rates, home communities, density).
//! 2. [`mobility`] holds the home-rooted mobility model, its closed-form
//!    steady state and the contact parameters derived from it.
//! 3. [`dynamics`] integrates the deterministic SIR and latent-state
//!    (SIR + E_S/E_I/E_R) compartmental systems.
//! 4. [`stochastic`] runs the same reaction system with tau-leaping.
//! 5. [`analysis`] computes validation metrics and epidemic descriptors.
//!
//! [`synth`] generates synthetic census and CDR corpora with planted ground
//! truth, and [`scenario`] wires the pieces into runnable experiments.

pub mod analysis;
pub mod cdr;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod matrix;
pub mod mobility;
pub mod rng;
pub mod scenario;
pub mod stochastic;
pub mod synth;

pub use analysis::{EpidemicSummary, GraphStats, TimeSeries};
pub use cdr::{CdrRecord, MobilityParameters, TrajectorySet, TransitionCounts};
pub use dynamics::{Compartment, CompartmentState, ModelParameters, SeedSpec};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use mobility::{ContactParameters, SteadyState};
pub use stochastic::{EnsembleResult, IntegerState};

/// Minutes in one day.
pub const MINUTES_PER_DAY: f64 = 1440.0;

/// Default observation window: 150 days expressed in minutes.
pub const DEFAULT_WINDOW_MINUTES: i64 = 150 * 24 * 60;
