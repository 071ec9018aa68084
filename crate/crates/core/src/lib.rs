//! Desk-scale simulation of optical spin physics in the negatively charged
//! silicon-vacancy centre in diamond.
//!
//! * [`level_model`] builds the effective 8- or 16-level scheme.
//! * [`rate_engine`] solves the classical rate model: excitation and
//!   pump-probe spectra, population dynamics.
//! * [`lindblad`] handles coherent population trapping with a density matrix.
//! * [`pulse`] parses pulse sequences and simulates time-resolved experiments.
//! * [`analysis`] holds the fitters shared by every experiment.
//! * [`config`] and [`scenario`] drive the command-line front end.

pub mod analysis;
pub mod config;
pub mod detector;
pub mod error;
pub mod level_model;
pub mod lindblad;
pub mod ode;
pub mod output;
pub mod pulse;
pub mod rate_engine;
pub mod scenario;
pub mod spectrum;
pub mod units;

pub use detector::DetectorModel;
pub use error::{Error, Result};
pub use level_model::{
    build_level_scheme, spin_mixing_fraction, transition_lookup, HyperfineConfig, Level, LevelScheme, Line,
    MagneticConfig, Manifold, SivParameters, Spin, Transition,
};
pub use rate_engine::{Environment, Laser, PopulationVector, RateMatrix};
pub use spectrum::Spectrum;
