//! Time-domain simulation of pulsed laser sequences.

pub mod dsl;
pub mod experiments;
pub mod sequence;
pub mod sim;

pub use dsl::{parse_sequence, serialize_sequence};
pub use experiments::{
    auto_delays, initialization_fidelity, leading_edge, orbital_t1_experiment, settle_time, spin_t1_experiment,
    DoublePulse, Fidelity, LeadingEdge, ReadMode, SpinT1Point,
};
pub use sequence::{PulseChannel, PulseSequence};
pub use sim::{simulate_sequence, TimeTrace};
