//! Shared fixtures for the `engines` benchmarks.

use siv_core::config::ConfigText;
use siv_core::config::RunConfig;
use siv_core::{build_level_scheme, Environment, HyperfineConfig, LevelScheme, MagneticConfig, SivParameters};


/// The 8-level scheme at 4.5 kG, `angle_deg` off axis.
pub fn scheme(angle_deg: f64) -> LevelScheme {
    let field = MagneticConfig { magnitude: 4500.0, polar_angle: angle_deg.to_radians() };
    build_level_scheme(&SivParameters::new(255e9), &field, &HyperfineConfig::disabled()).expect("valid scheme")
}

/// 4.5 K with a 38 ns orbital T1 and a 2.4 ms spin T1.
pub fn environment() -> Environment {
    Environment::calibrated(4.5, 47e9, 38e-9, 4.5, 2.4e-3)
}

/// A resolved preset.
pub fn preset(name: &str) -> RunConfig {
    ConfigText::preset(name).and_then(|c| c.resolve()).expect("preset resolves")
}
