use crate::error::{Error, Result};

/// Photon detection: efficiency, time binning, dark counts and shot noise.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub efficiency: f64,
    /// Seconds.
    pub bin_width: f64,
    /// Dark/background count rate (Hz).
    pub background: f64,
    pub shot_noise: bool,
    pub rng_seed: u64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self { efficiency: 1.0, bin_width: 6.4e-6, background: 0.0, shot_noise: false, rng_seed: 0 }
    }
}

impl DetectorModel {
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::config(format!("detector efficiency must lie in (0, 1], got {}", self.efficiency)));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::config(format!("bin width must be > 0, got {}", self.bin_width)));
        }
        if !(self.background >= 0.0 && self.background.is_finite()) {
            return Err(Error::config(format!("background must be >= 0, got {}", self.background)));
        }
        Ok(())
    }
}
