use crate::error::{Error, Result};
use crate::rate_engine::Laser;

/// Rise/fall time of the slow acousto-optic modulator (s).
pub const SLOW_RISE_FALL: f64 = 60e-9;
/// Rise/fall time of the fast electro-optic modulator (s).
pub const FAST_RISE_FALL: f64 = 1e-9;
pub const DEFAULT_EXTINCTION_DB: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PulseChannel {
    pub name: String,
    pub laser: Laser,
    /// `(t_on, t_off)` in seconds, sorted and disjoint.
    pub events: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pub channels: Vec<PulseChannel>,
    /// Time constant of the exponential switching ramps (s).
    pub rise_fall_time: f64,
    /// Off-state suppression (dB); leakage power is `10^(−dB/10)` of peak.
    pub extinction_db: f64,
    pub total_duration: f64,
    pub repetitions: usize,
    /// Placeholder delay position: [`with_gap`](Self::with_gap) shifts every
    /// event at or after this time.
    pub gap_at: Option<f64>,
    /// Detection window; the whole period when absent.
    pub record: Option<(f64, f64)>,
}

impl PulseSequence {
    pub fn new(total_duration: f64) -> Self {
        Self {
            channels: Vec::new(),
            rise_fall_time: SLOW_RISE_FALL,
            extinction_db: DEFAULT_EXTINCTION_DB,
            total_duration,
            repetitions: 1,
            gap_at: None,
            record: None,
        }
    }

    pub fn channel(&self, name: &str) -> Option<&PulseChannel> {
        self.channels.iter().find(|c| c.name == name)
    }

    /// Fractional power transmitted while a channel is off.
    pub fn leakage(&self) -> f64 {
        10f64.powf(-self.extinction_db / 10.0)
    }

    pub fn record_window(&self) -> (f64, f64) {
        self.record.unwrap_or((0.0, self.total_duration))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_duration > 0.0 && self.total_duration.is_finite()) {
            return Err(Error::config(format!("duration must be > 0, got {}", self.total_duration)));
        }
        if !(self.rise_fall_time >= 0.0 && self.rise_fall_time.is_finite()) {
            return Err(Error::config(format!("rise_fall must be >= 0, got {}", self.rise_fall_time)));
        }
        if !(self.extinction_db > 0.0 && self.extinction_db.is_finite()) {
            return Err(Error::config(format!("extinction must be > 0 dB, got {}", self.extinction_db)));
        }
        if self.repetitions == 0 {
            return Err(Error::config("repeat must be at least 1"));
        }
        if let Some(g) = self.gap_at {
            if !(0.0..=self.total_duration).contains(&g) {
                return Err(Error::config(format!("gap position {g} s lies outside the sequence")));
            }
        }
        if let Some((a, b)) = self.record {
            if !(0.0 <= a && a < b && b <= self.total_duration) {
                return Err(Error::config(format!("record window [{a}, {b}] s is not inside [0, duration]")));
            }
        }
        for (i, c) in self.channels.iter().enumerate() {
            if self.channels[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::config(format!("channel {} defined twice", c.name)));
            }
            c.laser.validate()?;
            for &(on, off) in &c.events {
                if off <= on {
                    return Err(Error::config(format!("channel {}: t_off {off} s before t_on {on} s", c.name)));
                }
                if on < 0.0 || off > self.total_duration {
                    return Err(Error::config(format!(
                        "channel {}: pulse [{on}, {off}] s outside the sequence duration {} s",
                        c.name, self.total_duration
                    )));
                }
            }
            for w in c.events.windows(2) {
                if w[1].0 < w[0].1 {
                    return Err(Error::config(format!(
                        "channel {}: pulse [{}, {}] s overlaps pulse [{}, {}] s",
                        c.name, w[1].0, w[1].1, w[0].0, w[0].1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Copy with `tau` inserted at the gap position. Sequences without a gap
    /// marker are returned unchanged.
    pub fn with_gap(&self, tau: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::config(format!("gap must be >= 0, got {tau}")));
        }
        let Some(g) = self.gap_at else {
            return Ok(self.clone());
        };
        // Starts at the marker move; ends only move when strictly after it.
        let start = |t: f64| if t >= g { t + tau } else { t };
        let end = |t: f64| if t > g { t + tau } else { t };
        let mut out = self.clone();
        for c in &mut out.channels {
            for e in &mut c.events {
                *e = (start(e.0), end(e.1));
            }
        }
        out.record = self.record.map(|(a, b)| (start(a), end(b)));
        out.total_duration += tau;
        out.gap_at = None;
        Ok(out)
    }
}
