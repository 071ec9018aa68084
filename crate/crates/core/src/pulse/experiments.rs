//! Pump-probe relaxation experiments built on [`simulate_sequence`].

use rayon::prelude::*;

use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::level_model::LevelScheme;
use crate::rate_engine::{build_rate_matrix, steady_state_populations, thermal_populations, Environment, Laser, PopulationVector};

use super::sequence::{PulseChannel, PulseSequence, DEFAULT_EXTINCTION_DB, FAST_RISE_FALL};
use super::sim::{simulate_sequence, TimeTrace};

/// Decorrelated shot-noise seed for the `i`-th point of a scan.
fn point_detector(detector: &DetectorModel, i: usize) -> DetectorModel {
    let mix = (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    DetectorModel { rng_seed: detector.rng_seed ^ mix, ..detector.clone() }
}

/// Bins averaged for the leading edge.
pub const LEADING_BINS: usize = 3;
/// Fraction of the window averaged for the plateau.
pub const PLATEAU_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadingEdge {
    /// Mean of the first bins minus the plateau.
    pub height: f64,
    pub plateau: f64,
}

/// Leading-edge height of a readout trace.
pub fn leading_edge(trace: &TimeTrace) -> Result<LeadingEdge> {
    let c = &trace.counts;
    let n = c.len();
    if n < 20 {
        return Err(Error::Analysis(format!("readout window holds only {n} bins; need at least 20")));
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let tail = ((n as f64 * PLATEAU_FRACTION).round() as usize).max(2);
    let plateau = mean(&c[n - tail..]);
    let head = mean(&c[..LEADING_BINS]);
    let half = (tail / 2).max(1);
    let last = mean(&c[n - half..]);
    let before = mean(&c[n - 2 * half..n - half]);
    let drift = (last - before).abs();
    let excess = (head - plateau).abs();
    // Poisson scatter of the difference of two tail means, at three sigma.
    let noise = if trace.shot_noise { 3.0 * (2.0 * plateau.max(0.0) / half as f64).sqrt() } else { 0.0 };
    if drift > 0.02 * excess + noise && drift > 1e-3 * plateau.abs() {
        return Err(Error::Analysis(format!(
            "plateau not reached: the last bins still change by {:.2}% of the leading-edge excess; use a longer readout pulse",
            100.0 * drift / excess.max(f64::MIN_POSITIVE)
        )));
    }
    Ok(LeadingEdge { height: head - plateau, plateau })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinT1Point {
    pub tau: f64,
    pub h: f64,
    /// Leading edge of the readout applied to the laser-off equilibrium.
    pub a: f64,
    /// Late-time level of this readout.
    pub plateau: f64,
}

/// Channel and window of the readout: the pulse that starts last. An explicit
/// record window in the template takes precedence.
fn readout(seq: &PulseSequence) -> Result<(usize, (f64, f64))> {
    let (ch, on, off) = seq
        .channels
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.events.iter().map(move |&(on, off)| (i, on, off)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::config("sequence has no pulses"))?;
    Ok((ch, seq.record.unwrap_or((on, off))))
}

/// Leading-edge height against delay for an init/wait/read template.
///
/// Each run starts from the state left by a long readout (the pumped dark
/// state). `a` is the leading edge of the readout pulse applied to the
/// laser-off equilibrium.
pub fn spin_t1_experiment(
    scheme: &LevelScheme,
    env: &Environment,
    detector: &DetectorModel,
    taus: &[f64],
    template: &PulseSequence,
) -> Result<Vec<SpinT1Point>> {
    if template.gap_at.is_none() {
        return Err(Error::config("spin T1 template needs a `gap` placeholder"));
    }
    if taus.is_empty() {
        return Err(Error::config("delay list is empty"));
    }
    let probe_seq = template.with_gap(0.0)?;
    let (read, window) = readout(&probe_seq)?;
    let pumped = pumped_state(scheme, &probe_seq.channels[read].laser, env)?;

    let mut reference = probe_seq.clone();
    reference.record = Some(window);
    for (i, c) in reference.channels.iter_mut().enumerate() {
        c.events.retain(|&(on, _)| i == read && on >= window.0);
    }
    let thermal = thermal_populations(scheme, env)?;
    let a = leading_edge(&simulate_sequence(scheme, &reference, env, detector, &thermal)?)?.height;

    taus.par_iter()
        .enumerate()
        .map(|(i, &tau)| {
            let mut seq = template.with_gap(tau)?;
            seq.record = Some(readout(&seq)?.1);
            let trace = simulate_sequence(scheme, &seq, env, &point_detector(detector, i), &pumped)?;
            let edge = leading_edge(&trace).map_err(|e| Error::Analysis(format!("delay {tau:e} s: {e}")))?;
            Ok(SpinT1Point { tau, h: edge.height, a, plateau: edge.plateau })
        })
        .collect()
}

/// Two identical pulses separated by a dark gap.
#[derive(Debug, Clone, PartialEq)]
pub struct DoublePulse {
    pub laser: Laser,
    pub width: f64,
    pub rise_fall_time: f64,
    pub extinction_db: f64,
}

impl DoublePulse {
    /// 80 ns pulses through the fast modulator.
    pub fn new(laser: Laser) -> Self {
        Self { laser, width: 80e-9, rise_fall_time: FAST_RISE_FALL, extinction_db: DEFAULT_EXTINCTION_DB }
    }

    /// The sequence for one gap, recording the second pulse.
    pub fn sequence(&self, gap: f64) -> PulseSequence {
        let w = self.width;
        let end = 2.0 * w + gap;
        let mut seq = PulseSequence::new(end);
        seq.rise_fall_time = self.rise_fall_time;
        seq.extinction_db = self.extinction_db;
        seq.channels.push(PulseChannel {
            name: "d".into(),
            laser: self.laser.clone(),
            events: if gap > 0.0 { vec![(0.0, w), (w + gap, end)] } else { vec![(0.0, end)] },
        });
        seq.record = Some((w + gap, end));
        seq
    }
}

/// Leading-edge height of the second pulse against gap, starting from the
/// laser-off equilibrium.
pub fn orbital_t1_experiment(
    scheme: &LevelScheme,
    env: &Environment,
    detector: &DetectorModel,
    gaps: &[f64],
    pulses: &DoublePulse,
) -> Result<Vec<(f64, f64)>> {
    if scheme.field.magnitude != 0.0 {
        return Err(Error::config("the orbital T1 experiment expects a zero-field scheme"));
    }
    if !(pulses.width > 0.0) {
        return Err(Error::config("pulse width must be > 0"));
    }
    if gaps.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
        return Err(Error::config("gaps must be >= 0"));
    }
    let thermal = thermal_populations(scheme, env)?;
    gaps.par_iter()
        .enumerate()
        .map(|(i, &gap)| {
            let trace = simulate_sequence(scheme, &pulses.sequence(gap), env, &point_detector(detector, i), &thermal)?;
            let h = leading_edge(&trace).map_err(|e| Error::Analysis(format!("gap {gap:e} s: {e}")))?.height;
            Ok((gap, h))
        })
        .collect()
}

/// Shortest useful delay: the switching ramp and the excited-state decay left
/// over from the previous pulse have died away by then.
pub fn settle_time(scheme: &LevelScheme, rise_fall_time: f64) -> f64 {
    5.0 * (rise_fall_time + scheme.params.radiative_lifetime)
}

/// `count` evenly spaced delays from `settle` over five times the expected
/// time constant.
///
/// Zero is avoided on purpose: with no gap the two pulses merge, while any
/// finite gap puts the switching ramp inside the leading-edge bins.
pub fn auto_delays(expected: f64, count: usize, settle: f64) -> Vec<f64> {
    let span = 5.0 * expected.max(10e-9);
    (0..count).map(|k| settle + span * k as f64 / (count - 1).max(1) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadMode {
    /// The readout transition is bright for the initialised spin state.
    BrightRead,
    /// The readout transition is dark for the initialised spin state.
    DarkRead,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fidelity {
    pub value: f64,
    /// Set when the raw value fell outside [0, 1] and was clamped.
    pub out_of_range: bool,
}

/// Spin initialisation fidelity from `h0` (zero-delay height) and the
/// thermal asymptote `a`.
pub fn initialization_fidelity(h0: f64, a: f64, mode: ReadMode) -> Result<Fidelity> {
    if !(a > 0.0) {
        return Err(Error::Analysis(format!("asymptote a must be > 0, got {a}")));
    }
    let ratio = h0 / (2.0 * a);
    let raw = match mode {
        ReadMode::BrightRead => ratio,
        ReadMode::DarkRead => 1.0 - ratio,
    };
    Ok(Fidelity { value: raw.clamp(0.0, 1.0), out_of_range: !(0.0..=1.0).contains(&raw) })
}

/// Steady state left behind by a long pulse of `laser`.
pub fn pumped_state(scheme: &LevelScheme, laser: &Laser, env: &Environment) -> Result<PopulationVector> {
    steady_state_populations(&build_rate_matrix(scheme, std::slice::from_ref(laser), env)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fidelity_examples() {
        let f = initialization_fidelity(1.56, 1.0, ReadMode::BrightRead).unwrap();
        assert_eq!(f.value, 0.78);
        assert!(!f.out_of_range);
        let f = initialization_fidelity(0.1, 1.0, ReadMode::DarkRead).unwrap();
        assert_eq!(f.value, 0.95);
        for m in [ReadMode::BrightRead, ReadMode::DarkRead] {
            assert_eq!(initialization_fidelity(2.0, 2.0, m).unwrap().value, 0.5);
        }
        let f = initialization_fidelity(3.0, 1.0, ReadMode::BrightRead).unwrap();
        assert!(f.out_of_range && f.value == 1.0);
        assert!(initialization_fidelity(1.0, 0.0, ReadMode::BrightRead).is_err());
    }

    #[test]
    fn auto_delays_span() {
        let d = auto_delays(38e-9, 6, 1e-9);
        assert_eq!(d[0], 1e-9);
        assert!((d[5] - 191e-9).abs() < 1e-20);
        assert!((auto_delays(1e-12, 2, 0.0)[1] - 50e-9).abs() < 1e-20);
    }
}
