//! Time-resolved fluorescence under a pulse sequence.
//!
//! The rate model is integrated piecewise between switching times and bin
//! edges. Populations are augmented with one extra component that
//! accumulates the emitted photon number, so bin counts come straight out of
//! the integrator.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use sha2::{Digest, Sha256};

use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::level_model::LevelScheme;
use crate::ode::{LinearSystem, Trbdf2};
use crate::rate_engine::{incoherent_channels, stimulated_channels, Environment, PopulationVector, RateMatrix};

use super::dsl::serialize_sequence;
use super::sequence::PulseSequence;

pub const TRACE_CSV_HEADER: &str = "t_start_s,t_end_s,counts";

#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrace {
    pub bin_edges: Vec<f64>,
    /// Expected (or Poisson-sampled) counts per bin, summed over repetitions.
    pub counts: Vec<f64>,
    pub sequence_hash: String,
    pub scheme_hash: String,
    /// Populations at the end of the last repetition.
    pub final_populations: PopulationVector,
    /// Counts are Poisson samples rather than expectations.
    pub shot_noise: bool,
}

impl TimeTrace {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(48 * (self.len() + 1));
        s.push_str(TRACE_CSV_HEADER);
        s.push('\n');
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{:e},{:e},{:e}", self.bin_edges[k], self.bin_edges[k + 1], c);
        }
        s
    }
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Bin edges covering `[a, b]` at `width`; the last bin may be shorter.
pub fn bin_edges(a: f64, b: f64, width: f64) -> Vec<f64> {
    let n = (((b - a) / width) - 1e-9).ceil().max(1.0) as usize;
    let mut edges: Vec<f64> = (0..n).map(|k| a + k as f64 * width).collect();
    edges.push(b);
    edges
}

/// Envelope of one channel: first-order response to its on/off pattern.
struct Envelope {
    /// `(time, target)` switching points within one period, sorted.
    switches: Vec<(f64, f64)>,
    tau: f64,
    leak: f64,
}

impl Envelope {
    fn new(events: &[(f64, f64)], tau: f64, leak: f64) -> Self {
        let mut switches = Vec::with_capacity(2 * events.len());
        for &(on, off) in events {
            switches.push((on, 1.0));
            switches.push((off, leak));
        }
        Self { switches, tau, leak }
    }

    fn target(&self, t: f64) -> f64 {
        self.switches.iter().take_while(|s| s.0 <= t).last().map_or(self.leak, |s| s.1)
    }

    /// Relax from `e0` towards `target` for `dt`.
    fn relax(&self, e0: f64, target: f64, dt: f64) -> f64 {
        if self.tau == 0.0 {
            target
        } else {
            target + (e0 - target) * (-dt / self.tau).exp()
        }
    }
}

/// Generator with time-dependent laser amplitudes over one segment, plus the
/// photon-counting row.
struct Driven<'a> {
    base: &'a DMatrix<f64>,
    stim: &'a [DMatrix<f64>],
    /// Per channel `(target, value at t0)`.
    state: Vec<(f64, f64)>,
    t0: f64,
    tau: f64,
}

impl LinearSystem<f64> for Driven<'_> {
    fn dim(&self) -> usize {
        self.base.nrows()
    }

    fn matrix(&self, t: f64, out: &mut DMatrix<f64>) {
        out.copy_from(self.base);
        for (s, &(target, e0)) in self.stim.iter().zip(&self.state) {
            let e = if self.tau == 0.0 { target } else { target + (e0 - target) * (-(t - self.t0) / self.tau).exp() };
            *out += s * e;
        }
    }
}

struct Frozen<'a>(&'a DMatrix<f64>);

impl LinearSystem<f64> for Frozen<'_> {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn is_constant(&self) -> bool {
        true
    }

    fn matrix(&self, _t: f64, out: &mut DMatrix<f64>) {
        out.copy_from(self.0);
    }
}

/// Relative envelope deviation treated as fully settled.
const SETTLED: f64 = 1e-13;

pub fn simulate_sequence(
    scheme: &LevelScheme,
    seq: &PulseSequence,
    env: &Environment,
    detector: &DetectorModel,
    initial: &PopulationVector,
) -> Result<TimeTrace> {
    seq.validate()?;
    detector.validate()?;
    env.validate()?;
    if seq.gap_at.is_some() {
        return Err(Error::config("sequence still has a gap placeholder; fill it with a delay first"));
    }
    let n = scheme.len();
    if initial.len() != n {
        return Err(Error::config(format!("initial state has {} levels, scheme has {n}", initial.len())));
    }

    // Augmented generator: the last row integrates the spontaneous photon rate.
    let incoherent = RateMatrix::from_channels(n, &incoherent_channels(scheme, env));
    let mut base = DMatrix::zeros(n + 1, n + 1);
    base.view_mut((0, 0), (n, n)).copy_from(&incoherent.generator);
    for l in scheme.excited_levels() {
        base[(n, l.index)] = scheme.total_decay_rate(l.index);
    }
    let mut stim = Vec::with_capacity(seq.channels.len());
    for c in &seq.channels {
        let m = RateMatrix::from_channels(n, &stimulated_channels(scheme, &c.laser)?);
        let mut big = DMatrix::zeros(n + 1, n + 1);
        big.view_mut((0, 0), (n, n)).copy_from(&m.generator);
        stim.push(big);
    }
    let leak = seq.leakage();
    let envelopes: Vec<Envelope> =
        seq.channels.iter().map(|c| Envelope::new(&c.events, seq.rise_fall_time, leak)).collect();

    let (rec_a, rec_b) = seq.record_window();
    let edges = bin_edges(rec_a, rec_b, detector.bin_width);
    let mut breaks: Vec<f64> = vec![0.0, seq.total_duration];
    breaks.extend(seq.channels.iter().flat_map(|c| c.events.iter().flat_map(|e| [e.0, e.1])));
    breaks.extend(edges.iter().copied());
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let solver = Trbdf2::default().conserving((0..n).collect());
    let mut y = DVector::zeros(n + 1);
    y.rows_mut(0, n).copy_from(&initial.0);
    let mut levels: Vec<f64> = vec![leak; seq.channels.len()];
    let mut counts = vec![0.0; edges.len() - 1];
    let mut h: Option<f64> = None;

    for _rep in 0..seq.repetitions {
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let bin = edges.windows(2).position(|e| a >= e[0] && b <= e[1]);
            y[n] = 0.0;
            let state: Vec<(f64, f64)> =
                envelopes.iter().zip(&levels).map(|(env, &e0)| (env.target(a), e0)).collect();
            integrate_segment(&solver, &base, &stim, &state, seq.rise_fall_time, a, b, &mut y, &mut h)
                .map_err(|e| match (e, bin) {
                    (Error::Integration { time, message }, Some(k)) => {
                        Error::Integration { time, message: format!("bin {k}: {message}") }
                    }
                    (e, _) => e,
                })?;
            for ((lvl, env), (target, _)) in levels.iter_mut().zip(&envelopes).zip(&state) {
                *lvl = env.relax(*lvl, *target, b - a);
            }
            if let Some(k) = bin {
                counts[k] += y[n];
            }
        }
    }

    let mut final_p = y.rows(0, n).into_owned();
    final_p.iter_mut().for_each(|v| *v = v.max(0.0));
    let s = final_p.sum();
    final_p /= s;

    for (k, c) in counts.iter_mut().enumerate() {
        let width = edges[k + 1] - edges[k];
        *c = (*c * detector.efficiency).max(0.0) + detector.background * width * seq.repetitions as f64;
    }
    if detector.shot_noise {
        let mut rng = ChaCha8Rng::seed_from_u64(detector.rng_seed);
        for c in counts.iter_mut() {
            if *c > 0.0 {
                let d = Poisson::new(*c).map_err(|e| Error::Solver(format!("Poisson sampling failed: {e}")))?;
                *c = d.sample(&mut rng);
            }
        }
    }

    Ok(TimeTrace {
        bin_edges: edges,
        counts,
        sequence_hash: sha256_hex(&serialize_sequence(seq)),
        scheme_hash: sha256_hex(&scheme.fingerprint()),
        final_populations: PopulationVector(final_p),
        shot_noise: detector.shot_noise,
    })
}

#[allow(clippy::too_many_arguments)]
fn integrate_segment(
    solver: &Trbdf2,
    base: &DMatrix<f64>,
    stim: &[DMatrix<f64>],
    state: &[(f64, f64)],
    tau: f64,
    a: f64,
    b: f64,
    y: &mut DVector<f64>,
    h: &mut Option<f64>,
) -> Result<()> {
    // After `settle` every envelope equals its target to working precision.
    let settle = state
        .iter()
        .map(|&(target, e0)| {
            let dev = (e0 - target).abs() / target.max(f64::MIN_POSITIVE);
            if tau == 0.0 || dev <= SETTLED {
                a
            } else {
                a + tau * (dev / SETTLED).ln()
            }
        })
        .fold(a, f64::max)
        .min(b);
    if settle > a {
        let sys = Driven { base, stim, state: state.to_vec(), t0: a, tau };
        *y = solver.advance(&sys, a, y, settle, h)?;
    }
    if b > settle {
        let mut m = base.clone();
        for (s, &(target, _)) in stim.iter().zip(state) {
            m += s * target;
        }
        *y = solver.advance(&Frozen(&m), settle, y, b, h)?;
    }
    Ok(())
}
