//! Classical rate model over level populations.
//!
//! The generator `R` follows the column convention: the rate from level `i`
//! to level `j` sits at `R[(j, i)]` and each diagonal entry is minus its
//! column's off-diagonal sum, so `dp/dt = R·p`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::level_model::{LevelScheme, Manifold};
use crate::ode::{Constant, Trbdf2};
use crate::spectrum::Spectrum;
use crate::units::{BOLTZMANN, PLANCK};

/// Populations below this are treated as rounding noise and clamped.
pub const CLAMP_TOLERANCE: f64 = 1e-9;
/// Populations below this are a hard numerical failure.
pub const NEGATIVE_LIMIT: f64 = -1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    /// Kelvin.
    pub temperature: f64,
    /// Single-phonon coupling χ between the ground orbital branches (1/s).
    pub orbital_coupling: f64,
    /// Same for the excited branches (1/s).
    pub excited_orbital_coupling: f64,
    /// Intra-branch spin relaxation time (s). `f64::INFINITY` disables spin flips.
    pub spin_t1: f64,
    /// When set, orbital hops also flip the spin with probability ε, adding
    /// ε·(orbital equilibration rate) to 1/T1.
    pub spin_t1_is_angle_derived: bool,
}

impl Environment {
    /// Environment whose ground orbital T1 equals `orbital_t1` at `calibration_temperature`.
    pub fn calibrated(
        temperature: f64,
        ground_splitting: f64,
        orbital_t1: f64,
        calibration_temperature: f64,
        spin_t1: f64,
    ) -> Self {
        let n = bose_occupation(ground_splitting, calibration_temperature);
        Self {
            temperature,
            orbital_coupling: 1.0 / (orbital_t1 * (2.0 * n + 1.0)),
            excited_orbital_coupling: 1e7,
            spin_t1,
            spin_t1_is_angle_derived: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!("temperature must be > 0 K, got {}", self.temperature)));
        }
        for (name, v) in [
            ("orbital_coupling", self.orbital_coupling),
            ("excited_orbital_coupling", self.excited_orbital_coupling),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.spin_t1 > 0.0) {
            return Err(Error::config(format!("spin_t1 must be > 0, got {}", self.spin_t1)));
        }
        Ok(())
    }

    /// Spin relaxation time including the angle-derived contribution.
    pub fn effective_spin_t1(&self, scheme: &LevelScheme) -> f64 {
        let mut rate = 1.0 / self.spin_t1;
        if self.spin_t1_is_angle_derived {
            let (down, up) = phonon_rates(scheme.params.ground_orbital_splitting, self);
            rate += scheme.mixing_fraction * (down + up);
        }
        1.0 / rate
    }
}

/// Bose–Einstein occupation of a mode at `frequency` (Hz).
pub fn bose_occupation(frequency: f64, temperature: f64) -> f64 {
    let x = PLANCK * frequency / (BOLTZMANN * temperature);
    1.0 / x.exp_m1()
}

/// Single-phonon rates for a pair of levels separated by `splitting`:
/// `(downward, upward) = (χ(n̄+1), χ·n̄)`.
pub fn phonon_pair(splitting: f64, temperature: f64, coupling: f64) -> (f64, f64) {
    let n = bose_occupation(splitting, temperature);
    if n.is_finite() {
        (coupling * (n + 1.0), coupling * n)
    } else {
        (coupling, 0.0)
    }
}

/// Ground-state phonon rates at `splitting` using the environment's χ.
pub fn phonon_rates(splitting: f64, env: &Environment) -> (f64, f64) {
    phonon_pair(splitting, env.temperature, env.orbital_coupling)
}

/// Ground orbital T1 = 1/(downward + upward).
pub fn orbital_relaxation_time(splitting: f64, env: &Environment) -> f64 {
    let (d, u) = phonon_rates(splitting, env);
    1.0 / (d + u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Laser {
    /// Transition label (`D2`), electronic label on a hyperfine scheme, or
    /// a bare line letter (`D`) meaning the line centre.
    pub reference: String,
    /// Hz from the reference frequency.
    pub detuning: f64,
    /// Peak excitation rate in units of the addressed line's spontaneous rate.
    pub saturation: f64,
    /// Full width of the Lorentzian intensity scaling (Hz).
    pub linewidth_fwhm: f64,
}

/// Transform-limited optical linewidth used as the default Lorentzian width.
pub const DEFAULT_LINEWIDTH: f64 = 94e6;

impl Laser {
    pub fn on(reference: &str, saturation: f64) -> Self {
        Self {
            reference: reference.to_string(),
            detuning: 0.0,
            saturation,
            linewidth_fwhm: DEFAULT_LINEWIDTH,
        }
    }

    pub fn detuned(mut self, detuning: f64) -> Self {
        self.detuning = detuning;
        self
    }

    pub fn with_linewidth(mut self, fwhm: f64) -> Self {
        self.linewidth_fwhm = fwhm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.saturation >= 0.0 && self.saturation.is_finite()) {
            return Err(Error::config(format!("laser saturation must be >= 0, got {}", self.saturation)));
        }
        if !(self.linewidth_fwhm > 0.0 && self.linewidth_fwhm.is_finite()) {
            return Err(Error::config(format!("laser linewidth must be > 0, got {}", self.linewidth_fwhm)));
        }
        if !self.detuning.is_finite() {
            return Err(Error::config("laser detuning must be finite"));
        }
        Ok(())
    }

    /// Laser frequency as an offset from the ZPL carrier (Hz).
    pub fn offset(&self, scheme: &LevelScheme) -> Result<f64> {
        Ok(reference_offset(scheme, &self.reference)? + self.detuning)
    }

    /// Lorentzian intensity scaling, unit at zero detuning.
    pub fn lorentzian(&self, detuning: f64) -> f64 {
        let x = 2.0 * detuning / self.linewidth_fwhm;
        1.0 / (1.0 + x * x)
    }
}

/// Offset of a transition label, electronic label, or line letter.
pub fn reference_offset(scheme: &LevelScheme, reference: &str) -> Result<f64> {
    let mut chars = reference.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        let offsets: Vec<f64> = scheme
            .transitions
            .iter()
            .filter(|t| t.line.letter() == c)
            .map(|t| t.offset)
            .collect();
        if !offsets.is_empty() {
            return Ok(offsets.iter().sum::<f64>() / offsets.len() as f64);
        }
    }
    scheme.resolve_offset(reference)
}

/// One incoherent process `from → to` at `rate` (1/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

/// Spontaneous emission, phonon-mediated orbital mixing and spin flips.
pub fn incoherent_channels(scheme: &LevelScheme, env: &Environment) -> Vec<Channel> {
    let mut out = Vec::new();
    for t in &scheme.transitions {
        if t.decay_rate > 0.0 {
            out.push(Channel { from: t.upper, to: t.lower, rate: t.decay_rate });
        }
    }
    let pairs = [
        (Manifold::GroundLower, Manifold::GroundUpper, env.orbital_coupling),
        (Manifold::ExcitedLower, Manifold::ExcitedUpper, env.excited_orbital_coupling),
    ];
    for (lower_m, upper_m, coupling) in pairs {
        for lo in scheme.levels.iter().filter(|l| l.manifold == lower_m) {
            let hi = scheme
                .find_level(upper_m, lo.spin, lo.nuclear)
                .expect("every branch holds the same sublevels");
            let (down, up) = phonon_pair(hi.energy - lo.energy, env.temperature, coupling);
            if down > 0.0 {
                out.push(Channel { from: hi.index, to: lo.index, rate: down });
            }
            if up > 0.0 {
                out.push(Channel { from: lo.index, to: hi.index, rate: up });
            }
        }
    }
    let flip = 0.5 / env.effective_spin_t1(scheme);
    if flip > 0.0 {
        for a in &scheme.levels {
            for b in &scheme.levels {
                if a.manifold == b.manifold && a.nuclear == b.nuclear && a.spin != b.spin {
                    out.push(Channel { from: a.index, to: b.index, rate: flip });
                }
            }
        }
    }
    out
}

/// Stimulated absorption and emission driven by one laser on every transition.
pub fn stimulated_channels(scheme: &LevelScheme, laser: &Laser) -> Result<Vec<Channel>> {
    laser.validate()?;
    let nu = laser.offset(scheme)?;
    let mut out = Vec::new();
    for t in &scheme.transitions {
        let w = laser.saturation * t.decay_rate * laser.lorentzian(nu - t.offset);
        if w > 0.0 {
            out.push(Channel { from: t.lower, to: t.upper, rate: w });
            out.push(Channel { from: t.upper, to: t.lower, rate: w });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    pub generator: DMatrix<f64>,
}

impl RateMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { generator: DMatrix::zeros(n, n) }
    }

    pub fn from_channels(n: usize, channels: &[Channel]) -> Self {
        let mut m = Self::zeros(n);
        m.add_channels(channels);
        m
    }

    pub fn add_channels(&mut self, channels: &[Channel]) {
        for c in channels {
            if c.from != c.to {
                self.generator[(c.to, c.from)] += c.rate;
                self.generator[(c.from, c.from)] -= c.rate;
            }
        }
    }

    /// Two-level generator with rates `down` (1→0) and `up` (0→1).
    pub fn two_level(down: f64, up: f64) -> Self {
        Self::from_channels(2, &[Channel { from: 1, to: 0, rate: down }, Channel { from: 0, to: 1, rate: up }])
    }

    pub fn len(&self) -> usize {
        self.generator.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rate from `from` to `to`.
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.generator[(to, from)]
    }

    /// Largest |column sum| relative to the column's largest entry.
    pub fn max_relative_column_sum(&self) -> f64 {
        let g = &self.generator;
        (0..g.ncols())
            .map(|j| {
                let col = g.column(j);
                let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if scale == 0.0 {
                    0.0
                } else {
                    col.sum().abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        if !g.is_square() {
            return Err(Error::Solver("rate matrix is not square".into()));
        }
        for j in 0..g.ncols() {
            for i in 0..g.nrows() {
                let v = g[(i, j)];
                if !v.is_finite() {
                    return Err(Error::Solver(format!("non-finite rate at ({i}, {j})")));
                }
                if i != j && v < 0.0 {
                    return Err(Error::Solver(format!("negative rate {v} from {j} to {i}")));
                }
            }
        }
        let worst = self.max_relative_column_sum();
        if worst > 1e-12 {
            return Err(Error::Solver(format!("column sums deviate from zero by {worst:e}")));
        }
        Ok(())
    }

    /// Smallest nonzero off-diagonal rate.
    pub fn slowest_rate(&self) -> Option<f64> {
        let g = &self.generator;
        let mut min = f64::INFINITY;
        for j in 0..g.ncols() {
            for i in 0..g.nrows() {
                if i != j && g[(i, j)] > 0.0 {
                    min = min.min(g[(i, j)]);
                }
            }
        }
        min.is_finite().then_some(min)
    }
}

pub fn build_rate_matrix(scheme: &LevelScheme, lasers: &[Laser], env: &Environment) -> Result<RateMatrix> {
    env.validate()?;
    let mut m = RateMatrix::from_channels(scheme.len(), &incoherent_channels(scheme, env));
    for laser in lasers {
        m.add_channels(&stimulated_channels(scheme, laser)?);
    }
    m.validate()?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationVector(pub DVector<f64>);

impl PopulationVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let p = Self(DVector::from_vec(values));
        p.validate()?;
        Ok(p)
    }

    pub fn uniform(n: usize) -> Self {
        Self(DVector::from_element(n, 1.0 / n as f64))
    }

    /// All population in level `k`.
    pub fn pure(n: usize, k: usize) -> Self {
        let mut v = DVector::zeros(n);
        v[k] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.0.sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::Solver(format!("populations sum to {sum}")));
        }
        if let Some(v) = self.0.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(Error::Solver(format!("population {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// Clamp rounding-level negatives and renormalise; fail on real negatives.
    fn cleaned(mut v: DVector<f64>, context: &str) -> Result<Self> {
        if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !x.is_finite() || **x < NEGATIVE_LIMIT) {
            return Err(Error::Solver(format!("{context}: population of level {i} is {x:e}")));
        }
        v.iter_mut().for_each(|x| *x = x.max(0.0));
        let s = v.sum();
        if s <= 0.0 {
            return Err(Error::Solver(format!("{context}: vanishing total population")));
        }
        v /= s;
        Ok(Self(v))
    }
}

/// Stationary distribution of the generator.
///
/// When several closed classes exist the result is the equilibrium reached
/// from the uniform initial state.
pub fn steady_state_populations(r: &RateMatrix) -> Result<PopulationVector> {
    r.validate()?;
    let n = r.len();
    if n == 0 {
        return Err(Error::Solver("empty rate matrix".into()));
    }
    let classes = closed_classes(r);
    if classes.len() == 1 {
        let all: Vec<usize> = (0..n).collect();
        let pi = stationary_on(r, &all)?;
        return PopulationVector::cleaned(pi, "steady state");
    }

    let in_closed: Vec<bool> = (0..n).map(|i| classes.iter().any(|c| c.contains(&i))).collect();
    let transient: Vec<usize> = (0..n).filter(|&i| !in_closed[i]).collect();
    let mut p = DVector::zeros(n);
    for class in &classes {
        let local = stationary_on(r, class)?;
        let pi: Vec<f64> = class.iter().map(|&i| local[i]).collect();
        let absorbed = absorption_probabilities(r, &transient, class)?;
        let mass = (class.len() as f64 + absorbed.iter().sum::<f64>()) / n as f64;
        for (k, &i) in class.iter().enumerate() {
            p[i] += mass * pi[k];
        }
    }
    PopulationVector::cleaned(p, "steady state")
}

/// Stationary distribution of the irreducible class `states`; returns a
/// full-length vector.
///
/// Uses GTH state reduction, which only adds and multiplies non-negative
/// rates, so it stays accurate when the rates span many decades.
fn stationary_on(r: &RateMatrix, states: &[usize]) -> Result<DVector<f64>> {
    let n = r.len();
    let k = states.len();
    let g = &r.generator;
    // q[(i, j)] = rate i -> j within the class.
    let mut q = DMatrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { g[(states[j], states[i])] });
    for m in (1..k).rev() {
        let s: f64 = (0..m).map(|j| q[(m, j)]).sum();
        if !(s > 0.0) || !s.is_finite() {
            let names: Vec<String> = states.iter().map(|i| i.to_string()).collect();
            return Err(Error::Solver(format!(
                "no stationary distribution on levels [{}]: level {} cannot be left",
                names.join(", "),
                states[m]
            )));
        }
        for i in 0..m {
            q[(i, m)] /= s;
        }
        for i in 0..m {
            let qim = q[(i, m)];
            if qim == 0.0 {
                continue;
            }
            for j in 0..m {
                if i != j {
                    q[(i, j)] += qim * q[(m, j)];
                }
            }
        }
    }
    let mut pi = vec![0.0; k];
    pi[0] = 1.0;
    for m in 1..k {
        pi[m] = (0..m).map(|i| pi[i] * q[(i, m)]).sum();
    }
    let total: f64 = pi.iter().sum();
    let mut v = DVector::zeros(n);
    for (ii, &i) in states.iter().enumerate() {
        v[i] = pi[ii] / total;
    }
    Ok(v)
}

/// Probability that each transient state is eventually absorbed in `class`.
fn absorption_probabilities(r: &RateMatrix, transient: &[usize], class: &[usize]) -> Result<Vec<f64>> {
    let m = transient.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let g = &r.generator;
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut b = DVector::zeros(m);
    for (ti, &t) in transient.iter().enumerate() {
        let q = -g[(t, t)];
        if q <= 0.0 {
            return Err(Error::Solver(format!("level {t} is isolated but not closed")));
        }
        for (tj, &u) in transient.iter().enumerate() {
            if u != t {
                a[(ti, tj)] -= g[(u, t)] / q;
            }
        }
        b[ti] = class.iter().map(|&c| g[(c, t)] / q).sum();
    }
    let sol = a.lu().solve(&b).ok_or_else(|| {
        Error::Solver(format!("absorption system singular for transient levels {transient:?}"))
    })?;
    Ok(sol.iter().copied().collect())
}

/// Closed communicating classes of the transition graph, each sorted.
pub fn closed_classes(r: &RateMatrix) -> Vec<Vec<usize>> {
    let n = r.len();
    let g = &r.generator;
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        reach[i][i] = true;
        for j in 0..n {
            if i != j && g[(j, i)] > 0.0 {
                reach[i][j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for i in 0..n {
        if seen[i] {
            continue;
        }
        let class: Vec<usize> = (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
        class.iter().for_each(|&j| seen[j] = true);
        let closed = class.iter().all(|&a| (0..n).all(|b| !reach[a][b] || class.contains(&b)));
        if closed {
            out.push(class);
        }
    }
    out
}

/// Time evolution `dp/dt = R·p` reported at `times`.
pub fn evolve_populations(r: &RateMatrix, p0: &PopulationVector, times: &[f64]) -> Result<Vec<PopulationVector>> {
    evolve_populations_with(r, p0, times, &Trbdf2::default().conserving((0..r.len()).collect()))
}

pub fn evolve_populations_with(
    r: &RateMatrix,
    p0: &PopulationVector,
    times: &[f64],
    solver: &Trbdf2,
) -> Result<Vec<PopulationVector>> {
    r.validate()?;
    if times.iter().any(|&t| t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("times must be ascending and non-negative"));
    }
    let states = solver.solve(&Constant(&r.generator), 0.0, &p0.0, times)?;
    states
        .into_iter()
        .zip(times)
        .map(|(s, &t)| {
            let drift = (s.sum() - 1.0).abs();
            if drift > 1e-9 {
                return Err(Error::Integration { time: t, message: format!("population sum drifted by {drift:e}") });
            }
            PopulationVector::cleaned(s, &format!("t = {t:e} s")).map_err(|e| Error::Integration {
                time: t,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Detected photon rate: Σ excited population × total decay × efficiency.
pub fn fluorescence_rate(p: &PopulationVector, scheme: &LevelScheme, detector: &DetectorModel) -> f64 {
    scheme
        .excited_levels()
        .map(|l| p.0[l.index] * scheme.total_decay_rate(l.index))
        .sum::<f64>()
        * detector.efficiency
}

/// Excitation spectrum: the probe is stepped over `scan` (Hz relative to its
/// reference) with an optional fixed pump; each point is a steady state.
pub fn excitation_spectrum(
    scheme: &LevelScheme,
    probe: &Laser,
    scan: &[f64],
    pump: Option<&Laser>,
    env: &Environment,
    detector: &DetectorModel,
) -> Result<Spectrum> {
    if scan.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("scan grid must be sorted"));
    }
    if !(probe.saturation > 0.0) {
        return Err(Error::config("probe saturation must be > 0"));
    }
    env.validate()?;
    let mut base = RateMatrix::from_channels(scheme.len(), &incoherent_channels(scheme, env));
    if let Some(p) = pump {
        base.add_channels(&stimulated_channels(scheme, p)?);
    }
    let counts: Result<Vec<f64>> = scan
        .par_iter()
        .map(|&d| {
            let mut m = base.clone();
            m.add_channels(&stimulated_channels(scheme, &probe.clone().detuned(d))?);
            let p = steady_state_populations(&m)
                .map_err(|e| Error::Solver(format!("at probe detuning {d:e} Hz: {e}")))?;
            Ok(fluorescence_rate(&p, scheme, detector))
        })
        .collect();
    Ok(Spectrum::new(scan.to_vec(), counts?))
}

/// Dark (laser-free) equilibrium of the scheme.
pub fn thermal_populations(scheme: &LevelScheme, env: &Environment) -> Result<PopulationVector> {
    steady_state_populations(&build_rate_matrix(scheme, &[], env)?)
}
