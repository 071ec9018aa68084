//! Effective SiV⁻ level scheme: orbital branches, Zeeman sublevels, optional
//! ²⁹Si hyperfine doubling, and the optical transition table.
//!
//! Ground levels carry energies relative to the lower ground branch at zero
//! field; excited levels carry energies relative to the lower excited branch.
//! The two references are separated by `zpl_frequency`, so an optical
//! transition's *offset* (its frequency minus the ZPL carrier) is computed
//! entirely at GHz scale.

use std::fmt;

use crate::error::{Error, Result};
use crate::units::BOHR_HZ_PER_GAUSS;

#[derive(Debug, Clone, PartialEq)]
pub struct SivParameters {
    /// Splitting between the ground spin-orbit branches (Hz).
    pub ground_orbital_splitting: f64,
    /// Splitting between the excited spin-orbit branches (Hz). No default:
    /// this is sourced from outside the measurements modelled here.
    pub excited_orbital_splitting: f64,
    /// Frequency of line C at zero field (Hz). Only used for labelling.
    pub zpl_frequency: f64,
    pub g_ground_upper: f64,
    pub g_ground_lower: f64,
    pub g_excited_upper: f64,
    pub g_excited_lower: f64,
    pub radiative_lifetime: f64,
    pub branching_zpl: f64,
    /// Fraction of each excited branch's decay that ends in the lower ground branch.
    pub lower_ground_fraction: f64,
    /// Off-axis field at which the spin mixing fraction reaches ε = sin²(π/8).
    pub mixing_scale: f64,
}

impl SivParameters {
    pub fn new(excited_orbital_splitting: f64) -> Self {
        Self {
            ground_orbital_splitting: 47e9,
            excited_orbital_splitting,
            zpl_frequency: 406.7e12,
            g_ground_upper: 1.6,
            g_ground_lower: 2.0,
            g_excited_upper: 1.8,
            g_excited_lower: 2.0,
            radiative_lifetime: 1.72e-9,
            branching_zpl: 0.70,
            lower_ground_fraction: 0.5,
            mixing_scale: 1250.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ground_orbital_splitting", self.ground_orbital_splitting),
            ("excited_orbital_splitting", self.excited_orbital_splitting),
            ("zpl_frequency", self.zpl_frequency),
            ("g_ground_upper", self.g_ground_upper),
            ("g_ground_lower", self.g_ground_lower),
            ("g_excited_upper", self.g_excited_upper),
            ("g_excited_lower", self.g_excited_lower),
            ("radiative_lifetime", self.radiative_lifetime),
            ("mixing_scale", self.mixing_scale),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.branching_zpl > 0.0 && self.branching_zpl <= 1.0) {
            return Err(Error::config(format!(
                "branching_zpl must lie in (0, 1], got {}",
                self.branching_zpl
            )));
        }
        if !(0.0..=1.0).contains(&self.lower_ground_fraction) {
            return Err(Error::config(format!(
                "lower_ground_fraction must lie in [0, 1], got {}",
                self.lower_ground_fraction
            )));
        }
        Ok(())
    }

    /// Fraction of emission detected through a sideband filter.
    pub fn sideband_fraction(&self) -> f64 {
        1.0 - self.branching_zpl
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagneticConfig {
    /// Gauss.
    pub magnitude: f64,
    /// Angle between field and the defect axis (rad).
    pub polar_angle: f64,
}

impl MagneticConfig {
    pub fn aligned(magnitude: f64) -> Self {
        Self { magnitude, polar_angle: 0.0 }
    }

    pub fn zero() -> Self {
        Self::aligned(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.magnitude.is_finite() || self.magnitude < 0.0 {
            return Err(Error::config(format!("field magnitude must be >= 0, got {}", self.magnitude)));
        }
        if !self.polar_angle.is_finite()
            || self.polar_angle < 0.0
            || self.polar_angle > std::f64::consts::FRAC_PI_2
        {
            return Err(Error::config(format!(
                "polar angle must lie in [0, pi/2], got {}",
                self.polar_angle
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HyperfineConfig {
    pub enabled: bool,
    /// Ground-state hyperfine constant A (Hz).
    pub coupling: f64,
}

impl HyperfineConfig {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn with_coupling(coupling: f64) -> Self {
        Self { enabled: true, coupling }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Manifold {
    GroundLower,
    GroundUpper,
    ExcitedLower,
    ExcitedUpper,
}

impl Manifold {
    pub const ALL: [Manifold; 4] = [
        Manifold::GroundLower,
        Manifold::GroundUpper,
        Manifold::ExcitedLower,
        Manifold::ExcitedUpper,
    ];

    pub fn is_excited(self) -> bool {
        matches!(self, Manifold::ExcitedLower | Manifold::ExcitedUpper)
    }

    fn short(self) -> &'static str {
        match self {
            Manifold::GroundLower => "gl",
            Manifold::GroundUpper => "gu",
            Manifold::ExcitedLower => "el",
            Manifold::ExcitedUpper => "eu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Spin {
    Down,
    Up,
}

impl Spin {
    pub const BOTH: [Spin; 2] = [Spin::Down, Spin::Up];

    /// +1 for up, −1 for down.
    pub fn sign(self) -> f64 {
        match self {
            Spin::Up => 1.0,
            Spin::Down => -1.0,
        }
    }

    fn arrow(self) -> char {
        match self {
            Spin::Up => '+',
            Spin::Down => '-',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub index: usize,
    pub label: String,
    pub manifold: Manifold,
    pub spin: Spin,
    pub nuclear: Option<Spin>,
    /// Hz, relative to the manifold family's reference (see module docs).
    pub energy: f64,
}

/// The four optical lines, in order of decreasing frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Line {
    A,
    B,
    C,
    D,
}

impl Line {
    pub const ALL: [Line; 4] = [Line::A, Line::B, Line::C, Line::D];

    pub fn branches(self) -> (Manifold, Manifold) {
        match self {
            Line::A => (Manifold::GroundLower, Manifold::ExcitedUpper),
            Line::B => (Manifold::GroundUpper, Manifold::ExcitedUpper),
            Line::C => (Manifold::GroundLower, Manifold::ExcitedLower),
            Line::D => (Manifold::GroundUpper, Manifold::ExcitedLower),
        }
    }

    pub fn letter(self) -> char {
        match self {
            Line::A => 'A',
            Line::B => 'B',
            Line::C => 'C',
            Line::D => 'D',
        }
    }

    pub fn from_letter(c: char) -> Option<Line> {
        match c {
            'A' => Some(Line::A),
            'B' => Some(Line::B),
            'C' => Some(Line::C),
            'D' => Some(Line::D),
            _ => None,
        }
    }
}

impl fmt::Display for Line {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub lower: usize,
    pub upper: usize,
    /// Absolute optical frequency (Hz).
    pub frequency: f64,
    /// Frequency minus the ZPL carrier (Hz).
    pub offset: f64,
    pub dipole_weight: f64,
    /// Spontaneous decay rate on this transition (1/s).
    pub decay_rate: f64,
    pub line: Line,
    /// 1–4, by decreasing frequency within the line.
    pub sublabel: u8,
    pub nuclear: Option<Spin>,
    pub spin_conserving: bool,
    pub label: String,
}

impl Transition {
    /// Label without the nuclear suffix, e.g. `D2`.
    pub fn electronic_label(&self) -> String {
        format!("{}{}", self.line.letter(), self.sublabel)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelScheme {
    pub levels: Vec<Level>,
    pub transitions: Vec<Transition>,
    pub mixing_fraction: f64,
    pub params: SivParameters,
    pub field: MagneticConfig,
    pub hyperfine: HyperfineConfig,
}

impl LevelScheme {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn excited_levels(&self) -> impl Iterator<Item = &Level> {
        self.levels.iter().filter(|l| l.manifold.is_excited())
    }

    pub fn ground_levels(&self) -> impl Iterator<Item = &Level> {
        self.levels.iter().filter(|l| !l.manifold.is_excited())
    }

    pub fn find_level(&self, manifold: Manifold, spin: Spin, nuclear: Option<Spin>) -> Option<&Level> {
        self.levels
            .iter()
            .find(|l| l.manifold == manifold && l.spin == spin && l.nuclear == nuclear)
    }

    /// Total spontaneous decay rate out of `level` (1/s).
    pub fn total_decay_rate(&self, level: usize) -> f64 {
        self.transitions
            .iter()
            .filter(|t| t.upper == level)
            .map(|t| t.decay_rate)
            .sum()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.transitions.iter().map(|t| t.label.as_str()).collect()
    }

    /// Offset frequency (Hz from the ZPL carrier) for a label.
    ///
    /// Accepts full labels and, on a hyperfine scheme, electronic labels such
    /// as `D2`, which resolve to the mean of the nuclear components.
    pub fn resolve_offset(&self, label: &str) -> Result<f64> {
        if let Ok(t) = transition_lookup(self, label) {
            return Ok(t.offset);
        }
        let matching: Vec<f64> = self
            .transitions
            .iter()
            .filter(|t| t.electronic_label() == label)
            .map(|t| t.offset)
            .collect();
        if matching.is_empty() {
            return Err(self.unknown(label));
        }
        Ok(matching.iter().sum::<f64>() / matching.len() as f64)
    }

    fn unknown(&self, label: &str) -> Error {
        Error::UnknownTransition {
            label: label.to_string(),
            valid: self.labels().join(", "),
        }
    }

    /// Canonical text form used for content hashing.
    pub fn fingerprint(&self) -> String {
        format!("{:?}", self)
    }
}

/// Spin mixing fraction from the off-axis field component.
///
/// ε = sin²(½·atan(B·sinθ / scale)): zero for an aligned field, increasing
/// monotonically with θ towards ½.
pub fn spin_mixing_fraction(field: &MagneticConfig, mixing_scale: f64) -> f64 {
    let off_axis = field.magnitude * field.polar_angle.sin();
    let half = 0.5 * (off_axis / mixing_scale).atan();
    half.sin().powi(2)
}

pub fn transition_lookup<'a>(scheme: &'a LevelScheme, label: &str) -> Result<&'a Transition> {
    scheme
        .transitions
        .iter()
        .find(|t| t.label == label)
        .ok_or_else(|| scheme.unknown(label))
}

fn branch_g(params: &SivParameters, m: Manifold) -> f64 {
    match m {
        Manifold::GroundLower => params.g_ground_lower,
        Manifold::GroundUpper => params.g_ground_upper,
        Manifold::ExcitedLower => params.g_excited_lower,
        Manifold::ExcitedUpper => params.g_excited_upper,
    }
}

fn branch_offset(params: &SivParameters, m: Manifold) -> f64 {
    match m {
        Manifold::GroundLower | Manifold::ExcitedLower => 0.0,
        Manifold::GroundUpper => params.ground_orbital_splitting,
        Manifold::ExcitedUpper => params.excited_orbital_splitting,
    }
}

/// Spin combinations (excited, ground) in the order assigned to X1..X4 when
/// frequencies tie.
const NOMINAL_ORDER: [(Spin, Spin); 4] = [
    (Spin::Up, Spin::Down),
    (Spin::Up, Spin::Up),
    (Spin::Down, Spin::Down),
    (Spin::Down, Spin::Up),
];

pub fn build_level_scheme(
    params: &SivParameters,
    field: &MagneticConfig,
    hf: &HyperfineConfig,
) -> Result<LevelScheme> {
    params.validate()?;
    field.validate()?;
    if hf.enabled && (!hf.coupling.is_finite() || hf.coupling < 0.0) {
        return Err(Error::config(format!(
            "hyperfine coupling must be finite and >= 0, got {}",
            hf.coupling
        )));
    }

    let zeeman = BOHR_HZ_PER_GAUSS * field.magnitude;
    let nuclear_states: Vec<Option<Spin>> = if hf.enabled {
        vec![Some(Spin::Down), Some(Spin::Up)]
    } else {
        vec![None]
    };

    let mut levels = Vec::new();
    for m in Manifold::ALL {
        for s in Spin::BOTH {
            for &n in &nuclear_states {
                let mut energy = branch_offset(params, m) + branch_g(params, m) * zeeman * 0.5 * s.sign();
                if let Some(n) = n {
                    if !m.is_excited() {
                        energy += 0.5 * hf.coupling * s.sign() * n.sign();
                    }
                }
                let mut label = format!("{}{}", m.short(), s.arrow());
                if let Some(n) = n {
                    label.push(n.arrow());
                }
                levels.push(Level {
                    index: levels.len(),
                    label,
                    manifold: m,
                    spin: s,
                    nuclear: n,
                    energy,
                });
            }
        }
    }

    let eps = spin_mixing_fraction(field, params.mixing_scale);
    let find = |m: Manifold, s: Spin, n: Option<Spin>| {
        levels
            .iter()
            .find(|l| l.manifold == m && l.spin == s && l.nuclear == n)
            .expect("level enumerated above")
    };

    let mut transitions = Vec::new();
    for line in Line::ALL {
        let (g_branch, e_branch) = line.branches();
        let branch_fraction = match g_branch {
            Manifold::GroundLower => params.lower_ground_fraction,
            _ => 1.0 - params.lower_ground_fraction,
        };
        // Sublabels follow the electronic (hyperfine-free) frequency.
        let electronic_shift = |(se, sg): (Spin, Spin)| {
            0.5 * zeeman * (branch_g(params, e_branch) * se.sign() - branch_g(params, g_branch) * sg.sign())
        };
        let mut order: Vec<(Spin, Spin)> = NOMINAL_ORDER.to_vec();
        // Stable sort; partial_cmp treats -0.0 == 0.0 so ties keep nominal order.
        order.sort_by(|a, b| {
            electronic_shift(*b)
                .partial_cmp(&electronic_shift(*a))
                .expect("finite shifts")
        });

        for (k, &(se, sg)) in order.iter().enumerate() {
            for &n in &nuclear_states {
                let lower = find(g_branch, sg, n);
                let upper = find(e_branch, se, n);
                let conserving = se == sg;
                let weight = if conserving { 1.0 - eps } else { eps };
                let offset = upper.energy - lower.energy;
                let mut label = format!("{}{}", line.letter(), k + 1);
                if let Some(n) = n {
                    label.push(n.arrow());
                }
                transitions.push(Transition {
                    lower: lower.index,
                    upper: upper.index,
                    frequency: params.zpl_frequency + offset,
                    offset,
                    dipole_weight: weight,
                    decay_rate: weight * branch_fraction / params.radiative_lifetime,
                    line,
                    sublabel: (k + 1) as u8,
                    nuclear: n,
                    spin_conserving: conserving,
                    label,
                });
            }
        }
    }

    Ok(LevelScheme {
        levels,
        transitions,
        mixing_fraction: eps,
        params: params.clone(),
        field: *field,
        hyperfine: *hf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SivParameters {
        SivParameters::new(255e9)
    }

    fn scheme(b: f64) -> LevelScheme {
        build_level_scheme(&params(), &MagneticConfig::aligned(b), &HyperfineConfig::disabled()).unwrap()
    }

    fn line_freqs(s: &LevelScheme, line: Line) -> Vec<f64> {
        (1..=4)
            .map(|k| transition_lookup(s, &format!("{}{k}", line.letter())).unwrap().offset)
            .collect()
    }

    #[test]
    fn counts_and_indices() {
        let s = scheme(4500.0);
        assert_eq!(s.len(), 8);
        assert_eq!(s.transitions.len(), 16);
        for (i, l) in s.levels.iter().enumerate() {
            assert_eq!(l.index, i);
        }
        let hf = build_level_scheme(&params(), &MagneticConfig::aligned(4500.0), &HyperfineConfig::with_coupling(34.5e6))
            .unwrap();
        assert_eq!(hf.len(), 16);
        assert_eq!(hf.transitions.len(), 32);
    }

    #[test]
    fn zero_field_lines_degenerate() {
        let s = scheme(0.0);
        for line in [Line::C, Line::D] {
            let f = line_freqs(&s, line);
            assert!(f.iter().all(|&x| x == f[0]), "{line}: {f:?}");
        }
        // Line ordering A > B > C > D.
        let centers: Vec<f64> = Line::ALL.iter().map(|&l| line_freqs(&s, l)[0]).collect();
        assert!(centers.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn d_line_ordering_in_field() {
        let s = scheme(4500.0);
        let f = line_freqs(&s, Line::D);
        assert!(f[0] > f[1] && f[1] > f[2] && f[2] > f[3], "{f:?}");
        assert!(!transition_lookup(&s, "D1").unwrap().spin_conserving);
        assert!(transition_lookup(&s, "D2").unwrap().spin_conserving);
        assert!(transition_lookup(&s, "D3").unwrap().spin_conserving);
        assert!(!transition_lookup(&s, "D4").unwrap().spin_conserving);
    }

    #[test]
    fn c2_c3_coincide_with_equal_g() {
        let s = scheme(4500.0);
        let f = line_freqs(&s, Line::C);
        assert_eq!(f[1], f[2]);
        assert!(f[0] > f[1] && f[2] > f[3]);
        let c3 = transition_lookup(&s, "C3").unwrap();
        assert!(c3.offset <= f[1] && c3.offset > f[3]);
    }

    #[test]
    fn d2_is_spin_up_cycling() {
        let s = scheme(4500.0);
        let d2 = transition_lookup(&s, "D2").unwrap();
        let (lo, up) = (&s.levels[d2.lower], &s.levels[d2.upper]);
        assert_eq!(lo.manifold, Manifold::GroundUpper);
        assert_eq!(up.manifold, Manifold::ExcitedLower);
        assert_eq!(lo.spin, Spin::Up);
        assert_eq!(up.spin, Spin::Up);
    }

    #[test]
    fn lookup_unknown_label_lists_valid() {
        let s = scheme(4500.0);
        match transition_lookup(&s, "Q7") {
            Err(Error::UnknownTransition { label, valid }) => {
                assert_eq!(label, "Q7");
                assert!(valid.contains("D2"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mixing_fraction_limits_and_monotone() {
        let f = |deg: f64| {
            spin_mixing_fraction(
                &MagneticConfig { magnitude: 4500.0, polar_angle: deg.to_radians() },
                1250.0,
            )
        };
        assert_eq!(f(0.0), 0.0);
        assert!(f(70.0) > f(20.0) && f(20.0) > f(0.0));
        let mut prev = -1.0;
        for k in 0..=90 {
            let e = f(k as f64);
            assert!(e > prev || k == 0);
            assert!(e < 0.5);
            prev = e;
        }
    }

    #[test]
    fn weights_normalised_per_branch() {
        let field = MagneticConfig { magnitude: 4500.0, polar_angle: 20f64.to_radians() };
        let s = build_level_scheme(&params(), &field, &HyperfineConfig::disabled()).unwrap();
        assert!(s.mixing_fraction > 0.0);
        for e in s.excited_levels() {
            for g in [Manifold::GroundLower, Manifold::GroundUpper] {
                let sum: f64 = s
                    .transitions
                    .iter()
                    .filter(|t| t.upper == e.index && s.levels[t.lower].manifold == g)
                    .map(|t| t.dipole_weight)
                    .sum();
                assert!((sum - 1.0).abs() < 1e-15);
            }
            assert!((s.total_decay_rate(e.index) - 1.0 / 1.72e-9).abs() < 1e-3);
        }
    }

    #[test]
    fn hyperfine_splits_each_line_in_two() {
        let a = 34.5e6;
        let hf = build_level_scheme(&params(), &MagneticConfig::aligned(4500.0), &HyperfineConfig::with_coupling(a))
            .unwrap();
        for t in &hf.transitions {
            assert_eq!(hf.levels[t.lower].nuclear, hf.levels[t.upper].nuclear);
        }
        let plus = transition_lookup(&hf, "D2+").unwrap().offset;
        let minus = transition_lookup(&hf, "D2-").unwrap().offset;
        assert!((plus - minus).abs() - a < 1e-3);
        let mean = hf.resolve_offset("D2").unwrap();
        let plain = scheme(4500.0);
        assert!((mean - transition_lookup(&plain, "D2").unwrap().offset).abs() < 1e-3);
    }

    #[test]
    fn rejects_invalid_inputs() {
        let mut p = params();
        p.radiative_lifetime = f64::NAN;
        assert!(build_level_scheme(&p, &MagneticConfig::zero(), &HyperfineConfig::disabled()).is_err());
        let f = MagneticConfig { magnitude: 1.0, polar_angle: 2.0 };
        assert!(build_level_scheme(&params(), &f, &HyperfineConfig::disabled()).is_err());
    }

    #[test]
    fn rebuild_is_identical() {
        assert_eq!(scheme(4500.0), scheme(4500.0));
    }
}
