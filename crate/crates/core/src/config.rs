//! Run configuration in a line-oriented `section.key = value` format.
//!
//! Every key has a default, so a config file only lists what it changes.
//! Values take SI suffixes (`47 GHz`, `2.4 ms`, `20 deg`). Layering order is
//! defaults, then a preset or file, then `--set` overrides. The canonical
//! text form lists every key and parses back to the same configuration,
//! which is what makes a run manifest replayable.

use std::fmt::Write as _;

use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::level_model::{HyperfineConfig, MagneticConfig, SivParameters};
use crate::pulse::{parse_sequence, PulseSequence, ReadMode};
use crate::rate_engine::Environment;
use crate::units::{parse_quantity, quantity, Dimension};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    Quantity(Dimension),
    Integer,
    Flag,
    Text,
    Choice(&'static [&'static str]),
    /// Comma-separated quantities; may be empty.
    List(Dimension),
    /// `auto` or a comma-separated list.
    AutoList(Dimension),
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub help: &'static str,
}

pub const SCENARIOS: &[&str] = &["spectrum", "cpt", "hyperfine", "orbital-cpt", "spin-t1", "orbital-t1", "sweep"];
const SWEEPABLE: &[&str] = &["spectrum", "cpt", "hyperfine", "orbital-cpt", "spin-t1", "orbital-t1"];

use Dimension::*;
use Kind::*;

const fn k(key: &'static str, kind: Kind, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, kind, default, help }
}

const DEFAULT_SEQUENCE: &str = "duration 3.1ms; channel init laser D1 sat 0.25 linewidth 94MHz; \
channel read laser D2 sat 10 linewidth 94MHz; pulse init 0 500us; gap 500us; pulse read 600us 3.1ms";

pub const KEYS: &[KeySpec] = &[
    k("run.scenario", Choice(SCENARIOS), "spectrum", "which experiment to simulate"),
    k("run.seed", Integer, "0", "seed for shot noise"),
    k("scheme.excited_splitting", Quantity(Frequency), "255 GHz", "excited spin-orbit splitting"),
    k("scheme.ground_splitting", Quantity(Frequency), "47 GHz", "ground spin-orbit splitting"),
    k("scheme.g_ground_lower", Quantity(Dimensionless), "2.0", "effective g-factor, lower ground branch"),
    k("scheme.g_ground_upper", Quantity(Dimensionless), "1.6", "effective g-factor, upper ground branch"),
    k("scheme.g_excited_lower", Quantity(Dimensionless), "2.0", "effective g-factor, lower excited branch"),
    k("scheme.g_excited_upper", Quantity(Dimensionless), "1.8", "effective g-factor, upper excited branch"),
    k("scheme.radiative_lifetime", Quantity(Time), "1.72 ns", "excited-state lifetime"),
    k("scheme.branching_zpl", Quantity(Dimensionless), "0.7", "fraction of emission into the zero-phonon line"),
    k("scheme.lower_ground_fraction", Quantity(Dimensionless), "0.5", "decay fraction into the lower ground branch"),
    k("scheme.mixing_scale", Quantity(Field), "1250 G", "off-axis field giving a mixing of sin^2(pi/8)"),
    k("field.magnitude", Quantity(Field), "4.5 kG", "magnetic field strength"),
    k("field.angle", Quantity(Angle), "0 deg", "angle between field and defect axis"),
    k("hyperfine.coupling", Quantity(Frequency), "0 Hz", "ground hyperfine constant A; 0 disables the nuclear spin"),
    k("env.temperature", Quantity(Temperature), "4.5 K", "bath temperature"),
    k("env.orbital_t1", Quantity(Time), "38 ns", "ground orbital T1 at the calibration temperature"),
    k("env.calibration_temperature", Quantity(Temperature), "4.5 K", "temperature at which env.orbital_t1 holds"),
    k("env.excited_orbital_coupling", Quantity(Frequency), "10 MHz", "phonon coupling between excited branches (1/s)"),
    k("env.spin_t1", Quantity(Time), "2.4 ms", "spin relaxation time"),
    k("env.spin_t1_from_angle", Flag, "false", "add orbital-hop spin flips weighted by the mixing fraction"),
    k("detector.efficiency", Quantity(Dimensionless), "1", "overall detection efficiency"),
    k("detector.bin_width", Quantity(Time), "6.4 us", "time-bin width"),
    k("detector.background", Quantity(Frequency), "0 Hz", "dark count rate"),
    k("detector.shot_noise", Flag, "false", "Poisson-sample the counts"),
    k("spectrum.probe", Text, "D", "probe reference: line letter or transition label"),
    k("spectrum.saturation", Quantity(Dimensionless), "1", "probe saturation parameter"),
    k("spectrum.linewidth", Quantity(Frequency), "94 MHz", "optical linewidth (FWHM)"),
    k("spectrum.start", Quantity(Frequency), "-15 GHz", "scan start, relative to the probe reference"),
    k("spectrum.stop", Quantity(Frequency), "15 GHz", "scan stop"),
    k("spectrum.points", Integer, "400", "scan points"),
    k("spectrum.pump", Text, "none", "pump transition label, or none"),
    k("spectrum.pump_saturation", Quantity(Dimensionless), "0.05", "pump saturation parameter"),
    k("spectrum.pump_detuning", Quantity(Frequency), "0 Hz", "pump detuning from its transition"),
    k("spectrum.threshold", Quantity(Dimensionless), "0.05", "relative prominence for a resolved feature"),
    k("cpt.pump", Text, "D2", "pump leg"),
    k("cpt.probe", Text, "D1", "probe leg"),
    k("cpt.pump_rabi", Quantity(Frequency), "10 MHz", "pump Rabi frequency over 2 pi at power 1"),
    k("cpt.probe_rabi", Quantity(Frequency), "10 MHz", "probe Rabi frequency over 2 pi at power 1"),
    k("cpt.t2_star", Quantity(Time), "35 ns", "T2*; the ground coherence decays at 1/(2 T2*)"),
    k("cpt.dephasing", Choice(&["t2-star", "orbital"]), "t2-star", "take the coherence decay from cpt.t2_star or from orbital relaxation"),
    k("cpt.one_photon_detuning", Quantity(Frequency), "0 Hz", "common detuning of both lasers"),
    k("cpt.span", Quantity(Frequency), "40 MHz", "two-photon detuning scan width"),
    k("cpt.points", Integer, "401", "scan points"),
    k("cpt.powers", List(Dimensionless), "1", "relative power(s); both Rabi frequencies scale with the square root"),
    k("cpt.full_scheme", Flag, "false", "solve on every level instead of the three Lambda levels"),
    k("ocpt.pump", Text, "C2", "pump leg on line C"),
    k("ocpt.probe", Text, "D2", "probe leg on line D"),
    k("ocpt.pump_rabi", Quantity(Frequency), "20 MHz", "pump Rabi frequency over 2 pi"),
    k("ocpt.probe_rabi", Quantity(Frequency), "10 MHz", "probe Rabi frequency over 2 pi"),
    k("ocpt.pump_detuning", Quantity(Frequency), "0 Hz", "pump detuning from its transition"),
    k("ocpt.dephasing", Quantity(Frequency), "0 Hz", "extra pure dephasing of the orbital coherence (1/s)"),
    k("ocpt.span", Quantity(Frequency), "200 MHz", "probe scan width around two-photon resonance"),
    k("ocpt.points", Integer, "401", "scan points"),
    k("spin.sequence", Text, DEFAULT_SEQUENCE, "pulse sequence with a gap marker; statements separated by ;"),
    k("spin.delays", AutoList(Time), "auto", "delays, or auto for 16 points over five expected T1"),
    k("spin.points", Integer, "16", "number of automatic delays"),
    k("spin.form", Choice(&["decay", "recovery"]), "decay", "h against delay: a + b exp(-t/T1) or a - b exp(-t/T1)"),
    k("spin.read_mode", Choice(&["bright", "dark"]), "bright", "readout transition bright or dark for the initialised state"),
    k("orbital.laser", Text, "D", "pulsed laser reference"),
    k("orbital.saturation", Quantity(Dimensionless), "10", "saturation parameter"),
    k("orbital.width", Quantity(Time), "80 ns", "pulse width"),
    k("orbital.rise_fall", Quantity(Time), "1 ns", "modulator rise/fall time"),
    k("orbital.extinction", Quantity(Decibel), "60 dB", "modulator extinction"),
    k("orbital.gaps", AutoList(Time), "auto", "gaps, or auto for 16 points over five expected T1"),
    k("orbital.points", Integer, "16", "number of automatic gaps"),
    k("sweep.scenario", Choice(SWEEPABLE), "orbital-t1", "scenario run at each sweep value"),
    k("sweep.axis", Text, "env.temperature", "dotted key to vary"),
    k("sweep.values", Text, "", "comma-separated values for the axis"),
];

pub fn key_spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|s| s.key == key)
}

fn split_list(text: &str) -> Vec<&str> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// Check `value` against the key's kind. Errors are plain messages; callers
/// add the location.
fn check(spec: &KeySpec, value: &str) -> std::result::Result<(), String> {
    match spec.kind {
        Quantity(d) => parse_quantity(value, d).map(|_| ()),
        Integer => value.parse::<u64>().map(|_| ()).map_err(|_| format!("expected a non-negative integer, got {value:?}")),
        Flag => parse_flag(value).map(|_| ()),
        Text => Ok(()),
        Choice(options) => {
            if options.contains(&value) {
                Ok(())
            } else {
                Err(format!("expected one of {}, got {value:?}", options.join(", ")))
            }
        }
        List(d) => split_list(value).into_iter().try_for_each(|v| parse_quantity(v, d).map(|_| ())),
        AutoList(d) => {
            if value == "auto" {
                Ok(())
            } else {
                split_list(value).into_iter().try_for_each(|v| parse_quantity(v, d).map(|_| ()))
            }
        }
    }
}

fn parse_flag(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {value:?}")),
    }
}

/// Raw key/value text, one entry per known key in table order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigText {
    values: Vec<String>,
}

impl Default for ConfigText {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|s| s.default.to_string()).collect() }
    }
}

impl ConfigText {
    pub fn defaults() -> Self {
        Self::default()
    }

    /// Named preset. The short name before the first `-` is accepted
    /// as an alias, e.g. `fig3c` for `fig3c-narrow`.
    pub fn preset(name: &str) -> Result<Self> {
        let full = PRESETS.iter().find(|p| p.split('-').next() == Some(name)).copied().unwrap_or(name);
        let entries = preset_entries(full).ok_or_else(|| {
            Error::config(format!("unknown preset {name:?}; available: {}", PRESETS.join(", ")))
        })?;
        let mut c = Self::defaults();
        for (key, value) in entries {
            c.set(key, value).expect("presets use valid keys");
        }
        Ok(c)
    }

    pub fn get(&self, key: &str) -> &str {
        let i = KEYS.iter().position(|s| s.key == key).unwrap_or_else(|| panic!("unknown key {key}"));
        &self.values[i]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let i = KEYS
            .iter()
            .position(|s| s.key == key)
            .ok_or_else(|| Error::config(format!("unknown key {key:?}")))?;
        let value = value.trim();
        check(&KEYS[i], value).map_err(|m| Error::config(format!("{key}: {m}")))?;
        self.values[i] = value.to_string();
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, text: &str) -> Result<()> {
        let (key, value) = text
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {text:?} is not of the form key=value")))?;
        self.set(key.trim(), value)
    }

    /// Apply every assignment in a config file.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim_start();
            let indent = raw.len() - line.len();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: line_no,
                    column: indent + 1,
                    message: format!("expected `key = value`, got {:?}", line.trim_end()),
                });
            };
            let key = key.trim();
            let spec = key_spec(key).ok_or_else(|| Error::Parse {
                line: line_no,
                column: indent + 1,
                message: format!("unknown key {key:?}"),
            })?;
            let value = value.trim();
            let value_col = raw.find('=').map_or(1, |p| p + 2 + raw[p + 1..].len() - raw[p + 1..].trim_start().len());
            check(spec, value).map_err(|m| Error::Parse {
                line: line_no,
                column: value_col,
                message: format!("key {key}: {m}"),
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Canonical form: every key, in table order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut section = "";
        for (spec, v) in KEYS.iter().zip(&self.values) {
            let sec = spec.key.split('.').next().unwrap_or("");
            if sec != section {
                if !section.is_empty() {
                    s.push('\n');
                }
                section = sec;
            }
            let _ = writeln!(s, "{} = {}", spec.key, v);
        }
        s
    }

    fn quantity(&self, key: &str) -> Result<f64> {
        let spec = key_spec(key).expect("known key");
        let Quantity(d) = spec.kind else { panic!("{key} is not a quantity") };
        quantity(self.get(key), d, key)
    }

    fn integer(&self, key: &str) -> Result<u64> {
        self.get(key).parse().map_err(|_| Error::config(format!("{key}: not an integer")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        parse_flag(self.get(key)).map_err(|m| Error::config(format!("{key}: {m}")))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let spec = key_spec(key).expect("known key");
        let (List(d) | AutoList(d)) = spec.kind else { panic!("{key} is not a list") };
        let v = self.get(key);
        if v == "auto" {
            return Ok(None);
        }
        split_list(v)
            .into_iter()
            .map(|x| parse_quantity(x, d).map_err(|m| Error::config(format!("{key}: {m}"))))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Replace `@path` references (currently `spin.sequence`) by the file
    /// contents, so the canonical text is self-contained. Relative paths are
    /// taken from `base`.
    pub fn inline_files(&mut self, base: &std::path::Path) -> Result<()> {
        let key = "spin.sequence";
        let Some(path) = self.get(key).strip_prefix('@') else { return Ok(()) };
        let path = base.join(path.trim());
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::config(format!("{key}: cannot read {}: {e}", path.display())))?;
        let stmts: Vec<&str> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .collect();
        self.set(key, &stmts.join("; "))
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::from_text(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSpec {
    pub probe: String,
    pub saturation: f64,
    pub linewidth: f64,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub pump: Option<String>,
    pub pump_saturation: f64,
    pub pump_detuning: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CptSpec {
    pub pump: String,
    pub probe: String,
    /// Rabi frequencies at power 1 (rad/s).
    pub pump_rabi: f64,
    pub probe_rabi: f64,
    pub t2_star: f64,
    pub orbital_dephasing: bool,
    pub one_photon_detuning: f64,
    pub span: f64,
    pub points: usize,
    pub powers: Vec<f64>,
    pub full_scheme: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitalCptSpec {
    pub pump: String,
    pub probe: String,
    pub pump_rabi: f64,
    pub probe_rabi: f64,
    pub pump_detuning: f64,
    pub dephasing: f64,
    pub span: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinT1Spec {
    pub sequence: PulseSequence,
    pub delays: Option<Vec<f64>>,
    pub points: usize,
    pub recovery: bool,
    pub read_mode: ReadMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitalT1Spec {
    pub laser: String,
    pub saturation: f64,
    pub width: f64,
    pub rise_fall: f64,
    pub extinction_db: f64,
    pub gaps: Option<Vec<f64>>,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub scenario: String,
    pub axis: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Spectrum(SpectrumSpec),
    Cpt(CptSpec),
    Hyperfine(CptSpec),
    OrbitalCpt(OrbitalCptSpec),
    SpinT1(SpinT1Spec),
    OrbitalT1(OrbitalT1Spec),
    Sweep(SweepSpec),
}

/// Fully typed configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: SivParameters,
    pub field: MagneticConfig,
    pub hyperfine: HyperfineConfig,
    pub environment: Environment,
    pub detector: DetectorModel,
    pub seed: u64,
    pub scenario: Scenario,
    /// The text this was resolved from.
    pub source: ConfigText,
}

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn count(c: &ConfigText, key: &str, min: usize) -> Result<usize> {
    let n = c.integer(key)? as usize;
    if n < min {
        return Err(Error::config(format!("{key} must be at least {min}, got {n}")));
    }
    Ok(n)
}

impl RunConfig {
    pub fn from_text(c: &ConfigText) -> Result<Self> {
        let mut params = SivParameters::new(c.quantity("scheme.excited_splitting")?);
        params.ground_orbital_splitting = c.quantity("scheme.ground_splitting")?;
        params.g_ground_lower = c.quantity("scheme.g_ground_lower")?;
        params.g_ground_upper = c.quantity("scheme.g_ground_upper")?;
        params.g_excited_lower = c.quantity("scheme.g_excited_lower")?;
        params.g_excited_upper = c.quantity("scheme.g_excited_upper")?;
        params.radiative_lifetime = c.quantity("scheme.radiative_lifetime")?;
        params.branching_zpl = c.quantity("scheme.branching_zpl")?;
        params.lower_ground_fraction = c.quantity("scheme.lower_ground_fraction")?;
        params.mixing_scale = c.quantity("scheme.mixing_scale")?;
        params.validate()?;

        let field = MagneticConfig { magnitude: c.quantity("field.magnitude")?, polar_angle: c.quantity("field.angle")? };
        field.validate()?;
        let a = c.quantity("hyperfine.coupling")?;
        let hyperfine = if a > 0.0 { HyperfineConfig::with_coupling(a) } else { HyperfineConfig::disabled() };

        let orbital_t1 = c.quantity("env.orbital_t1")?;
        if !(orbital_t1 > 0.0) {
            return Err(Error::config("env.orbital_t1 must be > 0"));
        }
        let mut environment = Environment::calibrated(
            c.quantity("env.temperature")?,
            params.ground_orbital_splitting,
            orbital_t1,
            c.quantity("env.calibration_temperature")?,
            c.quantity("env.spin_t1")?,
        );
        environment.excited_orbital_coupling = c.quantity("env.excited_orbital_coupling")?;
        environment.spin_t1_is_angle_derived = c.flag("env.spin_t1_from_angle")?;
        environment.validate()?;

        let seed = c.integer("run.seed")?;
        let detector = DetectorModel {
            efficiency: c.quantity("detector.efficiency")?,
            bin_width: c.quantity("detector.bin_width")?,
            background: c.quantity("detector.background")?,
            shot_noise: c.flag("detector.shot_noise")?,
            rng_seed: seed,
        };
        detector.validate()?;

        let scenario = match c.get("run.scenario") {
            "spectrum" => Scenario::Spectrum(spectrum_spec(c)?),
            "cpt" => Scenario::Cpt(cpt_spec(c)?),
            "hyperfine" => {
                if !hyperfine.enabled {
                    return Err(Error::config("the hyperfine scenario needs hyperfine.coupling > 0"));
                }
                Scenario::Hyperfine(cpt_spec(c)?)
            }
            "orbital-cpt" => Scenario::OrbitalCpt(OrbitalCptSpec {
                pump: c.get("ocpt.pump").to_string(),
                probe: c.get("ocpt.probe").to_string(),
                pump_rabi: TWO_PI * c.quantity("ocpt.pump_rabi")?,
                probe_rabi: TWO_PI * c.quantity("ocpt.probe_rabi")?,
                pump_detuning: c.quantity("ocpt.pump_detuning")?,
                dephasing: c.quantity("ocpt.dephasing")?,
                span: positive(c, "ocpt.span")?,
                points: count(c, "ocpt.points", 5)?,
            }),
            "spin-t1" => {
                if c.get("spin.sequence").starts_with('@') {
                    return Err(Error::config("spin.sequence: file reference was not inlined"));
                }
                let sequence = parse_sequence(c.get("spin.sequence"))
                    .map_err(|e| Error::config(format!("spin.sequence: {e}")))?;
                Scenario::SpinT1(SpinT1Spec {
                    sequence,
                    delays: c.list("spin.delays")?,
                    points: count(c, "spin.points", 4)?,
                    recovery: c.get("spin.form") == "recovery",
                    read_mode: if c.get("spin.read_mode") == "dark" { ReadMode::DarkRead } else { ReadMode::BrightRead },
                })
            }
            "orbital-t1" => Scenario::OrbitalT1(OrbitalT1Spec {
                laser: c.get("orbital.laser").to_string(),
                saturation: positive(c, "orbital.saturation")?,
                width: positive(c, "orbital.width")?,
                rise_fall: c.quantity("orbital.rise_fall")?,
                extinction_db: positive(c, "orbital.extinction")?,
                gaps: c.list("orbital.gaps")?,
                points: count(c, "orbital.points", 4)?,
            }),
            "sweep" => {
                let axis = c.get("sweep.axis").to_string();
                let spec = key_spec(&axis).ok_or_else(|| Error::config(format!("sweep.axis: unknown key {axis:?}")))?;
                if !matches!(spec.kind, Quantity(_) | Integer | List(_)) {
                    return Err(Error::config(format!("sweep.axis: {axis} is not numeric")));
                }
                let values: Vec<String> = split_list(c.get("sweep.values")).into_iter().map(String::from).collect();
                for v in &values {
                    check(spec, v).map_err(|m| Error::config(format!("sweep.values: {m}")))?;
                }
                Scenario::Sweep(SweepSpec { scenario: c.get("sweep.scenario").to_string(), axis, values })
            }
            other => return Err(Error::config(format!("unknown scenario {other:?}"))),
        };

        Ok(Self { params, field, hyperfine, environment, detector, seed, scenario, source: c.clone() })
    }

    pub fn scenario_name(&self) -> &str {
        self.source.get("run.scenario")
    }
}

fn positive(c: &ConfigText, key: &str) -> Result<f64> {
    let v = c.quantity(key)?;
    if !(v > 0.0) {
        return Err(Error::config(format!("{key} must be > 0, got {v}")));
    }
    Ok(v)
}

fn spectrum_spec(c: &ConfigText) -> Result<SpectrumSpec> {
    let pump = match c.get("spectrum.pump") {
        "none" | "" => None,
        p => Some(p.to_string()),
    };
    let (start, stop) = (c.quantity("spectrum.start")?, c.quantity("spectrum.stop")?);
    if !(stop > start) {
        return Err(Error::config("spectrum.stop must exceed spectrum.start"));
    }
    Ok(SpectrumSpec {
        probe: c.get("spectrum.probe").to_string(),
        saturation: positive(c, "spectrum.saturation")?,
        linewidth: positive(c, "spectrum.linewidth")?,
        start,
        stop,
        points: count(c, "spectrum.points", 3)?,
        pump,
        pump_saturation: positive(c, "spectrum.pump_saturation")?,
        pump_detuning: c.quantity("spectrum.pump_detuning")?,
        threshold: positive(c, "spectrum.threshold")?,
    })
}

fn cpt_spec(c: &ConfigText) -> Result<CptSpec> {
    let powers = c.list("cpt.powers")?.unwrap_or_default();
    if powers.is_empty() || powers.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::config("cpt.powers must list at least one power > 0"));
    }
    Ok(CptSpec {
        pump: c.get("cpt.pump").to_string(),
        probe: c.get("cpt.probe").to_string(),
        pump_rabi: TWO_PI * c.quantity("cpt.pump_rabi")?,
        probe_rabi: TWO_PI * c.quantity("cpt.probe_rabi")?,
        t2_star: positive(c, "cpt.t2_star")?,
        orbital_dephasing: c.get("cpt.dephasing") == "orbital",
        one_photon_detuning: c.quantity("cpt.one_photon_detuning")?,
        span: positive(c, "cpt.span")?,
        points: count(c, "cpt.points", 5)?,
        powers,
        full_scheme: c.flag("cpt.full_scheme")?,
    })
}

pub const PRESETS: &[&str] = &[
    "fig1d",
    "figS1-lineC",
    "fig2b-spinT1",
    "fig2c-orbitalT1",
    "fig3a-cpt",
    "fig3b-power",
    "fig3c-narrow",
    "fig3d-hyperfine",
    "figS4-misaligned",
    "figS5-orbital-cpt",
];

const MISALIGNED_SEQUENCE: &str =
    "duration 10us; rise_fall 60ns; channel d laser D1 sat 0.3 linewidth 94MHz; pulse d 0 5us; gap 5us; pulse d 5us 10us";

/// Overrides on top of the defaults for each named preset.
pub fn preset_entries(name: &str) -> Option<&'static [(&'static str, &'static str)]> {
    let e: &'static [(&str, &str)] = match name {
        "fig1d" => &[("run.scenario", "spectrum"), ("field.angle", "0.3 deg"), ("spectrum.probe", "D"), ("spectrum.pump", "D2")],
        "figS1-lineC" => &[
            ("run.scenario", "spectrum"),
            ("field.angle", "0.3 deg"),
            ("scheme.g_excited_lower", "1.98"),
            ("spectrum.probe", "C"),
            ("spectrum.pump", "C2"),
        ],
        "fig2b-spinT1" => &[
            ("run.scenario", "spin-t1"),
            ("field.angle", "0.3 deg"),
            ("detector.bin_width", "10 us"),
            ("detector.efficiency", "2e-4"),
            ("spin.form", "decay"),
            ("spin.read_mode", "bright"),
        ],
        "fig2c-orbitalT1" => &[("run.scenario", "orbital-t1"), ("field.magnitude", "0 G"), ("detector.bin_width", "200 ps")],
        "fig3a-cpt" => &[("run.scenario", "cpt"), ("field.angle", "70 deg"), ("cpt.powers", "1"), ("cpt.span", "60 MHz")],
        "fig3b-power" => &[
            ("run.scenario", "cpt"),
            ("field.angle", "70 deg"),
            ("cpt.powers", "0.05, 0.1, 0.25, 0.5, 1, 2"),
        ],
        "fig3c-narrow" => &[("run.scenario", "cpt"), ("field.angle", "70 deg"), ("cpt.powers", "0.02")],
        "fig3d-hyperfine" => &[
            ("run.scenario", "hyperfine"),
            ("field.magnitude", "7 kG"),
            ("field.angle", "70 deg"),
            ("hyperfine.coupling", "34.5 MHz"),
            ("cpt.powers", "0.05"),
            ("cpt.span", "200 MHz"),
            ("cpt.points", "801"),
        ],
        "figS4-misaligned" => &[
            ("run.scenario", "spin-t1"),
            ("field.angle", "20 deg"),
            ("env.spin_t1", "3.4 us"),
            ("detector.bin_width", "20 ns"),
            ("spin.sequence", MISALIGNED_SEQUENCE),
            ("spin.form", "recovery"),
            ("spin.read_mode", "dark"),
        ],
        "figS5-orbital-cpt" => &[("run.scenario", "orbital-cpt"), ("field.magnitude", "0 G")],
        _ => return None,
    };
    Some(e)
}
