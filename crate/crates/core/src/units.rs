//! Physical constants and parsing of SI-suffixed quantities.

use crate::error::{Error, Result};

pub const PLANCK: f64 = 6.626_070_15e-34;
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Bohr magneton over Planck's constant, in Hz per gauss.
pub const BOHR_HZ_PER_GAUSS: f64 = 1.399_624_493_61e6;

/// Dimension of a configured quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Frequency,
    Time,
    Field,
    Temperature,
    Angle,
    Decibel,
    Dimensionless,
}

impl Dimension {
    fn scale(self, suffix: &str) -> Option<f64> {
        use Dimension::*;
        let s = match (self, suffix) {
            (_, "") => 1.0,
            (Frequency, "Hz") => 1.0,
            (Frequency, "kHz") => 1e3,
            (Frequency, "MHz") => 1e6,
            (Frequency, "GHz") => 1e9,
            (Frequency, "THz") => 1e12,
            (Time, "s") => 1.0,
            (Time, "ms") => 1e-3,
            (Time, "us") | (Time, "µs") => 1e-6,
            (Time, "ns") => 1e-9,
            (Time, "ps") => 1e-12,
            (Field, "G") => 1.0,
            (Field, "kG") => 1e3,
            (Field, "mT") => 10.0,
            (Field, "T") => 1e4,
            (Temperature, "K") => 1.0,
            (Angle, "rad") => 1.0,
            (Angle, "deg") => std::f64::consts::PI / 180.0,
            (Decibel, "dB") => 1.0,
            _ => return None,
        };
        Some(s)
    }
}

/// Parse a number with an optional unit suffix, e.g. `47 GHz`, `2.4ms`, `60`.
///
/// The result is in base SI units (Hz, s, gauss, K, rad). A bare number is
/// taken to already be in base units.
pub fn parse_quantity(text: &str, dim: Dimension) -> std::result::Result<f64, String> {
    let t = text.trim();
    let split = t
        .char_indices()
        .find(|&(i, c)| {
            c.is_alphabetic() && !(matches!(c, 'e' | 'E') && is_exponent(t, i)) || c == 'µ'
        })
        .map(|(i, _)| i)
        .unwrap_or(t.len());
    let (num, suffix) = t.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("invalid number {:?}", num.trim()))?;
    let scale = dim
        .scale(suffix.trim())
        .ok_or_else(|| format!("unit {:?} is not valid for a quantity of dimension {:?}", suffix.trim(), dim))?;
    // Dividing by an exact power of ten keeps "10us" equal to the literal 10e-6.
    let inv = (1.0 / scale).round();
    let v = if scale < 1.0 && (inv * scale - 1.0).abs() < 1e-12 { value / inv } else { value * scale };
    if !v.is_finite() {
        return Err(format!("non-finite value {text:?}"));
    }
    Ok(v)
}

/// An `e`/`E` is part of the number only when followed by a digit or sign.
fn is_exponent(t: &str, i: usize) -> bool {
    let rest = &t[i + 1..];
    let before_ok = t[..i].chars().last().is_some_and(|c| c.is_ascii_digit() || c == '.');
    before_ok
        && rest
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_digit() || c == '-' || c == '+')
}

pub(crate) fn quantity(text: &str, dim: Dimension, what: &str) -> Result<f64> {
    parse_quantity(text, dim).map_err(|e| Error::config(format!("{what}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes() {
        assert_eq!(parse_quantity("47 GHz", Dimension::Frequency).unwrap(), 47e9);
        assert_eq!(parse_quantity("2.4ms", Dimension::Time).unwrap(), 2.4e-3);
        assert_eq!(parse_quantity("10us", Dimension::Time).unwrap(), 10e-6);
        assert_eq!(parse_quantity("1e-9", Dimension::Time).unwrap(), 1e-9);
        assert_eq!(parse_quantity("1.5e3 Hz", Dimension::Frequency).unwrap(), 1.5e3);
        assert_eq!(parse_quantity("4.5 kG", Dimension::Field).unwrap(), 4500.0);
        assert!((parse_quantity("90 deg", Dimension::Angle).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn rejects_wrong_unit() {
        assert!(parse_quantity("3 GHz", Dimension::Time).is_err());
        assert!(parse_quantity("abc", Dimension::Time).is_err());
        assert!(parse_quantity("inf", Dimension::Time).is_err());
    }
}
