//! Fluorescence spectra and their CSV form.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "detuning_hz,counts_hz";

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Scan coordinate (Hz).
    pub grid: Vec<f64>,
    /// Detected count rate at each grid point (Hz).
    pub counts: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Peak,
    Dip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub kind: FeatureKind,
    /// Grid coordinate of the extremum.
    pub position: f64,
    /// Signed deviation from the baseline at the extremum.
    pub deviation: f64,
}

impl Spectrum {
    pub fn new(grid: Vec<f64>, counts: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), counts.len());
        Self { grid, counts }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(32 * (self.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for (x, y) in self.grid.iter().zip(&self.counts) {
            let _ = writeln!(s, "{x:e},{y:e}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            _ => {
                return Err(Error::Parse { line: 1, column: 1, message: format!("expected header {CSV_HEADER:?}") })
            }
        }
        let mut grid = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let parse = |s: Option<&str>, col: usize| -> Result<f64> {
                s.and_then(|v| v.trim().parse().ok()).ok_or_else(|| Error::Parse {
                    line: i + 2,
                    column: col,
                    message: format!("invalid number in {line:?}"),
                })
            };
            grid.push(parse(it.next(), 1)?);
            counts.push(parse(it.next(), 2)?);
        }
        Ok(Self { grid, counts })
    }

    /// Median of the counts, used as the off-resonant reference level.
    pub fn baseline(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        let mut v = self.counts.clone();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    /// Resolved features: local extrema whose topographic prominence is at
    /// least `rel_threshold` times the full range of the counts.
    ///
    /// Prominence separates overlapping lines: two peaks count as resolved
    /// when the valley between them is deep enough, even if it never returns
    /// to the baseline.
    pub fn features(&self, rel_threshold: f64) -> Vec<Feature> {
        let y = &self.counts;
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let range = hi - lo;
        if !(range > 0.0) {
            return Vec::new();
        }
        let base = self.baseline();
        let thr = rel_threshold * range;
        let mut out = Vec::new();
        for (kind, sign) in [(FeatureKind::Peak, 1.0), (FeatureKind::Dip, -1.0)] {
            let z: Vec<f64> = y.iter().map(|v| sign * v).collect();
            for i in plateau_extrema(&z) {
                // A valley between two peaks is not a dip unless it also
                // falls below the baseline.
                if prominence(&z, i) >= thr && sign * (y[i] - base) >= thr {
                    out.push(Feature { kind, position: self.grid[i], deviation: y[i] - base });
                }
            }
        }
        out.sort_by(|a, b| a.position.total_cmp(&b.position));
        out
    }

    /// Interior local minima, each refined by a parabola through its neighbours.
    pub fn local_minima(&self) -> Vec<f64> {
        let y = &self.counts;
        let x = &self.grid;
        (1..y.len().saturating_sub(1))
            .filter(|&i| y[i] < y[i - 1] && y[i] <= y[i + 1])
            .map(|i| parabolic_vertex(x[i - 1], x[i], x[i + 1], y[i - 1], y[i], y[i + 1]))
            .collect()
    }
}

/// Indices of local maxima; a flat top is reported once, at its middle.
fn plateau_extrema(z: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let n = z.len();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && z[j + 1] == z[i] {
            j += 1;
        }
        let left_ok = i == 0 || z[i - 1] < z[i];
        let right_ok = j + 1 == n || z[j + 1] < z[i];
        if left_ok && right_ok && n > 1 {
            out.push((i + j) / 2);
        }
        i = j + 1;
    }
    out
}

/// Height of `z[i]` above the higher of the two lowest points reached before
/// climbing above it on either side.
fn prominence(z: &[f64], i: usize) -> f64 {
    let side = |it: &mut dyn Iterator<Item = &f64>| {
        let mut low = z[i];
        for &v in it {
            if v > z[i] {
                break;
            }
            low = low.min(v);
        }
        low
    };
    let left = side(&mut z[..i].iter().rev());
    let right = side(&mut z[i + 1..].iter());
    z[i] - left.max(right)
}

fn parabolic_vertex(x0: f64, x1: f64, x2: f64, y0: f64, y1: f64, y2: f64) -> f64 {
    let d0 = (y1 - y0) / (x1 - x0);
    let d1 = (y2 - y1) / (x2 - x1);
    let curv = (d1 - d0) / (x2 - x0);
    if curv.abs() < f64::MIN_POSITIVE {
        return x1;
    }
    // Vertex of the interpolating parabola.
    0.5 * (x0 + x1) - d0 / (2.0 * curv)
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let s = Spectrum::new(vec![-1.5e9, 0.0, 2.25e9], vec![0.0, 1.234567890123e7, 3.0]);
        let text = s.to_csv();
        assert!(text.starts_with("detuning_hz,counts_hz\n"));
        assert_eq!(Spectrum::from_csv(&text).unwrap(), s);
    }

    #[test]
    fn rejects_missing_header() {
        assert!(Spectrum::from_csv("1,2\n").is_err());
    }

    #[test]
    fn features_of_two_peaks_and_a_dip() {
        let grid = linspace(-10.0, 10.0, 201);
        let lor = |x: f64, c: f64| 1.0 / (1.0 + ((x - c) / 0.3).powi(2));
        let counts: Vec<f64> = grid.iter().map(|&x| 5.0 + 4.0 * lor(x, -5.0) + 2.0 * lor(x, 0.0) - 3.0 * lor(x, 5.0)).collect();
        let f = Spectrum::new(grid, counts).features(0.05);
        assert_eq!(f.len(), 3);
        assert_eq!(f[0].kind, FeatureKind::Peak);
        assert!((f[0].position + 5.0).abs() < 1e-9);
        assert_eq!(f[2].kind, FeatureKind::Dip);
    }

    #[test]
    fn overlapping_peaks_are_resolved() {
        let grid = linspace(-5.0, 5.0, 401);
        let lor = |x: f64, c: f64| 1.0 / (1.0 + ((x - c) / 0.8).powi(2));
        let counts: Vec<f64> = grid.iter().map(|&x| lor(x, -1.2) + lor(x, 1.2)).collect();
        let f = Spectrum::new(grid, counts).features(0.05);
        assert_eq!(f.len(), 2, "{f:?}");
        assert!(f.iter().all(|x| x.kind == FeatureKind::Peak));
    }

    #[test]
    fn flat_spectrum_has_no_features() {
        assert!(Spectrum::new(linspace(0.0, 1.0, 5), vec![2.0; 5]).features(0.05).is_empty());
    }

    #[test]
    fn parabolic_minimum() {
        let grid = linspace(-1.0, 1.0, 21);
        let counts = grid.iter().map(|x| (x - 0.033).powi(2)).collect();
        let m = Spectrum::new(grid, counts).local_minima();
        assert_eq!(m.len(), 1);
        assert!((m[0] - 0.033).abs() < 1e-12);
    }
}
