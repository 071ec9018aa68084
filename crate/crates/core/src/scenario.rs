//! Runs one configured experiment and packages its artifacts.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::analysis::{extrapolate_zero_power, fit_exponential, fit_lorentzian_dip, t2_star_from_fwhm, ExpForm, FitResult};
use crate::config::{ConfigText, CptSpec, OrbitalCptSpec, OrbitalT1Spec, RunConfig, Scenario, SpectrumSpec, SpinT1Spec, SweepSpec};
use crate::error::{Error, Result};
use crate::level_model::{build_level_scheme, transition_lookup, HyperfineConfig, LevelScheme};
use crate::lindblad::{cpt_spectrum, hyperfine_double_dip, orbital_lambda_spectrum, LambdaConfig, OrbitalLambdaConfig};
use crate::output::Plot;
use crate::pulse::{
    auto_delays, initialization_fidelity, orbital_t1_experiment, settle_time, spin_t1_experiment, DoublePulse, ReadMode,
};
use crate::rate_engine::{excitation_spectrum, orbital_relaxation_time, Laser};
use crate::spectrum::{linspace, FeatureKind, Spectrum};

/// Everything a run produces. `summary` holds the scalar results a sweep
/// collates, in the order given by [`summary_columns`].
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub data_csv: String,
    pub fit_report: Option<String>,
    /// Additional named files, e.g. `dip_fit.csv`.
    pub extra: Vec<(String, String)>,
    pub plot: Plot,
    pub summary: Vec<(&'static str, f64)>,
}

impl Outcome {
    /// Artifact files in a fixed order; the plot is included on request.
    pub fn files(&self, with_plot: bool) -> Vec<(String, String)> {
        let mut f = vec![("data.csv".to_string(), self.data_csv.clone())];
        if let Some(r) = &self.fit_report {
            f.push(("fit.txt".to_string(), r.clone()));
        }
        f.extend(self.extra.iter().cloned());
        if with_plot {
            f.push(("plot.svg".to_string(), self.plot.to_svg()));
        }
        f
    }

    pub fn summary_value(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }
}

/// Summary statistics reported by each scenario, in column order.
pub fn summary_columns(scenario: &str) -> &'static [&'static str] {
    match scenario {
        "spectrum" => &["peaks", "dips", "pumped_peaks", "pumped_dips"],
        "cpt" => &["fwhm_hz", "fwhm_err_hz", "t2_star_s", "depth", "center_hz"],
        "hyperfine" => &["separation_hz", "coupling_hz"],
        "orbital-cpt" => &["dip_position_hz", "fwhm_hz", "depth"],
        "spin-t1" => &["t1_s", "t1_err_s", "fidelity"],
        "orbital-t1" => &["t1_s", "t1_err_s", "rate_hz"],
        _ => &[],
    }
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    match &cfg.scenario {
        Scenario::Spectrum(s) => spectrum(cfg, s),
        Scenario::Cpt(s) => cpt(cfg, s),
        Scenario::Hyperfine(s) => hyperfine(cfg, s),
        Scenario::OrbitalCpt(s) => orbital_cpt(cfg, s),
        Scenario::SpinT1(s) => spin_t1(cfg, s),
        Scenario::OrbitalT1(s) => orbital_t1(cfg, s),
        Scenario::Sweep(s) => sweep(&cfg.source, s),
    }
}

fn scheme(cfg: &RunConfig) -> Result<LevelScheme> {
    build_level_scheme(&cfg.params, &cfg.field, &cfg.hyperfine)
}

fn points_of(s: &Spectrum) -> Vec<(f64, f64)> {
    s.grid.iter().copied().zip(s.counts.iter().copied()).collect()
}

fn feature_report(out: &mut String, prefix: &str, s: &Spectrum, threshold: f64) -> (f64, f64) {
    let f = s.features(threshold);
    let peaks = f.iter().filter(|x| x.kind == FeatureKind::Peak).count();
    let dips = f.len() - peaks;
    let _ = writeln!(out, "{prefix}.baseline_hz={:e}", s.baseline());
    let _ = writeln!(out, "{prefix}.peaks={peaks}");
    let _ = writeln!(out, "{prefix}.dips={dips}");
    for (i, x) in f.iter().enumerate() {
        let kind = if x.kind == FeatureKind::Peak { "peak" } else { "dip" };
        let _ = writeln!(out, "{prefix}.feature{i}={kind} position_hz={:e} deviation_hz={:e}", x.position, x.deviation);
    }
    (peaks as f64, dips as f64)
}

fn spectrum(cfg: &RunConfig, s: &SpectrumSpec) -> Result<Outcome> {
    let scheme = scheme(cfg)?;
    let probe = Laser::on(&s.probe, s.saturation).with_linewidth(s.linewidth);
    let grid = linspace(s.start, s.stop, s.points);
    let single = excitation_spectrum(&scheme, &probe, &grid, None, &cfg.environment, &cfg.detector)?;
    let mut report = String::new();
    let (peaks, dips) = feature_report(&mut report, "single", &single, s.threshold);
    let mut plot = Plot::new("Excitation spectrum", "probe detuning (Hz)", "counts (Hz)").with_series("single laser", points_of(&single));
    let mut summary = vec![("peaks", peaks), ("dips", dips)];
    let mut extra = Vec::new();
    if let Some(p) = &s.pump {
        let pump = Laser::on(p, s.pump_saturation).with_linewidth(s.linewidth).detuned(s.pump_detuning);
        let pumped = excitation_spectrum(&scheme, &probe, &grid, Some(&pump), &cfg.environment, &cfg.detector)?;
        let (pp, pd) = feature_report(&mut report, "pumped", &pumped, s.threshold);
        summary.extend([("pumped_peaks", pp), ("pumped_dips", pd)]);
        plot = plot.with_series(&format!("pump on {p}"), points_of(&pumped));
        extra.push(("pumped.csv".to_string(), pumped.to_csv()));
    } else {
        summary.extend([("pumped_peaks", f64::NAN), ("pumped_dips", f64::NAN)]);
    }
    Ok(Outcome { data_csv: single.to_csv(), fit_report: Some(report), extra, plot, summary })
}

fn lambda_base(cfg: &RunConfig, s: &CptSpec, scheme: LevelScheme, power: f64) -> LambdaConfig {
    let r = power.sqrt();
    LambdaConfig {
        one_photon_detuning: s.one_photon_detuning,
        ground_coherence_rate: 0.5 / s.t2_star,
        environment: s.orbital_dephasing.then(|| cfg.environment.clone()),
        compose_dephasing: s.orbital_dephasing,
        full_scheme: s.full_scheme,
        ..LambdaConfig::new(scheme, &s.pump, &s.probe, s.pump_rabi * r, s.probe_rabi * r)
    }
}

fn cpt_grid(span: f64, points: usize) -> Vec<f64> {
    linspace(-0.5 * span, 0.5 * span, points)
}

fn cpt(cfg: &RunConfig, s: &CptSpec) -> Result<Outcome> {
    let scheme = scheme(cfg)?;
    let grid = cpt_grid(s.span, s.points);
    let multi = s.powers.len() > 1;
    let mut data = String::from(if multi { "power,detuning_hz,counts_hz,normalized\n" } else { "detuning_hz,counts_hz,normalized\n" });
    let mut dip_csv = String::from("power,fwhm_hz,depth,center_hz\n");
    let mut report = String::new();
    let mut plot = Plot::new("CPT dip", "two-photon detuning (Hz)", "normalized fluorescence");
    let mut fits: Vec<(f64, FitResult)> = Vec::new();
    for (i, &p) in s.powers.iter().enumerate() {
        let lc = lambda_base(cfg, s, scheme.clone(), p);
        let raw = cpt_spectrum(&lc, &grid, &cfg.detector)?;
        let bg = cpt_spectrum(&LambdaConfig { suppress_ground_coherence: true, ..lc }, &grid, &cfg.detector)?;
        let norm = normalized(&raw, &bg)?;
        for ((x, y), n) in raw.grid.iter().zip(&raw.counts).zip(&norm.counts) {
            if multi {
                let _ = writeln!(data, "{p:e},{x:e},{y:e},{n:e}");
            } else {
                let _ = writeln!(data, "{x:e},{y:e},{n:e}");
            }
        }
        let fit = fit_lorentzian_dip(&norm)?;
        let _ = writeln!(dip_csv, "{p:e},{:e},{:e},{:e}", fit.param("fwhm"), fit.param("depth"), fit.param("center"));
        let _ = writeln!(report, "dip{i}.power={p:e}");
        report.push_str(&fit.to_report_prefixed(&format!("dip{i}")));
        plot = plot.with_series(&format!("power {p}"), points_of(&norm));
        fits.push((p, fit));
    }
    // Reference width: the zero-power extrapolation when the series allows
    // it, otherwise the lowest power measured.
    let lowest = fits.iter().min_by(|a, b| a.0.total_cmp(&b.0)).expect("at least one power");
    let (fwhm, fwhm_err) = if fits.len() >= 3 {
        let series: Vec<(f64, f64)> = fits.iter().map(|(p, f)| (*p, f.param("fwhm"))).collect();
        let e = extrapolate_zero_power(&series)?;
        let _ = writeln!(report, "fwhm_zero_power_hz={:e}", e.value);
        let _ = writeln!(report, "fwhm_zero_power_err_hz={:e}", e.std_error);
        (e.value, e.std_error)
    } else {
        (lowest.1.param("fwhm"), lowest.1.std_error("fwhm").unwrap_or(0.0))
    };
    let t2 = t2_star_from_fwhm(fwhm)?;
    let _ = writeln!(report, "fwhm_hz={fwhm:e}");
    let _ = writeln!(report, "t2_star_s={t2:e}");
    Ok(Outcome {
        data_csv: data,
        fit_report: Some(report),
        extra: vec![("dip_fit.csv".to_string(), dip_csv)],
        plot,
        summary: vec![
            ("fwhm_hz", fwhm),
            ("fwhm_err_hz", fwhm_err),
            ("t2_star_s", t2),
            ("depth", lowest.1.param("depth")),
            ("center_hz", lowest.1.param("center")),
        ],
    })
}

/// Two deepest local minima of a spectrum, in ascending position.
pub fn deepest_pair(s: &Spectrum) -> Option<(f64, f64)> {
    let value_at = |x: f64| {
        let i = s.grid.partition_point(|g| *g < x).min(s.len() - 1);
        s.counts[i]
    };
    let mut m = s.local_minima();
    m.sort_by(|a, b| value_at(*a).total_cmp(&value_at(*b)));
    let (a, b) = (*m.first()?, *m.get(1)?);
    Some((a.min(b), a.max(b)))
}

fn hyperfine(cfg: &RunConfig, s: &CptSpec) -> Result<Outcome> {
    let plain = build_level_scheme(&cfg.params, &cfg.field, &HyperfineConfig::disabled())?;
    let lc = lambda_base(cfg, s, plain, s.powers[0]);
    let grid = cpt_grid(s.span, s.points);
    let a = cfg.hyperfine.coupling;
    let raw = hyperfine_double_dip(&lc, a, &grid, &cfg.detector)?;
    // The dips sit on the flank of the optical line; divide it out first.
    let bg = hyperfine_double_dip(&LambdaConfig { suppress_ground_coherence: true, ..lc }, a, &grid, &cfg.detector)?;
    let norm = normalized(&raw, &bg)?;
    let (lo, hi) = deepest_pair(&norm)
        .ok_or_else(|| Error::Analysis("fewer than two CPT dips resolved; widen cpt.span or add cpt.points".into()))?;
    let sep = hi - lo;
    let mut report = String::new();
    let _ = writeln!(report, "coupling_hz={a:e}");
    let _ = writeln!(report, "dip_low_hz={lo:e}");
    let _ = writeln!(report, "dip_high_hz={hi:e}");
    let _ = writeln!(report, "separation_hz={sep:e}");
    let plot = Plot::new("Hyperfine CPT doublet", "two-photon detuning (Hz)", "normalized fluorescence")
        .with_series("fluorescence", points_of(&norm));
    Ok(Outcome {
        data_csv: three_column_csv(&raw, &norm),
        fit_report: Some(report),
        extra: Vec::new(),
        plot,
        summary: vec![("separation_hz", sep), ("coupling_hz", a)],
    })
}

fn normalized(raw: &Spectrum, bg: &Spectrum) -> Result<Spectrum> {
    let mut norm = raw.clone();
    for (c, b) in norm.counts.iter_mut().zip(&bg.counts) {
        if !(*b > 0.0) {
            return Err(Error::Analysis("background fluorescence vanishes; cannot normalise".into()));
        }
        *c /= b;
    }
    Ok(norm)
}

fn three_column_csv(raw: &Spectrum, norm: &Spectrum) -> String {
    let mut data = String::from("detuning_hz,counts_hz,normalized\n");
    for ((x, y), n) in raw.grid.iter().zip(&raw.counts).zip(&norm.counts) {
        let _ = writeln!(data, "{x:e},{y:e},{n:e}");
    }
    data
}

fn orbital_cpt(cfg: &RunConfig, s: &OrbitalCptSpec) -> Result<Outcome> {
    let scheme = scheme(cfg)?;
    let pump_offset = transition_lookup(&scheme, &s.pump)?.offset + s.pump_detuning;
    let expected = pump_offset - scheme.params.ground_orbital_splitting;
    let grid = linspace(expected - 0.5 * s.span, expected + 0.5 * s.span, s.points);
    let oc = OrbitalLambdaConfig {
        scheme,
        pump: s.pump.clone(),
        probe: s.probe.clone(),
        pump_rabi: s.pump_rabi,
        probe_rabi: s.probe_rabi,
        pump_detuning: s.pump_detuning,
        ground_coherence_rate: s.dephasing,
        environment: cfg.environment.clone(),
    };
    let spec = orbital_lambda_spectrum(&oc, &grid, &cfg.detector)?;
    let fit = fit_lorentzian_dip(&spec)?;
    let mut report = format!("expected_dip_hz={expected:e}\n");
    report.push_str(&fit.to_report());
    let plot = Plot::new("Orbital CPT", "probe offset (Hz)", "counts (Hz)").with_series("fluorescence", points_of(&spec));
    Ok(Outcome {
        data_csv: spec.to_csv(),
        fit_report: Some(report),
        extra: Vec::new(),
        plot,
        summary: vec![("dip_position_hz", fit.param("center")), ("fwhm_hz", fit.param("fwhm")), ("depth", fit.param("depth"))],
    })
}

fn spin_t1(cfg: &RunConfig, s: &SpinT1Spec) -> Result<Outcome> {
    let scheme = scheme(cfg)?;
    let env = &cfg.environment;
    let delays = match &s.delays {
        Some(d) => d.clone(),
        None => auto_delays(env.effective_spin_t1(&scheme), s.points, settle_time(&scheme, s.sequence.rise_fall_time)),
    };
    let pts = spin_t1_experiment(&scheme, env, &cfg.detector, &delays, &s.sequence)?;
    let form = if s.recovery { ExpForm::Recovery } else { ExpForm::Decay };
    let fit = fit_exponential(&pts.iter().map(|p| (p.tau, p.h)).collect::<Vec<_>>(), form)?;
    let first = pts.iter().min_by(|a, b| a.tau.total_cmp(&b.tau)).expect("non-empty delays");
    // Dark readout: the residual plateau against the full first-pulse peak.
    let (h0, a) = match s.read_mode {
        ReadMode::BrightRead => (first.h, first.a),
        ReadMode::DarkRead => (first.plateau, first.a + first.plateau),
    };
    let fid = initialization_fidelity(h0, a, s.read_mode)?;

    let mut data = String::from("tau_s,h,a\n");
    for p in &pts {
        let _ = writeln!(data, "{:e},{:e},{:e}", p.tau, p.h, p.a);
    }
    let mut report = fit.to_report();
    let _ = writeln!(report, "fidelity={:e}", fid.value);
    let _ = writeln!(report, "fidelity_out_of_range={}", fid.out_of_range);
    let plot = Plot::new("Spin T1", "delay (s)", "leading-edge height (counts/bin)")
        .with_series("h", pts.iter().map(|p| (p.tau, p.h)).collect())
        .with_series("fit", fitted_curve(&fit, form, &delays));
    Ok(Outcome {
        data_csv: data,
        fit_report: Some(report),
        extra: Vec::new(),
        plot,
        summary: vec![("t1_s", fit.param("tau")), ("t1_err_s", fit.std_error("tau").unwrap_or(f64::NAN)), ("fidelity", fid.value)],
    })
}

fn fitted_curve(fit: &FitResult, form: ExpForm, xs: &[f64]) -> Vec<(f64, f64)> {
    let (a, b, tau) = (fit.param("a"), fit.param("b"), fit.param("tau"));
    let sign = if form == ExpForm::Recovery { -1.0 } else { 1.0 };
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    linspace(lo, hi, 200).into_iter().map(|t| (t, a + sign * b * (-t / tau).exp())).collect()
}

fn orbital_t1(cfg: &RunConfig, s: &OrbitalT1Spec) -> Result<Outcome> {
    let scheme = scheme(cfg)?;
    let env = &cfg.environment;
    let pulses = DoublePulse {
        laser: Laser::on(&s.laser, s.saturation),
        width: s.width,
        rise_fall_time: s.rise_fall,
        extinction_db: s.extinction_db,
    };
    let gaps = match &s.gaps {
        Some(g) => g.clone(),
        None => auto_delays(
            orbital_relaxation_time(scheme.params.ground_orbital_splitting, env),
            s.points,
            settle_time(&scheme, s.rise_fall),
        ),
    };
    let pts = orbital_t1_experiment(&scheme, env, &cfg.detector, &gaps, &pulses)?;
    let fit = fit_exponential(&pts, ExpForm::Recovery)?;
    let tau = fit.param("tau");
    let mut data = String::from("gap_s,h\n");
    for (g, h) in &pts {
        let _ = writeln!(data, "{g:e},{h:e}");
    }
    let mut report = fit.to_report();
    let _ = writeln!(report, "rate_hz={:e}", 1.0 / tau);
    let plot = Plot::new("Orbital T1", "gap (s)", "leading-edge height (counts/bin)")
        .with_series("h", pts.clone())
        .with_series("fit", fitted_curve(&fit, ExpForm::Recovery, &gaps));
    Ok(Outcome {
        data_csv: data,
        fit_report: Some(report),
        extra: Vec::new(),
        plot,
        summary: vec![("t1_s", tau), ("t1_err_s", fit.std_error("tau").unwrap_or(f64::NAN)), ("rate_hz", 1.0 / tau)],
    })
}

fn csv_field(s: &str) -> String {
    let s = s.replace(['\n', '\r'], " ");
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

/// Run one sweep point: the base config with the sweep scenario and the axis
/// value substituted.
pub fn sweep_point(base: &ConfigText, spec: &SweepSpec, value: &str) -> Result<Outcome> {
    let mut c = base.clone();
    c.set("run.scenario", &spec.scenario)?;
    c.set(&spec.axis, value)?;
    run(&c.resolve()?)
}

fn sweep(base: &ConfigText, spec: &SweepSpec) -> Result<Outcome> {
    let cols = summary_columns(&spec.scenario);
    let results: Vec<Result<Outcome>> = spec.values.par_iter().map(|v| sweep_point(base, spec, v)).collect();
    let mut data = String::from(&csv_field(&spec.axis));
    for c in cols {
        data.push(',');
        data.push_str(c);
    }
    data.push_str(",errors\n");
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); cols.len()];
    let axis_kind = crate::config::key_spec(&spec.axis).map(|k| k.kind);
    for (v, r) in spec.values.iter().zip(&results) {
        data.push_str(&csv_field(v));
        let x = axis_value(axis_kind, v);
        match r {
            Ok(o) => {
                for (i, c) in cols.iter().enumerate() {
                    let y = o.summary_value(c).unwrap_or(f64::NAN);
                    let _ = write!(data, ",{y:e}");
                    series[i].push((x, y));
                }
                data.push_str(",\n");
            }
            Err(e) => {
                for _ in cols {
                    data.push(',');
                }
                let _ = writeln!(data, ",{}", csv_field(&e.to_string()));
            }
        }
    }
    let failures = results.iter().filter(|r| r.is_err()).count();
    let mut plot = Plot::new(&format!("Sweep of {}", spec.axis), &spec.axis, cols.first().copied().unwrap_or(""));
    if let Some(s) = series.into_iter().next() {
        plot = plot.with_series(cols[0], s);
    }
    let report = format!("points={}\nfailures={failures}\n", spec.values.len());
    Ok(Outcome { data_csv: data, fit_report: Some(report), extra: Vec::new(), plot, summary: Vec::new() })
}

fn axis_value(kind: Option<crate::config::Kind>, v: &str) -> f64 {
    use crate::config::Kind;
    match kind {
        Some(Kind::Quantity(d) | Kind::List(d) | Kind::AutoList(d)) => crate::units::parse_quantity(v, d).unwrap_or(f64::NAN),
        _ => v.parse().unwrap_or(f64::NAN),
    }
}
