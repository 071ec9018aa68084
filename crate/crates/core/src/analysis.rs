//! Least-squares fits for decay curves, Lorentzian dips and straight lines.
//!
//! Nonlinear fits run a damped Gauss–Newton (Levenberg–Marquardt) iteration
//! with analytic Jacobians on data rescaled to unit size, so results are
//! equivariant under rescaling of x and y. Standard errors use the usual
//! `σ²(JᵀJ)⁻¹` approximation.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spectrum::Spectrum;

pub const MAX_ITERATIONS: usize = 200;
pub const STEP_TOLERANCE: f64 = 1e-10;

pub const FLAG_TAU_UNIDENTIFIABLE: &str = "tau_unidentifiable";
pub const FLAG_NOT_CONVERGED: &str = "not_converged";
pub const FLAG_NARROW_SPAN: &str = "span_below_3_fwhm";

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<(String, f64)>,
    pub std_errors: Vec<(String, f64)>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.std_errors.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Value of a parameter known to exist.
    pub fn param(&self, name: &str) -> f64 {
        self.get(name).unwrap_or_else(|| panic!("fit has no parameter {name}"))
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    /// Flat `key=value` block, one entry per line.
    pub fn to_report(&self) -> String {
        let mut s = String::new();
        for (name, v) in &self.params {
            let _ = writeln!(s, "{name}={v:e}");
        }
        for (name, v) in &self.std_errors {
            let _ = writeln!(s, "{name}_err={v:e}");
        }
        let _ = writeln!(s, "residual_norm={:e}", self.residual_norm);
        let _ = writeln!(s, "converged={}", self.converged);
        let _ = writeln!(s, "iterations={}", self.iterations);
        let _ = writeln!(s, "flags={}", self.flags.join(","));
        s
    }

    /// Same block with every key prefixed, for multi-fit reports.
    pub fn to_report_prefixed(&self, prefix: &str) -> String {
        self.to_report().lines().map(|l| format!("{prefix}.{l}\n")).collect()
    }
}

/// A value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

struct Outcome {
    params: Vec<f64>,
    std_errors: Vec<f64>,
    rss: f64,
    converged: bool,
    iterations: usize,
}

/// Levenberg–Marquardt on `model(p, x) -> (value, ∂value/∂p)`.
fn levenberg_marquardt<F>(model: F, x: &[f64], y: &[f64], p0: &[f64]) -> Result<Outcome>
where
    F: Fn(&[f64], f64, &mut [f64]) -> f64,
{
    let n = x.len();
    let m = p0.len();
    let mut p = p0.to_vec();
    let mut grad = vec![0.0; m];
    let eval = |p: &[f64], grad: &mut [f64], jac: Option<&mut DMatrix<f64>>| -> (DVector<f64>, f64) {
        let mut r = DVector::zeros(n);
        let mut jac = jac;
        for i in 0..n {
            r[i] = model(p, x[i], grad) - y[i];
            if let Some(j) = jac.as_deref_mut() {
                for k in 0..m {
                    j[(i, k)] = grad[k];
                }
            }
        }
        let rss = r.norm_squared();
        (r, rss)
    };

    let mut jac = DMatrix::zeros(n, m);
    let (mut r, mut rss) = eval(&p, &mut grad, Some(&mut jac));
    if !rss.is_finite() {
        return Err(Error::Fit("model is not finite at the initial guess".into()));
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        if g.amax() <= 1e-15 * (1.0 + rss.sqrt()) {
            converged = true;
            break;
        }
        let mut a = jtj.clone();
        for k in 0..m {
            a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
        }
        let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
            lambda *= 10.0;
            continue;
        };
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let mut trial_jac = DMatrix::zeros(n, m);
        let (tr, trss) = eval(&trial, &mut grad, Some(&mut trial_jac));
        if trss.is_finite() && trss <= rss {
            let rel = step
                .iter()
                .zip(&trial)
                .map(|(d, v)| d.abs() / v.abs().max(1e-12))
                .fold(0.0, f64::max);
            p = trial;
            r = tr;
            rss = trss;
            jac = trial_jac;
            lambda = (lambda / 10.0).max(1e-15);
            if rel < STEP_TOLERANCE {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e16 {
                // No downhill direction left: a minimum to working precision.
                converged = true;
                break;
            }
        }
    }

    let dof = n.saturating_sub(m).max(1) as f64;
    let sigma2 = rss / dof;
    let jtj = jac.transpose() * &jac;
    let std_errors = match jtj.clone().try_inverse() {
        Some(cov) => (0..m).map(|k| (sigma2 * cov[(k, k)]).max(0.0).sqrt()).collect(),
        None => vec![f64::INFINITY; m],
    };
    Ok(Outcome { params: p, std_errors, rss, converged, iterations })
}

fn check_points(points: &[(f64, f64)], min: usize) -> Result<()> {
    if points.len() < min {
        return Err(Error::Fit(format!("need at least {min} points, got {}", points.len())));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Fit("data contain non-finite values".into()));
    }
    Ok(())
}

fn scale_of(values: impl Iterator<Item = f64>) -> f64 {
    let s = values.fold(0.0f64, |m, v| m.max(v.abs()));
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Sign convention of the exponential model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpForm {
    /// `a + b·exp(−x/τ)`
    Decay,
    /// `a − b·exp(−x/τ)`
    Recovery,
}

/// Fit an exponential approach to an asymptote. Parameters: `a`, `b`, `tau`.
pub fn fit_exponential(points: &[(f64, f64)], form: ExpForm) -> Result<FitResult> {
    let mut fit = fit_decay(points)?;
    if form == ExpForm::Recovery {
        if let Some(b) = fit.params.iter_mut().find(|(n, _)| n == "b") {
            b.1 = -b.1;
        }
    }
    Ok(fit)
}

fn fit_decay(points: &[(f64, f64)]) -> Result<FitResult> {
    check_points(points, 4)?;
    if points.iter().any(|(x, _)| *x < 0.0) {
        return Err(Error::Fit("x values must be non-negative".into()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sx = scale_of(sorted.iter().map(|p| p.0));
    let sy = scale_of(sorted.iter().map(|p| p.1));
    let x: Vec<f64> = sorted.iter().map(|p| p.0 / sx).collect();
    let y: Vec<f64> = sorted.iter().map(|p| p.1 / sy).collect();
    let names = ["a", "b", "tau"];

    let x_range = x[x.len() - 1] - x[0];
    let (ymin, ymax) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if x_range <= 0.0 {
        return Err(Error::Fit("all x values are equal".into()));
    }
    if ymax - ymin <= 1e-12 {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        return Ok(FitResult {
            params: named(&names, &[mean * sy, 0.0, x_range / 3.0 * sx]),
            std_errors: named(&names, &[0.0, 0.0, f64::INFINITY]),
            residual_norm: 0.0,
            converged: true,
            iterations: 0,
            flags: vec![FLAG_TAU_UNIDENTIFIABLE.into()],
        });
    }

    let a0 = y[y.len() - 1];
    let b0 = y[0] - a0;
    let p0 = [a0, b0 * (x[0] * 3.0 / x_range).exp(), x_range / 3.0];
    let out = levenberg_marquardt(
        |p, x, g| {
            let e = (-x / p[2]).exp();
            g[0] = 1.0;
            g[1] = e;
            g[2] = p[1] * e * x / (p[2] * p[2]);
            p[0] + p[1] * e
        },
        &x,
        &y,
        &p0,
    )?;
    let mut flags = Vec::new();
    if !out.converged {
        flags.push(FLAG_NOT_CONVERGED.to_string());
    }
    if !(out.params[2] > 0.0) || !out.std_errors[2].is_finite() {
        flags.push(FLAG_TAU_UNIDENTIFIABLE.to_string());
    }
    let scales = [sy, sy, sx];
    Ok(FitResult {
        params: named(&names, &scaled(&out.params, &scales)),
        std_errors: named(&names, &scaled(&out.std_errors, &scales)),
        residual_norm: out.rss.sqrt() * sy,
        converged: out.converged,
        iterations: out.iterations,
        flags,
    })
}

/// Fit `baseline − depth / (1 + (2(x − center)/fwhm)²)`.
///
/// Parameters: `center`, `fwhm`, `depth`, `baseline`.
pub fn fit_lorentzian_dip(spec: &Spectrum) -> Result<FitResult> {
    let points: Vec<(f64, f64)> = spec.grid.iter().copied().zip(spec.counts.iter().copied()).collect();
    check_points(&points, 5)?;
    let lo = spec.grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = spec.grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(Error::Fit("spectrum grid has zero span".into()));
    }
    let xc = 0.5 * (lo + hi);
    let sx = 0.5 * (hi - lo);
    let sy = scale_of(spec.counts.iter().copied());
    let x: Vec<f64> = spec.grid.iter().map(|v| (v - xc) / sx).collect();
    let y: Vec<f64> = spec.counts.iter().map(|v| v / sy).collect();

    let (imin, ymin) = y.iter().copied().enumerate().fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let edge = (y.len() / 10).max(1);
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
    let base0 = (order[..edge].iter().chain(&order[order.len() - edge..]).map(|&i| y[i]).sum::<f64>()) / (2 * edge) as f64;
    let depth0 = base0 - ymin;
    if !(depth0 > 0.0) {
        return Err(Error::Fit("spectrum shows no dip below its edges".into()));
    }
    let half = base0 - 0.5 * depth0;
    let below: Vec<f64> = x.iter().zip(&y).filter(|(_, v)| **v <= half).map(|(x, _)| *x).collect();
    let width0 = match (below.iter().copied().reduce(f64::min), below.iter().copied().reduce(f64::max)) {
        (Some(a), Some(b)) if b > a => b - a,
        _ => 0.1,
    };
    let p0 = [x[imin], width0, depth0, base0];
    let out = levenberg_marquardt(
        |p, x, g| {
            let u = 2.0 * (x - p[0]) / p[1];
            let l = 1.0 / (1.0 + u * u);
            let dl_du = -2.0 * u * l * l;
            // ∂u/∂center = −2/w, ∂u/∂w = −u/w
            g[0] = -p[2] * dl_du * (-2.0 / p[1]);
            g[1] = -p[2] * dl_du * (-u / p[1]);
            g[2] = -l;
            g[3] = 1.0;
            p[3] - p[2] * l
        },
        &x,
        &y,
        &p0,
    )?;
    let [c, w, d, b] = [out.params[0], out.params[1].abs(), out.params[2], out.params[3]];
    if !(d > 0.0) {
        return Err(Error::Fit(format!("fitted depth {:e} is not a dip", d * sy)));
    }
    let mut flags = Vec::new();
    if !out.converged {
        flags.push(FLAG_NOT_CONVERGED.to_string());
    }
    // The normalised grid spans [-1, 1].
    if 2.0 < 3.0 * w {
        flags.push(FLAG_NARROW_SPAN.to_string());
    }
    let names = ["center", "fwhm", "depth", "baseline"];
    let scales = [sx, sx, sy, sy];
    let mut params = scaled(&[c, w, d, b], &scales);
    params[0] += xc;
    Ok(FitResult {
        params: named(&names, &params),
        std_errors: named(&names, &scaled(&out.std_errors, &scales)),
        residual_norm: out.rss.sqrt() * sy,
        converged: out.converged,
        iterations: out.iterations,
        flags,
    })
}

/// Ordinary least squares line. Parameters: `slope`, `intercept`, `r_squared`.
pub fn fit_linear(points: &[(f64, f64)]) -> Result<FitResult> {
    check_points(points, 2)?;
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let sigma2 = if points.len() > 2 { ss_res / (n - 2.0) } else { 0.0 };
    let se_slope = (sigma2 / sxx).sqrt();
    let se_intercept = (sigma2 * (1.0 / n + mx * mx / sxx)).sqrt();
    Ok(FitResult {
        params: named(&["slope", "intercept", "r_squared"], &[slope, intercept, r_squared]),
        std_errors: named(&["slope", "intercept"], &[se_slope, se_intercept]),
        residual_norm: ss_res.sqrt(),
        converged: true,
        iterations: 0,
        flags: Vec::new(),
    })
}

/// Zero-power width: intercept of a linear fit of FWHM against power.
pub fn extrapolate_zero_power(series: &[(f64, f64)]) -> Result<Estimate> {
    if series.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 powers, got {}", series.len())));
    }
    let fit = fit_linear(series)?;
    Ok(Estimate { value: fit.param("intercept"), std_error: fit.std_error("intercept").unwrap_or(0.0) })
}

/// Coherence time from a dip width: `T2* = 1/(2π·FWHM)`.
pub fn t2_star_from_fwhm(fwhm: f64) -> Result<f64> {
    if !(fwhm > 0.0 && fwhm.is_finite()) {
        return Err(Error::Analysis(format!("FWHM must be positive, got {fwhm}")));
    }
    Ok(1.0 / (2.0 * std::f64::consts::PI * fwhm))
}

/// Inverse of [`t2_star_from_fwhm`].
pub fn fwhm_from_t2_star(t2_star: f64) -> Result<f64> {
    if !(t2_star > 0.0 && t2_star.is_finite()) {
        return Err(Error::Analysis(format!("T2* must be positive, got {t2_star}")));
    }
    Ok(1.0 / (2.0 * std::f64::consts::PI * t2_star))
}

fn named(names: &[&str], values: &[f64]) -> Vec<(String, f64)> {
    names.iter().zip(values).map(|(n, v)| (n.to_string(), *v)).collect()
}

fn scaled(values: &[f64], scales: &[f64]) -> Vec<f64> {
    values.iter().zip(scales).map(|(v, s)| v * s).collect()
}
