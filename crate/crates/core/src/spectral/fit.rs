//! Least-squares fits of Gaussian comb and multi-peak models to `Re D`.

use std::fmt::Write as _;

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{DMatrix, DVector, Dyn, VecStorage, U1};
use num_complex::Complex64;

use super::{ComplexSpectrum, FrequencyGrid};
use crate::error::{AfcError, Result};

const FOUR_LN2: f64 = 4.0 * std::f64::consts::LN_2;
/// Teeth centred up to this many widths outside the window still enter the model.
const TOOTH_MARGIN: f64 = 2.0;
const CENTRE_SEARCH_STEPS: usize = 48;
const SPACING_SEARCH_STEPS: usize = 40;
/// Relative half range of the initial spacing search around the guess.
const SPACING_SEARCH_RANGE: f64 = 0.1;
const MAX_TOOTH_SET_PASSES: usize = 4;
/// Teeth wider than their spacing no longer form a resolvable comb.
const MAX_WIDTH_OVER_SPACING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitWindow {
    /// Hz
    pub lo: f64,
    /// Hz
    pub hi: f64,
}

impl FitWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(AfcError::domain(format!("fit window needs hi > lo, got [{lo}, {hi}]")));
        }
        Ok(FitWindow { lo, hi })
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo && f <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombParams {
    /// Hz, tooth spacing.
    pub delta: f64,
    /// Hz, tooth FWHM.
    pub gamma: f64,
    /// Tooth depth above the background.
    pub d: f64,
    pub d0: f64,
    pub m_teeth: usize,
    /// Hz
    pub bandwidth: f64,
    pub finesse: f64,
}

impl CombParams {
    /// A starting point for [`fit_comb`]; depths `<= 0` are estimated from the data.
    pub fn guess(delta: f64, gamma: f64, d: f64, d0: f64) -> Self {
        CombParams {
            delta,
            gamma,
            d,
            d0,
            m_teeth: 0,
            bandwidth: 0.0,
            finesse: delta / gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombFit {
    pub params: CombParams,
    /// Hz, centre of the lowest tooth inside the window.
    pub first_tooth: f64,
    pub window: FitWindow,
    /// `(centre_Hz, depth)` for every tooth inside the window, from a per-tooth linear refit.
    pub tooth_depths: Vec<(f64, f64)>,
    pub residual_rms: f64,
    pub residual_norm: f64,
    pub evaluations: usize,
    teeth: Vec<i64>,
}

impl CombFit {
    /// Equal-depth Gaussian comb on a flat background.
    pub fn model(&self, f: f64) -> f64 {
        let p = &self.params;
        self.params.d0
            + p.d
                * self
                    .teeth
                    .iter()
                    .map(|&k| gauss(f - self.first_tooth - k as f64 * p.delta, p.gamma))
                    .sum::<f64>()
    }

    pub fn model_spectrum(&self, grid: &FrequencyGrid) -> ComplexSpectrum {
        ComplexSpectrum::from_fn(*grid, |f| Complex64::new(self.model(f), 0.0))
    }

    /// `key = value` lines.
    pub fn report(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let _ = writeln!(out, "delta_hz = {:.9e}", p.delta);
        let _ = writeln!(out, "gamma_hz = {:.9e}", p.gamma);
        let _ = writeln!(out, "d = {:.9e}", p.d);
        let _ = writeln!(out, "d0 = {:.9e}", p.d0);
        let _ = writeln!(out, "m_teeth = {}", p.m_teeth);
        let _ = writeln!(out, "bandwidth_hz = {:.9e}", p.bandwidth);
        let _ = writeln!(out, "finesse = {:.9e}", p.finesse);
        let _ = writeln!(out, "first_tooth_hz = {:.9e}", self.first_tooth);
        let _ = writeln!(out, "window_lo_hz = {:.9e}", self.window.lo);
        let _ = writeln!(out, "window_hi_hz = {:.9e}", self.window.hi);
        let _ = writeln!(out, "residual_rms = {:.9e}", self.residual_rms);
        let _ = writeln!(out, "residual_norm = {:.9e}", self.residual_norm);
        let _ = writeln!(out, "evaluations = {}", self.evaluations);
        let depths: Vec<String> = self.tooth_depths.iter().map(|(_, d)| format!("{d:.6e}")).collect();
        let _ = writeln!(out, "tooth_depths = {}", depths.join(" "));
        out
    }
}

fn gauss(x: f64, fwhm: f64) -> f64 {
    (-FOUR_LN2 * x * x / (fwhm * fwhm)).exp()
}

type Eval<'a> = dyn Fn(&[f64], &mut [f64], Option<&mut DMatrix<f64>>) + 'a;

struct Problem<'a> {
    p: DVector<f64>,
    m: usize,
    eval: &'a Eval<'a>,
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for Problem<'_> {
    type ResidualStorage = VecStorage<f64, Dyn, U1>;
    type JacobianStorage = VecStorage<f64, Dyn, Dyn>;
    type ParameterStorage = VecStorage<f64, Dyn, U1>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.p.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let mut r = DVector::zeros(self.m);
        (self.eval)(self.p.as_slice(), r.as_mut_slice(), None);
        r.iter().all(|x| x.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let mut r = vec![0.0; self.m];
        let mut j = DMatrix::zeros(self.m, self.p.len());
        (self.eval)(self.p.as_slice(), &mut r, Some(&mut j));
        j.iter().all(|x| x.is_finite()).then_some(j)
    }
}

struct Solution {
    params: Vec<f64>,
    evaluations: usize,
    converged: bool,
}

fn solve(start: Vec<f64>, m: usize, eval: &Eval<'_>) -> Solution {
    let problem = Problem {
        p: DVector::from_vec(start),
        m,
        eval,
    };
    let (problem, report) = LevenbergMarquardt::new()
        .with_ftol(1e-14)
        .with_xtol(1e-14)
        .with_gtol(1e-14)
        .with_patience(200)
        .minimize(problem);
    Solution {
        params: problem.p.as_slice().to_vec(),
        evaluations: report.number_of_evaluations,
        converged: report.termination.was_successful(),
    }
}

fn window_samples(spectrum: &ComplexSpectrum, window: &FitWindow) -> (Vec<f64>, Vec<f64>) {
    spectrum
        .grid
        .freqs()
        .zip(&spectrum.depth)
        .filter(|(f, _)| window.contains(*f))
        .map(|(f, d)| (f, d.re))
        .unzip()
}

/// Tooth indices `k` whose centre `c + k delta` lies within the padded window.
fn tooth_set(c: f64, delta: f64, gamma: f64, lo: f64, hi: f64) -> Vec<i64> {
    let pad = TOOTH_MARGIN * gamma.abs();
    let k_lo = ((lo - pad - c) / delta).ceil() as i64;
    let k_hi = ((hi + pad - c) / delta).floor() as i64;
    (k_lo..=k_hi).collect()
}

/// Best flat-background plus equal-tooth amplitudes for fixed teeth, by linear least squares.
fn linear_depths(x: &[f64], y: &[f64], c: f64, delta: f64, gamma: f64, teeth: &[i64]) -> (f64, f64, f64) {
    let basis: Vec<f64> = x
        .iter()
        .map(|&f| teeth.iter().map(|&k| gauss(f - c - k as f64 * delta, gamma)).sum())
        .collect();
    let n = x.len() as f64;
    let (sb, sbb) = basis.iter().fold((0.0, 0.0), |(a, b), &v| (a + v, b + v * v));
    let sy: f64 = y.iter().sum();
    let sby: f64 = basis.iter().zip(y).map(|(b, y)| b * y).sum();
    let det = n * sbb - sb * sb;
    if det.abs() < 1e-300 {
        return (sy / n, 0.0, f64::INFINITY);
    }
    let d = (n * sby - sb * sy) / det;
    let d0 = (sy - d * sb) / n;
    let sse = basis.iter().zip(y).map(|(b, y)| (d0 + d * b - y).powi(2)).sum();
    (d0, d, sse)
}

/// Fits `d0 + d * sum_k G(f - c - k delta; gamma)` to `Re D` inside `window`.
///
/// The model teeth are the contiguous run whose individually fitted depth
/// reaches half the median in-window depth; `m_teeth` counts those centred in
/// the window and `bandwidth` is `m_teeth * delta`.
pub fn fit_comb(spectrum: &ComplexSpectrum, window: FitWindow, guess: &CombParams) -> Result<CombFit> {
    if !(guess.delta > 0.0) || !(guess.gamma > 0.0) {
        return Err(AfcError::domain("comb guess needs delta > 0 and gamma > 0"));
    }
    if window.hi - window.lo < guess.delta {
        return Err(AfcError::domain(format!(
            "fit window of {:.4e} Hz cannot hold two teeth at spacing {:.4e} Hz",
            window.hi - window.lo,
            guess.delta
        )));
    }
    let (freqs, y) = window_samples(spectrum, &window);
    if freqs.len() < 8 {
        return Err(AfcError::domain("fewer than 8 spectrum samples inside the fit window"));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let spread = y.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v)) - y.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if spread <= 1e-12 * mean.abs().max(1.0) {
        return Err(AfcError::NoComb {
            d0: mean,
            d: 0.0,
            residual_rms: 0.0,
        });
    }

    // Work in units of the guessed spacing, measured from the window start.
    let unit = guess.delta;
    let x: Vec<f64> = freqs.iter().map(|f| (f - window.lo) / unit).collect();
    let (lo, hi) = (0.0, (window.hi - window.lo) / unit);
    let gamma0 = guess.gamma / unit;

    // Coarse search over spacing and phase on at most ~1000 samples.
    let stride = (x.len() / 1000).max(1);
    let xs: Vec<f64> = x.iter().step_by(stride).copied().collect();
    let ys: Vec<f64> = y.iter().step_by(stride).copied().collect();
    let mut best = (0.0, 1.0, f64::INFINITY);
    for i in 0..=SPACING_SEARCH_STEPS {
        let delta = 1.0 + SPACING_SEARCH_RANGE * (2.0 * i as f64 / SPACING_SEARCH_STEPS as f64 - 1.0);
        for j in 0..CENTRE_SEARCH_STEPS {
            let c = delta * j as f64 / CENTRE_SEARCH_STEPS as f64;
            let teeth = tooth_set(c, delta, gamma0, lo, hi);
            let (_, d, sse) = linear_depths(&xs, &ys, c, delta, gamma0, &teeth);
            if d > 0.0 && sse < best.2 {
                best = (c, delta, sse);
            }
        }
    }
    let (c0, delta0) = (best.0, best.1);
    let teeth0 = tooth_set(c0, delta0, gamma0, lo, hi);
    let (d0_lin, d_lin, _) = linear_depths(&x, &y, c0, delta0, gamma0, &teeth0);
    let d_start = if guess.d > 0.0 { guess.d } else { d_lin };
    let d0_start = if guess.d0 > 0.0 { guess.d0 } else { d0_lin };

    let mut p = vec![c0, delta0, gamma0, d_start, d0_start];
    let mut teeth = teeth0;
    let mut evaluations = 0;
    let mut converged = false;
    let mut depths: Vec<(i64, f64)> = Vec::new();
    for _ in 0..MAX_TOOTH_SET_PASSES {
        let set = teeth.clone();
        let eval = |q: &[f64], r: &mut [f64], jac: Option<&mut DMatrix<f64>>| comb_residuals(q, &set, &x, &y, r, jac);
        let sol = solve(p.clone(), x.len(), &eval);
        evaluations += sol.evaluations;
        converged = sol.converged;
        p = sol.params;
        let (c, delta, gamma) = (p[0], p[1], p[2].abs());
        if !(gamma <= MAX_WIDTH_OVER_SPACING * delta) || !p.iter().all(|v| v.is_finite()) {
            converged = false;
            break;
        }
        let candidates = tooth_set(c, delta, gamma, lo, hi);
        let amplitudes = tooth_depths(&x, &y, c, delta, gamma, &candidates);
        depths = candidates.iter().copied().zip(amplitudes).collect();
        let inside = |k: i64| (lo..=hi).contains(&(c + k as f64 * delta));
        let next = strong_teeth(&depths, inside);
        if next == teeth || next.len() < 2 {
            break;
        }
        teeth = next;
    }

    let (c, delta, gamma) = (p[0], p[1], p[2].abs());
    let (d, d0) = (p[3], p[4]);
    let mut r = vec![0.0; x.len()];
    comb_residuals(&[c, delta, gamma, d, d0], &teeth, &x, &y, &mut r, None);
    let residual_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual_rms = residual_norm / (r.len() as f64).sqrt();

    let inside = |k: i64| (lo..=hi).contains(&(c + k as f64 * delta));
    let m_teeth = teeth.iter().filter(|&&k| inside(k)).count();
    if d < 3.0 * residual_rms || m_teeth < 2 {
        return Err(AfcError::NoComb { d0, d, residual_rms });
    }

    let to_hz = |u: f64| window.lo + u * unit;
    let k_first = teeth[0];
    let delta_hz = delta * unit;
    let gamma_hz = gamma * unit;
    let fit = CombFit {
        params: CombParams {
            delta: delta_hz,
            gamma: gamma_hz,
            d,
            d0,
            m_teeth,
            bandwidth: m_teeth as f64 * delta_hz,
            finesse: delta_hz / gamma_hz,
        },
        first_tooth: to_hz(c + k_first as f64 * delta),
        window,
        tooth_depths: depths
            .iter()
            .filter(|t| inside(t.0))
            .map(|&(k, a)| (to_hz(c + k as f64 * delta), a))
            .collect(),
        residual_rms,
        residual_norm,
        evaluations,
        teeth: teeth.iter().map(|k| k - k_first).collect(),
    };
    let valid = delta > 0.0
        && gamma > 0.0
        && gamma <= MAX_WIDTH_OVER_SPACING * delta
        && d0 >= -residual_rms
        && p.iter().all(|v| v.is_finite());
    if !converged || !valid {
        return Err(AfcError::FitNotConverged {
            best: Box::new(fit),
            evaluations,
        });
    }
    Ok(fit)
}

fn comb_residuals(p: &[f64], teeth: &[i64], x: &[f64], y: &[f64], r: &mut [f64], jac: Option<&mut DMatrix<f64>>) {
    let (c, delta, gamma, d, d0) = (p[0], p[1], p[2], p[3], p[4]);
    let g2 = gamma * gamma;
    match jac {
        None => {
            for (i, &f) in x.iter().enumerate() {
                let s: f64 = teeth.iter().map(|&k| gauss(f - c - k as f64 * delta, gamma)).sum();
                r[i] = d0 + d * s - y[i];
            }
        }
        Some(j) => {
            for (i, &f) in x.iter().enumerate() {
                let (mut s, mut dc, mut dd, mut dg) = (0.0, 0.0, 0.0, 0.0);
                for &k in teeth {
                    let u = f - c - k as f64 * delta;
                    let e = gauss(u, gamma);
                    let w = 2.0 * FOUR_LN2 * u / g2 * e;
                    s += e;
                    dc += w;
                    dd += w * k as f64;
                    dg += w * u / gamma;
                }
                r[i] = d0 + d * s - y[i];
                j[(i, 0)] = d * dc;
                j[(i, 1)] = d * dd;
                j[(i, 2)] = d * dg;
                j[(i, 3)] = s;
                j[(i, 4)] = 1.0;
            }
        }
    }
}

/// Independent amplitude per tooth (plus a shared background) with the comb geometry fixed.
fn tooth_depths(x: &[f64], y: &[f64], c: f64, delta: f64, gamma: f64, teeth: &[i64]) -> Vec<f64> {
    let a = DMatrix::from_fn(x.len(), teeth.len() + 1, |i, col| {
        if col == 0 {
            1.0
        } else {
            gauss(x[i] - c - teeth[col - 1] as f64 * delta, gamma)
        }
    });
    let b = DVector::from_column_slice(y);
    match a.svd(true, true).solve(&b, 1e-12) {
        Ok(sol) => sol.iter().skip(1).copied().collect(),
        Err(_) => vec![0.0; teeth.len()],
    }
}

/// Contiguous run of teeth from the first to the last one at least half the
/// median depth of the teeth centred inside the window.
fn strong_teeth(depths: &[(i64, f64)], inside: impl Fn(i64) -> bool) -> Vec<i64> {
    let mut sorted: Vec<f64> = depths.iter().filter(|t| inside(t.0)).map(|t| t.1).collect();
    if sorted.is_empty() {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let strong: Vec<i64> = depths.iter().filter(|t| t.1 >= 0.5 * median).map(|t| t.0).collect();
    match (strong.first(), strong.last()) {
        (Some(&a), Some(&b)) => (a..=b).collect(),
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFit {
    /// Hz, common displacement of all peaks from their nominal offsets.
    pub shift: f64,
    /// Hz, common Gaussian FWHM.
    pub fwhm: f64,
    pub background: f64,
    pub amplitudes: Vec<f64>,
    pub residual_rms: f64,
    pub evaluations: usize,
}

/// Fits Gaussians of a common width at `offsets + shift` on a flat background.
pub fn fit_features(
    spectrum: &ComplexSpectrum,
    window: FitWindow,
    offsets: &[f64],
    shift_guess: f64,
    fwhm_guess: f64,
) -> Result<FeatureFit> {
    if offsets.is_empty() || !(fwhm_guess > 0.0) {
        return Err(AfcError::domain(
            "feature fit needs at least one offset and a positive width guess",
        ));
    }
    let (freqs, y) = window_samples(spectrum, &window);
    let n_par = 3 + offsets.len();
    if freqs.len() < 2 * n_par {
        return Err(AfcError::domain(
            "too few spectrum samples inside the feature-fit window",
        ));
    }
    let unit = fwhm_guess;
    let x: Vec<f64> = freqs.iter().map(|f| (f - window.lo) / unit).collect();
    let centres: Vec<f64> = offsets.iter().map(|o| (o - window.lo) / unit).collect();
    let peak = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut start = vec![shift_guess / unit, 1.0, floor];
    start.extend(std::iter::repeat_n(peak - floor, offsets.len()));

    let eval = |q: &[f64], r: &mut [f64], jac: Option<&mut DMatrix<f64>>| {
        let (s, w, b) = (q[0], q[1], q[2]);
        let amps = &q[3..];
        let mut jac = jac;
        for (i, &f) in x.iter().enumerate() {
            let mut model = b;
            let (mut ds, mut dw) = (0.0, 0.0);
            for (l, (&c, &a)) in centres.iter().zip(amps).enumerate() {
                let u = f - c - s;
                let e = gauss(u, w);
                model += a * e;
                let k = 2.0 * FOUR_LN2 * u / (w * w) * e * a;
                ds += k;
                dw += k * u / w;
                if let Some(j) = jac.as_deref_mut() {
                    j[(i, 3 + l)] = e;
                }
            }
            r[i] = model - y[i];
            if let Some(j) = jac.as_deref_mut() {
                j[(i, 0)] = ds;
                j[(i, 1)] = dw;
                j[(i, 2)] = 1.0;
            }
        }
    };
    let sol = solve(start, x.len(), &eval);
    let mut r = vec![0.0; x.len()];
    eval(&sol.params, &mut r, None);
    let residual_rms = (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt();
    let fit = FeatureFit {
        shift: sol.params[0] * unit,
        fwhm: sol.params[1].abs() * unit,
        background: sol.params[2],
        amplitudes: sol.params[3..].to_vec(),
        residual_rms,
        evaluations: sol.evaluations,
    };
    if !sol.converged || sol.params.iter().any(|v| !v.is_finite()) {
        return Err(AfcError::domain(format!(
            "feature fit did not converge after {} evaluations",
            sol.evaluations
        )));
    }
    Ok(fit)
}
