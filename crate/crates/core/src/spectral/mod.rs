//! Complex optical-depth spectra seen by a co-propagating D2 probe.
//!
//! `D(f) = od_scale * sum_lines s * integral pop_f4(v) L(f - offset - v/lambda) dv`
//! with the unit-area complex Lorentzian `L(x) = i / (pi (x + i g))`, `g` the
//! half width. `Re D` is the absorptive optical depth and `Im D` the
//! dispersive part, so a field transfer function is `exp(-D/2)` when fields
//! are synthesised as `integral E(f) exp(-i 2 pi f t) df`.

mod fit;

pub use fit::{fit_comb, fit_features, CombFit, CombParams, FeatureFit, FitWindow};

use std::f64::consts::PI;
use std::fmt::Write as _;

use errorfunctions::ComplexErrorFunctions;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::atomic::{velocity_for_detuning, Beam, LineTable, TransitionLine};
use crate::error::{AfcError, Result};
use crate::pump::VelocityDistribution;

/// Populated velocity bins are those with `pop_f4` above this fraction of the maximum.
pub const POPULATED_FRACTION: f64 = 1e-3;

const PROBE: Beam = Beam::CoPropagating;
/// Lattice steps per Lorentzian half width in the convolution path.
const KERNEL_OVERSAMPLING: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    /// Hz
    pub start: f64,
    /// Hz
    pub step: f64,
    pub count: usize,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        FrequencyGrid::centred(0.0, 1.5e9, 1 << 15).expect("default grid is valid")
    }
}

impl FrequencyGrid {
    pub fn new(start: f64, step: f64, count: usize) -> Result<Self> {
        let g = FrequencyGrid { start, step, count };
        g.validate()?;
        Ok(g)
    }

    /// `count` points spanning `[centre - half_span, centre + half_span]`.
    pub fn centred(centre: f64, half_span: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(AfcError::domain("frequency grid needs at least 2 points"));
        }
        FrequencyGrid::new(centre - half_span, 2.0 * half_span / (count - 1) as f64, count)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || self.count < 2 || !self.start.is_finite() {
            return Err(AfcError::domain(format!(
                "frequency grid needs step > 0 and >= 2 points, got step {} Hz, {} points",
                self.step, self.count
            )));
        }
        Ok(())
    }

    pub fn freq(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.freq(self.count - 1)
    }

    pub fn freqs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(move |i| self.freq(i))
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.start && f <= self.end()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub grid: FrequencyGrid,
    pub depth: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn zeros(grid: FrequencyGrid) -> Self {
        ComplexSpectrum {
            grid,
            depth: vec![Complex64::new(0.0, 0.0); grid.count],
        }
    }

    pub fn from_fn(grid: FrequencyGrid, f: impl Fn(f64) -> Complex64 + Sync) -> Self {
        let depth = (0..grid.count).into_par_iter().map(|i| f(grid.freq(i))).collect();
        ComplexSpectrum { grid, depth }
    }

    pub fn re_depth(&self) -> Vec<f64> {
        self.depth.iter().map(|d| d.re).collect()
    }

    pub fn im_depth(&self) -> Vec<f64> {
        self.depth.iter().map(|d| d.im).collect()
    }

    /// Intensity transmission `exp(-Re D)` at sample `i`.
    pub fn transmission(&self, i: usize) -> f64 {
        (-self.depth[i].re).exp()
    }

    pub fn peak_re(&self) -> f64 {
        self.depth.iter().map(|d| d.re).fold(0.0, f64::max)
    }

    /// Largest `|Re D|` at the two grid edges relative to the peak.
    pub fn edge_leakage(&self) -> f64 {
        let peak = self.peak_re();
        if peak == 0.0 {
            return 0.0;
        }
        let n = self.depth.len();
        self.depth[0].re.abs().max(self.depth[n - 1].re.abs()) / peak
    }

    /// Linear interpolation; zero outside the grid.
    pub fn interpolate(&self, f: f64) -> Complex64 {
        let x = (f - self.grid.start) / self.grid.step;
        if !(x >= 0.0) || x > (self.grid.count - 1) as f64 {
            return Complex64::new(0.0, 0.0);
        }
        let i = (x.floor() as usize).min(self.grid.count - 2);
        let t = x - i as f64;
        self.depth[i] * (1.0 - t) + self.depth[i + 1] * t
    }

    pub fn scaled(&self, factor: f64) -> ComplexSpectrum {
        ComplexSpectrum {
            grid: self.grid,
            depth: self.depth.iter().map(|d| d * factor).collect(),
        }
    }

    /// Pointwise sum of two spectra on the same grid.
    pub fn add(&self, other: &ComplexSpectrum) -> Result<ComplexSpectrum> {
        if self.grid != other.grid {
            return Err(AfcError::domain("cannot add spectra on different grids"));
        }
        Ok(ComplexSpectrum {
            grid: self.grid,
            depth: self.depth.iter().zip(&other.depth).map(|(a, b)| a + b).collect(),
        })
    }

    /// Tabular text: `freq_Hz re_depth im_depth transmission`.
    pub fn to_table(&self) -> String {
        let mut out = String::with_capacity(self.depth.len() * 80);
        out.push_str("# freq_Hz re_depth im_depth transmission\n");
        for (i, d) in self.depth.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:.15e} {:.17e} {:.17e} {:.17e}",
                self.grid.freq(i),
                d.re,
                d.im,
                self.transmission(i)
            );
        }
        out
    }

    /// Reads the format written by [`ComplexSpectrum::to_table`]. A missing
    /// `im_depth` column (two-column input) is read as zero.
    pub fn from_table(text: &str) -> Result<ComplexSpectrum> {
        let mut freqs = Vec::new();
        let mut depth = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| AfcError::config(format!("spectrum line {}: {e}", n + 1)))?;
            if cols.len() < 2 {
                return Err(AfcError::config(format!(
                    "spectrum line {}: expected freq_Hz re_depth [im_depth ...]",
                    n + 1
                )));
            }
            freqs.push(cols[0]);
            depth.push(Complex64::new(cols[1], cols.get(2).copied().unwrap_or(0.0)));
        }
        if freqs.len() < 2 {
            return Err(AfcError::config("spectrum table has fewer than 2 rows"));
        }
        let step = (freqs[freqs.len() - 1] - freqs[0]) / (freqs.len() - 1) as f64;
        let grid = FrequencyGrid::new(freqs[0], step, freqs.len())?;
        for (i, f) in freqs.iter().enumerate() {
            if (f - grid.freq(i)).abs() > 1e-6 * step {
                return Err(AfcError::config(format!(
                    "spectrum table is not on a uniform grid (row {i}: {f} Hz)"
                )));
            }
        }
        Ok(ComplexSpectrum { grid, depth })
    }
}

/// Unit-area complex Lorentzian with half width `g`.
pub fn complex_lorentzian(x: f64, g: f64) -> Complex64 {
    Complex64::new(0.0, 1.0 / PI) / Complex64::new(x, g)
}

/// Lorentzian (half width `g`) convolved with a unit-area Gaussian of standard
/// deviation `sigma`, via the Faddeeva function.
pub fn complex_voigt(x: f64, g: f64, sigma: f64) -> Complex64 {
    let z = Complex64::new(x, g) / (std::f64::consts::SQRT_2 * sigma);
    z.w() / ((2.0 * PI).sqrt() * sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectrumMethod {
    /// Resample onto the frequency lattice and convolve by FFT.
    #[default]
    Convolution,
    /// Direct sum over velocity bins at every frequency.
    Quadrature,
}

pub fn complex_depth_spectrum(
    dist: &VelocityDistribution,
    lines: &LineTable,
    grid: &FrequencyGrid,
    od_scale: f64,
) -> Result<ComplexSpectrum> {
    complex_depth_spectrum_with(dist, lines, grid, od_scale, SpectrumMethod::default())
}

pub fn complex_depth_spectrum_with(
    dist: &VelocityDistribution,
    lines: &LineTable,
    grid: &FrequencyGrid,
    od_scale: f64,
    method: SpectrumMethod,
) -> Result<ComplexSpectrum> {
    if !(od_scale > 0.0) {
        return Err(AfcError::domain(format!("od_scale must be positive, got {od_scale}")));
    }
    grid.validate()?;
    let active: Vec<&TransitionLine> = lines.lines().iter().filter(|l| l.strength > 0.0).collect();
    check_coverage(dist, &active, grid)?;
    if dist.pop_f4.iter().all(|&p| p == 0.0) {
        return Ok(ComplexSpectrum::zeros(*grid));
    }
    let mut spec = match method {
        SpectrumMethod::Quadrature => quadrature(dist, &active, grid),
        SpectrumMethod::Convolution => convolution(dist, &active, grid),
    };
    for d in &mut spec.depth {
        *d *= od_scale;
    }
    Ok(spec)
}

fn check_coverage(dist: &VelocityDistribution, lines: &[&TransitionLine], grid: &FrequencyGrid) -> Result<()> {
    let max = dist.pop_f4.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(());
    }
    let populated = dist
        .pop_f4
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= POPULATED_FRACTION * max)
        .map(|(i, _)| dist.velocity(i));
    let (vmin, vmax) = populated.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    for l in lines {
        let lo = l.offset + l.doppler_shift(vmin, PROBE);
        let hi = l.offset + l.doppler_shift(vmax, PROBE);
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        if lo < grid.start || hi > grid.end() {
            return Err(AfcError::domain(format!(
                "frequency grid [{:.4e}, {:.4e}] Hz does not cover {} absorption from populated velocities [{vmin:.1}, {vmax:.1}] m/s ([{lo:.4e}, {hi:.4e}] Hz)",
                grid.start,
                grid.end(),
                l.label
            )));
        }
    }
    Ok(())
}

fn quadrature(dist: &VelocityDistribution, lines: &[&TransitionLine], grid: &FrequencyGrid) -> ComplexSpectrum {
    let bins: Vec<(f64, f64)> = dist
        .pop_f4
        .iter()
        .enumerate()
        .filter(|(_, &p)| p != 0.0)
        .map(|(i, &p)| (dist.velocity(i), p * dist.dv))
        .collect();
    ComplexSpectrum::from_fn(*grid, |f| {
        let mut acc = Complex64::new(0.0, 0.0);
        for l in lines {
            let g = 0.5 * l.natural_linewidth;
            let mut sum = Complex64::new(0.0, 0.0);
            for &(v, w) in &bins {
                sum += complex_lorentzian(f - l.offset - l.doppler_shift(v, PROBE), g) * w;
            }
            acc += sum * l.strength;
        }
        acc
    })
}

fn convolution(dist: &VelocityDistribution, lines: &[&TransitionLine], grid: &FrequencyGrid) -> ComplexSpectrum {
    // All lines share the probe wavelength, so velocity maps to one Doppler
    // shift u = v / lambda and the line sum collapses into a single kernel.
    let wavelength = lines[0].wavelength;
    let g_min = lines
        .iter()
        .map(|l| 0.5 * l.natural_linewidth)
        .fold(f64::INFINITY, f64::min);
    // the u lattice must resolve the narrowest Lorentzian
    let r = (KERNEL_OVERSAMPLING * grid.step / g_min).ceil().max(1.0) as usize;
    let h = grid.step / r as f64;
    let (u_a, u_b) = (
        lines[0].doppler_shift(dist.v_start, PROBE),
        lines[0].doppler_shift(dist.v_end(), PROBE),
    );
    let (u_min, u_max) = (u_a.min(u_b), u_a.max(u_b));
    let j_count = ((u_max - u_min) / h).floor() as usize + 1;
    // density in u (per Hz) times the lattice step, on u_j = u_min + j h
    let p: Vec<f64> = (0..j_count)
        .map(|j| {
            let v = velocity_for_detuning(wavelength, u_min + j as f64 * h, PROBE);
            catmull_rom(&dist.pop_f4, (v - dist.v_start) / dist.dv) * wavelength * h
        })
        .collect();
    // With x_k = f_0 - u_{J-1} + k h, f_i - u_j = x_{i r + J - 1 - j}, so
    // D_i is the full linear convolution c = p * K read at c_{i r + J - 1}.
    let n = grid.count;
    let k_len = (n - 1) * r + j_count;
    let x0 = grid.start - (u_min + (j_count - 1) as f64 * h);
    let size = (j_count + k_len - 1).next_power_of_two();
    let mut kernel: Vec<Complex64> = (0..k_len)
        .into_par_iter()
        .map(|k| {
            let x = x0 + k as f64 * h;
            lines
                .iter()
                .map(|l| complex_lorentzian(x - l.offset, 0.5 * l.natural_linewidth) * l.strength)
                .sum()
        })
        .collect();
    kernel.resize(size, Complex64::new(0.0, 0.0));
    let mut a: Vec<Complex64> = p.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    a.resize(size, Complex64::new(0.0, 0.0));
    fft_convolve(&mut a, kernel);
    let depth = (0..n).map(|i| a[i * r + j_count - 1]).collect();
    ComplexSpectrum { grid: *grid, depth }
}

/// Cubic Catmull-Rom interpolation at fractional index `x`; zero outside the samples.
fn catmull_rom(y: &[f64], x: f64) -> f64 {
    let n = y.len() as isize;
    if !(x >= 0.0) || x > (n - 1) as f64 {
        return 0.0;
    }
    let i = x.floor() as isize;
    let t = x - i as f64;
    let at = |k: isize| if k < 0 || k >= n { 0.0 } else { y[k as usize] };
    let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
    p1 + 0.5 * t * (p2 - p0 + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)))
}

/// A Gaussian velocity class: `population` atoms in F=4 with mean velocity
/// `centre_velocity` and standard deviation `sigma_velocity` (m/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianClass {
    pub centre_velocity: f64,
    pub sigma_velocity: f64,
    pub population: f64,
}

/// Samples Gaussian classes into an F=4 distribution on the velocity grid
/// `[v_start, v_start + (bins - 1) dv]`.
pub fn render_classes(classes: &[GaussianClass], v_start: f64, dv: f64, bins: usize) -> VelocityDistribution {
    let pop_f4: Vec<f64> = (0..bins)
        .map(|i| {
            let v = v_start + i as f64 * dv;
            classes
                .iter()
                .map(|c| {
                    let z = (v - c.centre_velocity) / c.sigma_velocity;
                    c.population * (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * c.sigma_velocity)
                })
                .sum()
        })
        .collect();
    VelocityDistribution {
        v_start,
        dv,
        pop_f3: vec![0.0; bins],
        pop_f4,
        total_population: classes.iter().map(|c| c.population).sum(),
    }
}

/// Closed-form spectrum of Gaussian velocity classes.
pub fn voigt_depth_spectrum(
    classes: &[GaussianClass],
    lines: &LineTable,
    grid: &FrequencyGrid,
    od_scale: f64,
) -> Result<ComplexSpectrum> {
    if !(od_scale > 0.0) {
        return Err(AfcError::domain(format!("od_scale must be positive, got {od_scale}")));
    }
    if classes
        .iter()
        .any(|c| !(c.sigma_velocity > 0.0) || !(c.population >= 0.0))
    {
        return Err(AfcError::domain("Gaussian classes need sigma > 0 and population >= 0"));
    }
    grid.validate()?;
    Ok(ComplexSpectrum::from_fn(*grid, |f| {
        let mut acc = Complex64::new(0.0, 0.0);
        for l in lines.lines() {
            let g = 0.5 * l.natural_linewidth;
            for c in classes {
                let centre = l.offset + l.doppler_shift(c.centre_velocity, PROBE);
                let sigma = c.sigma_velocity / l.wavelength;
                acc += complex_voigt(f - centre, g, sigma) * (l.strength * c.population);
            }
        }
        acc * od_scale
    }))
}

/// Discrete Hilbert transform `(1/pi) p.v. integral x(y) / (f - y) dy` of
/// uniformly sampled data, using the odd-tap kernel `2 / (pi m)` (zero for
/// even `m`) as a linear, non-periodic convolution.
pub fn hilbert(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let k_len = 2 * n - 1;
    let size = (n + k_len - 1).next_power_of_two();
    let mut kernel = vec![Complex64::new(0.0, 0.0); size];
    for (k, slot) in kernel.iter_mut().take(k_len).enumerate() {
        let m = k as i64 - (n as i64 - 1);
        if m % 2 != 0 {
            *slot = Complex64::new(2.0 / (PI * m as f64), 0.0);
        }
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(size, Complex64::new(0.0, 0.0));
    fft_convolve(&mut buf, kernel);
    buf[n - 1..2 * n - 1].iter().map(|c| c.re).collect()
}

/// In-place linear convolution `a <- a * b`; both must be zero-padded to the same length.
fn fft_convolve(a: &mut [Complex64], mut b: Vec<Complex64>) {
    let size = a.len();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    fwd.process(a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y / size as f64;
    }
    inv.process(a);
}

/// Relative L2 mismatch between `Im D` and the Hilbert transform of `Re D`.
pub fn kramers_kronig_residual(spec: &ComplexSpectrum) -> f64 {
    let h = hilbert(&spec.re_depth());
    let (mut num, mut den) = (0.0, 0.0);
    for (d, hk) in spec.depth.iter().zip(&h) {
        num += (d.im - hk).powi(2);
        den += d.im * d.im;
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}
