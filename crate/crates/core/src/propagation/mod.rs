//! Linear propagation of probe envelopes through a complex optical-depth spectrum.
//!
//! An envelope `E(t)` has spectrum `E(f) = integral E(t) exp(+i 2 pi f t) dt`,
//! where `f` is measured from the envelope's carrier in the spectrum frame.
//! The medium multiplies it by `H(f) = exp(-D(carrier + f) / 2)`.

mod oracle;

pub use oracle::{dipole_sum_echo, dipole_sum_field, sample_ensemble, sample_ensemble_random, AtomEnsembleSample};

use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{AfcError, Result};
use crate::spectral::ComplexSpectrum;

/// Excited-state lifetime of the caesium D2 upper level (s).
pub const CS_D2_LIFETIME: f64 = 30.4e-9;
/// Fraction of output energy allowed beyond the end of the trace.
pub const MAX_WRAP_FRACTION: f64 = 1e-3;
/// Transform length as a multiple of the trace length.
pub const PAD_FACTOR: usize = 4;
/// Fraction of pulse energy whose spectrum must fall inside the spectrum grid.
pub const BANDWIDTH_ENERGY_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct PulseEnvelope {
    /// s, time of the first sample.
    pub t0: f64,
    /// s
    pub dt: f64,
    pub samples: Vec<Complex64>,
    /// Hz, envelope carrier in the spectrum frame.
    pub carrier_detuning: f64,
}

impl PulseEnvelope {
    pub fn zeros(spec: &TraceSpec, carrier_detuning: f64) -> Result<Self> {
        spec.validate()?;
        Ok(PulseEnvelope {
            t0: spec.t_start,
            dt: spec.dt,
            samples: vec![Complex64::new(0.0, 0.0); spec.count()],
            carrier_detuning,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.norm_sqr()).collect()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() * self.dt
    }

    /// Energy in `[start, end]`.
    pub fn energy_between(&self, start: f64, end: f64) -> f64 {
        (0..self.len())
            .filter(|&i| (start..=end).contains(&self.time(i)))
            .map(|i| self.samples[i].norm_sqr())
            .sum::<f64>()
            * self.dt
    }

    /// Energy-weighted mean time.
    pub fn centroid(&self) -> f64 {
        let e: f64 = self.samples.iter().map(|s| s.norm_sqr()).sum();
        (0..self.len())
            .map(|i| self.time(i) * self.samples[i].norm_sqr())
            .sum::<f64>()
            / e
    }

    /// Time of the intensity maximum in `[start, end]`, refined by a parabola through
    /// the three samples around it.
    pub fn peak_time_between(&self, start: f64, end: f64) -> Option<f64> {
        let inten = self.intensity();
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| (start..=end).contains(&self.time(i)))
            .collect();
        let &k = idx.iter().max_by(|&&a, &&b| inten[a].total_cmp(&inten[b]))?;
        if k == 0 || k + 1 >= self.len() {
            return Some(self.time(k));
        }
        let (a, b, c) = (inten[k - 1], inten[k], inten[k + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom < 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
        Some(self.time(k) + shift.clamp(-0.5, 0.5) * self.dt)
    }

    pub fn scaled(&self, factor: f64) -> PulseEnvelope {
        PulseEnvelope {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            ..self.clone()
        }
    }

    /// Sample-wise sum; both envelopes must share the time grid and carrier.
    pub fn add(&self, other: &PulseEnvelope) -> Result<PulseEnvelope> {
        if self.t0 != other.t0
            || self.dt != other.dt
            || self.len() != other.len()
            || self.carrier_detuning != other.carrier_detuning
        {
            return Err(AfcError::domain(
                "cannot add envelopes on different time grids or carriers",
            ));
        }
        Ok(PulseEnvelope {
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }

    /// Tabular text: `time_s intensity re_field im_field`.
    pub fn to_table(&self) -> String {
        let mut out = String::with_capacity(self.len() * 80);
        out.push_str("# time_s intensity re_field im_field\n");
        let _ = writeln!(out, "# carrier_detuning_hz {:.10e}", self.carrier_detuning);
        for (i, s) in self.samples.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:.12e} {:.17e} {:.17e} {:.17e}",
                self.time(i),
                s.norm_sqr(),
                s.re,
                s.im
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSpec {
    /// s
    pub t_start: f64,
    /// s
    pub dt: f64,
    /// s
    pub span: f64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            t_start: -10e-9,
            dt: 10e-12,
            span: 80e-9,
        }
    }
}

impl TraceSpec {
    pub fn count(&self) -> usize {
        (self.span / self.dt).round() as usize
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + (self.count() - 1) as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.span > 0.0) || self.count() < 2 || !self.t_start.is_finite() {
            return Err(AfcError::domain(format!(
                "trace needs dt > 0 and at least 2 samples, got dt {} s, span {} s",
                self.dt, self.span
            )));
        }
        Ok(())
    }
}

/// Sum of Gaussian pulses centred at `times` with intensity FWHM `fwhm`. Each
/// pulse has unit energy on the trace before being scaled by its field amplitude.
pub fn make_pulse_train(
    spec: &TraceSpec,
    times: &[f64],
    fwhm: f64,
    amplitudes: &[f64],
    carrier_detuning: f64,
) -> Result<PulseEnvelope> {
    if !(fwhm > 0.0) {
        return Err(AfcError::domain(format!("pulse fwhm must be positive, got {fwhm}")));
    }
    if times.len() != amplitudes.len() || times.is_empty() {
        return Err(AfcError::domain(format!(
            "need one amplitude per pulse time, got {} times and {} amplitudes",
            times.len(),
            amplitudes.len()
        )));
    }
    let mut env = PulseEnvelope::zeros(spec, carrier_detuning)?;
    for &t in times {
        if t < spec.t_start || t > spec.t_end() {
            return Err(AfcError::domain(format!(
                "pulse time {t:.4e} s is outside the trace [{:.4e}, {:.4e}] s",
                spec.t_start,
                spec.t_end()
            )));
        }
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    for w in sorted.windows(2) {
        // two unit-energy Gaussians overlap by exp(-ln2 (sep / fwhm)^2)
        if w[1] - w[0] < fwhm {
            log::warn!(
                "pulses at {:.3e} s and {:.3e} s overlap by more than 50% (fwhm {fwhm:.3e} s)",
                w[0],
                w[1]
            );
        }
    }
    let a = 2.0 * std::f64::consts::LN_2 / (fwhm * fwhm);
    for (&tc, &amp) in times.iter().zip(amplitudes) {
        let shape: Vec<f64> = (0..env.len())
            .map(|i| {
                let x = env.time(i) - tc;
                (-a * x * x).exp()
            })
            .collect();
        let norm = (shape.iter().map(|s| s * s).sum::<f64>() * spec.dt).sqrt();
        for (s, v) in env.samples.iter_mut().zip(&shape) {
            *s += amp * v / norm;
        }
    }
    Ok(env)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PropagationOptions {
    /// s; when set, fields after the input centroid are multiplied by
    /// `exp(-(t - t_c) / (2 T1))`.
    pub excited_decay: Option<f64>,
}

pub fn propagate(pulse: &PulseEnvelope, spectrum: &ComplexSpectrum) -> Result<PulseEnvelope> {
    propagate_with(pulse, spectrum, &PropagationOptions::default())
}

pub fn propagate_with(
    pulse: &PulseEnvelope,
    spectrum: &ComplexSpectrum,
    opts: &PropagationOptions,
) -> Result<PulseEnvelope> {
    let n = pulse.len();
    if n < 2 || !(pulse.dt > 0.0) {
        return Err(AfcError::domain("pulse needs dt > 0 and at least 2 samples"));
    }
    let input_energy: f64 = pulse.samples.iter().map(|s| s.norm_sqr()).sum();
    if !(input_energy > 0.0) || !input_energy.is_finite() {
        return Err(AfcError::domain("pulse energy must be finite and positive"));
    }
    // Generous zero padding keeps slowly decaying (narrow-line) responses from
    // folding back onto the trace.
    let size = (PAD_FACTOR * n).next_power_of_two();
    let df = 1.0 / (size as f64 * pulse.dt);
    let freq = |k: usize| {
        let k = if k < size / 2 { k as f64 } else { k as f64 - size as f64 };
        k * df
    };

    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut buf = pulse.samples.clone();
    buf.resize(size, Complex64::new(0.0, 0.0));
    inv.process(&mut buf);

    check_bandwidth(&buf, &freq, pulse.carrier_detuning, spectrum)?;

    for (k, b) in buf.iter_mut().enumerate() {
        let d = spectrum.interpolate(pulse.carrier_detuning + freq(k));
        *b *= (-0.5 * d).exp() / size as f64;
    }
    fwd.process(&mut buf);

    let total: f64 = buf.iter().map(|s| s.norm_sqr()).sum();
    let beyond: f64 = buf[n..].iter().map(|s| s.norm_sqr()).sum();
    if total > 0.0 && beyond / total > MAX_WRAP_FRACTION {
        return Err(AfcError::TraceTooShort {
            fraction: beyond / total,
        });
    }
    buf.truncate(n);
    if let Some(t1) = opts.excited_decay {
        if !(t1 > 0.0) {
            return Err(AfcError::domain("excited-state lifetime must be positive"));
        }
        let tc = pulse.centroid();
        for (i, s) in buf.iter_mut().enumerate() {
            let t = pulse.time(i) - tc;
            if t > 0.0 {
                *s *= (-t / (2.0 * t1)).exp();
            }
        }
    }
    Ok(PulseEnvelope {
        samples: buf,
        ..pulse.clone()
    })
}

fn check_bandwidth(
    spec: &[Complex64],
    freq: &impl Fn(usize) -> f64,
    carrier: f64,
    spectrum: &ComplexSpectrum,
) -> Result<()> {
    let mut bins: Vec<(f64, f64)> = spec
        .iter()
        .enumerate()
        .map(|(k, s)| (freq(k).abs(), s.norm_sqr()))
        .collect();
    bins.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = bins.iter().map(|b| b.1).sum();
    let mut acc = 0.0;
    let mut half_band = 0.0;
    for (f, e) in bins {
        acc += e;
        half_band = f;
        if acc >= BANDWIDTH_ENERGY_FRACTION * total {
            break;
        }
    }
    let g = &spectrum.grid;
    if carrier - half_band < g.start - 0.5 * g.step || carrier + half_band > g.end() + 0.5 * g.step {
        return Err(AfcError::domain(format!(
            "pulse bandwidth [{:.4e}, {:.4e}] Hz ({}% energy) exceeds the spectrum grid [{:.4e}, {:.4e}] Hz",
            carrier - half_band,
            carrier + half_band,
            BANDWIDTH_ENERGY_FRACTION * 100.0,
            g.start,
            g.end()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoReport {
    pub trace: PulseEnvelope,
    /// Output energy in a window of the same width around the reference peak,
    /// relative to the reference energy.
    pub transmitted_fraction: f64,
    /// s, intensity maximum inside the echo window.
    pub echo_time: f64,
    pub efficiency: f64,
    /// s
    pub window_centre: f64,
    /// s
    pub window_width: f64,
}

impl EchoReport {
    /// `key = value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "efficiency = {:.9e}", self.efficiency);
        let _ = writeln!(out, "echo_time_s = {:.9e}", self.echo_time);
        let _ = writeln!(out, "transmitted_fraction = {:.9e}", self.transmitted_fraction);
        let _ = writeln!(out, "window_centre_s = {:.9e}", self.window_centre);
        let _ = writeln!(out, "window_width_s = {:.9e}", self.window_width);
        out
    }
}

/// Energy of `trace` inside the window over the total energy of `reference`.
pub fn echo_efficiency(
    trace: &PulseEnvelope,
    reference: &PulseEnvelope,
    window_centre: f64,
    window_width: f64,
) -> Result<EchoReport> {
    if !(window_width > 0.0) {
        return Err(AfcError::domain(format!(
            "echo window width must be positive, got {window_width}"
        )));
    }
    let (start, end) = (window_centre - 0.5 * window_width, window_centre + 0.5 * window_width);
    if start < trace.t0 || end > trace.t_end() {
        return Err(AfcError::domain(format!(
            "echo window [{start:.4e}, {end:.4e}] s lies outside the trace [{:.4e}, {:.4e}] s",
            trace.t0,
            trace.t_end()
        )));
    }
    let echo_time = trace
        .peak_time_between(start, end)
        .ok_or_else(|| AfcError::domain("echo window contains no samples"))?;
    let reference_energy = reference.energy();
    if !(reference_energy > 0.0) {
        return Err(AfcError::domain("reference pulse has no energy"));
    }
    let efficiency = trace.energy_between(start, end) / reference_energy;
    let ref_peak = reference
        .peak_time_between(reference.t0, reference.t_end())
        .unwrap_or(reference.t0);
    let transmitted_fraction =
        trace.energy_between(ref_peak - 0.5 * window_width, ref_peak + 0.5 * window_width) / reference_energy;
    if efficiency > 1.0 + 1e-12 {
        return Err(AfcError::domain(format!(
            "echo window holds {efficiency:.4} of the reference energy; the reference must not be weaker than the trace"
        )));
    }
    Ok(EchoReport {
        trace: trace.clone(),
        transmitted_fraction: transmitted_fraction.min(1.0),
        echo_time,
        efficiency: efficiency.min(1.0),
        window_centre,
        window_width,
    })
}

#[cfg(test)]
mod tests;
