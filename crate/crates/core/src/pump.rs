//! Two-stage optical pumping: empty F=4, then refill chosen velocity classes.
//!
//! Populations are densities per (m/s) on a uniform velocity grid, so
//! `sum(pop) * dv` is a population. The velocity-selective stage uses a
//! single-rate saturation law per bin, `1 - exp(-R(v) t)`, with a Lorentzian
//! pump profile per tone.

use std::fmt::Write as _;

use errorfunctions::RealErrorFunctions;
use rayon::prelude::*;

use crate::atomic::{AtomSpecies, Beam, LineLabel, LineTable};
use crate::error::{AfcError, Result};

/// Fraction of the thermal norm allowed to fall outside the velocity grid.
pub const MAX_NORM_LOSS: f64 = 1e-4;

/// Ground-state degeneracy split (2F+1) between F=3 and F=4.
pub const F3_FRACTION: f64 = 7.0 / 16.0;
pub const F4_FRACTION: f64 = 9.0 / 16.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityGridSpec {
    /// m/s; the grid spans [-half_span, +half_span].
    pub half_span: f64,
    pub bins: usize,
}

impl Default for VelocityGridSpec {
    fn default() -> Self {
        VelocityGridSpec {
            half_span: 1200.0,
            bins: 1 << 14,
        }
    }
}

impl VelocityGridSpec {
    pub fn step(&self) -> f64 {
        2.0 * self.half_span / (self.bins - 1) as f64
    }

    fn validate(&self) -> Result<()> {
        if !(self.half_span > 0.0) || self.bins < 3 {
            return Err(AfcError::domain(format!(
                "velocity grid needs half_span > 0 and >= 3 bins, got {} m/s, {} bins",
                self.half_span, self.bins
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityDistribution {
    /// m/s, first grid point.
    pub v_start: f64,
    /// m/s, grid step.
    pub dv: f64,
    pub pop_f3: Vec<f64>,
    pub pop_f4: Vec<f64>,
    /// Set at construction and carried through every pumping stage.
    pub total_population: f64,
}

impl VelocityDistribution {
    pub fn len(&self) -> usize {
        self.pop_f3.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pop_f3.is_empty()
    }

    pub fn velocity(&self, i: usize) -> f64 {
        self.v_start + i as f64 * self.dv
    }

    pub fn velocities(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.velocity(i))
    }

    pub fn v_end(&self) -> f64 {
        self.velocity(self.len() - 1)
    }

    pub fn population_f3(&self) -> f64 {
        self.pop_f3.iter().sum::<f64>() * self.dv
    }

    pub fn population_f4(&self) -> f64 {
        self.pop_f4.iter().sum::<f64>() * self.dv
    }

    /// Population currently on the grid, to compare with `total_population`.
    pub fn summed_population(&self) -> f64 {
        self.pop_f3.iter().zip(&self.pop_f4).map(|(a, b)| a + b).sum::<f64>() * self.dv
    }

    /// Tabular text: `velocity_m_s pop_f3 pop_f4`.
    pub fn to_table(&self) -> String {
        let mut out = String::with_capacity(self.len() * 64);
        out.push_str("# velocity_m_s pop_f3 pop_f4\n");
        let _ = writeln!(out, "# total_population {:.17e}", self.total_population);
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{:.10e} {:.17e} {:.17e}",
                self.velocity(i),
                self.pop_f3[i],
                self.pop_f4[i]
            );
        }
        out
    }
}

/// Maxwell-Boltzmann velocity distribution along the probe axis, normalised to 1.
pub fn thermal_populations(species: &AtomSpecies, grid: &VelocityGridSpec) -> Result<VelocityDistribution> {
    species.validate()?;
    grid.validate()?;
    let sigma = species.thermal_sigma();
    // two-sided tail mass beyond the grid edge
    let lost = RealErrorFunctions::erfc(grid.half_span / (sigma * std::f64::consts::SQRT_2));
    if lost > MAX_NORM_LOSS {
        return Err(AfcError::domain(format!(
            "velocity grid +/-{} m/s loses {lost:.2e} of the thermal norm (sigma = {sigma:.1} m/s); widen it",
            grid.half_span
        )));
    }
    let dv = grid.step();
    let v_start = -grid.half_span;
    let raw: Vec<f64> = (0..grid.bins)
        .map(|i| {
            let v = v_start + i as f64 * dv;
            (-0.5 * (v / sigma).powi(2)).exp()
        })
        .collect();
    let norm = raw.iter().sum::<f64>() * dv;
    let pop_f3 = raw.iter().map(|x| F3_FRACTION * x / norm).collect();
    let pop_f4 = raw.iter().map(|x| F4_FRACTION * x / norm).collect();
    Ok(VelocityDistribution {
        v_start,
        dv,
        pop_f3,
        pop_f4,
        total_population: 1.0,
    })
}

/// Moves a fraction `efficiency` of F=4 into F=3, uniformly in velocity.
pub fn apply_prep_pump(dist: &VelocityDistribution, efficiency: f64) -> Result<VelocityDistribution> {
    if !(0.0..=1.0).contains(&efficiency) {
        return Err(AfcError::domain(format!(
            "prep efficiency must lie in [0, 1], got {efficiency}"
        )));
    }
    let mut out = dist.clone();
    for (p3, p4) in out.pop_f3.iter_mut().zip(out.pop_f4.iter_mut()) {
        let moved = *p4 * efficiency;
        *p4 -= moved;
        *p3 += moved;
    }
    Ok(out)
}

/// One spectral component of the velocity-selective pump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpTone {
    /// Hz, relative to the addressed line at rest.
    pub detuning: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PumpConfig {
    /// Hz, on the addressed pump line.
    pub carrier_detuning: f64,
    /// Hz, pump-frame modulation frequencies.
    pub modulation_freqs: Vec<f64>,
    /// `[carrier, m1-, m1+, m2-, m2+, ...]`, relative pump rate per tone.
    pub tone_weights: Vec<f64>,
    /// Hz, FWHM: laser linewidth plus power broadening.
    pub effective_linewidth: f64,
    /// 1/s, peak rate of a unit-weight tone on resonance.
    pub pump_rate: f64,
    /// s
    pub duration: f64,
    pub addressed_line: LineLabel,
    pub beam: Beam,
}

impl PumpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.effective_linewidth > 0.0) {
            return Err(AfcError::domain("pump effective_linewidth must be positive"));
        }
        if !(self.duration >= 0.0) || !(self.pump_rate >= 0.0) {
            return Err(AfcError::domain("pump duration and rate must be non-negative"));
        }
        if self.tone_weights.len() != 1 + 2 * self.modulation_freqs.len() {
            return Err(AfcError::domain(format!(
                "expected {} tone weights (carrier + 2 per modulation frequency), got {}",
                1 + 2 * self.modulation_freqs.len(),
                self.tone_weights.len()
            )));
        }
        if self.tone_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(AfcError::domain("tone weights must be non-negative"));
        }
        Ok(())
    }

    pub fn tones(&self) -> Vec<PumpTone> {
        let mut tones = vec![PumpTone {
            detuning: self.carrier_detuning,
            weight: self.tone_weights[0],
        }];
        for (k, f) in self.modulation_freqs.iter().enumerate() {
            tones.push(PumpTone {
                detuning: self.carrier_detuning - f,
                weight: self.tone_weights[1 + 2 * k],
            });
            tones.push(PumpTone {
                detuning: self.carrier_detuning + f,
                weight: self.tone_weights[2 + 2 * k],
            });
        }
        tones
    }
}

/// Transfers F=3 population back to F=4 around each tone's resonant velocity class.
pub fn apply_vsp(dist: &VelocityDistribution, cfg: &PumpConfig, lines: &LineTable) -> Result<VelocityDistribution> {
    cfg.validate()?;
    let line = lines.get(cfg.addressed_line).ok_or_else(|| {
        AfcError::domain(format!(
            "addressed pump line {} is not in the {} table",
            cfg.addressed_line, lines.manifold
        ))
    })?;
    let tones: Vec<PumpTone> = cfg.tones().into_iter().filter(|t| t.weight > 0.0).collect();
    for t in &tones {
        let v = line.resonant_velocity(t.detuning, cfg.beam);
        if v < dist.v_start || v > dist.v_end() {
            return Err(AfcError::domain(format!(
                "pump tone at {:.4e} Hz is resonant with v = {v:.1} m/s, outside the velocity grid",
                t.detuning
            )));
        }
    }
    let half = 0.5 * cfg.effective_linewidth;
    let exposure = cfg.pump_rate * cfg.duration;
    let mut out = dist.clone();
    let start = dist.v_start;
    let dv = dist.dv;
    out.pop_f3
        .par_iter_mut()
        .zip(out.pop_f4.par_iter_mut())
        .enumerate()
        .for_each(|(i, (p3, p4))| {
            let v = start + i as f64 * dv;
            let shift = line.doppler_shift(v, cfg.beam);
            let profile: f64 = tones
                .iter()
                .map(|t| {
                    let x = (t.detuning - shift) / half;
                    t.weight / (1.0 + x * x)
                })
                .sum();
            let moved = *p3 * -(-exposure * profile).exp_m1();
            *p3 -= moved;
            *p4 += moved;
        });
    Ok(out)
}
