//! Scenario files: a TOML description of one pump/probe run, its validation, the
//! pipeline that executes it and the parameter sweeps built on top of it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atomic::{d1_line_table, d2_line_table, AtomSpecies, Beam, LineLabel, LineTable, TransitionLine};
use crate::error::{AfcError, Result, StageExt};
use crate::io::{provenance_header, resolve_output_dir, write_atomic, write_table, VERSION};
use crate::propagation::{
    dipole_sum_echo, echo_efficiency, make_pulse_train, propagate_with, sample_ensemble_random, EchoReport,
    PropagationOptions, PulseEnvelope, TraceSpec,
};
use crate::pump::{
    apply_prep_pump, apply_vsp, thermal_populations, PumpConfig, VelocityDistribution, VelocityGridSpec,
};
use crate::spectral::{
    complex_depth_spectrum_with, fit_comb, fit_features, CombFit, CombParams, ComplexSpectrum, FeatureFit, FitWindow,
    FrequencyGrid, SpectrumMethod,
};
use crate::theory::{analytic_efficiency, echo_time, TheoryInputs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub scenario: ScenarioMeta,
    pub species: SpeciesSection,
    #[serde(default)]
    pub grids: GridSection,
    #[serde(default)]
    pub prep: PrepSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vsp: Option<VspSection>,
    pub absorption: AbsorptionSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheorySection>,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMeta {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSection {
    #[serde(default = "default_species")]
    pub name: String,
    pub temperature_k: f64,
}

fn default_species() -> String {
    "Cs-133".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub velocity_half_span_m_per_s: f64,
    pub velocity_bins: usize,
    pub frequency_centre_hz: f64,
    pub frequency_half_span_hz: f64,
    pub frequency_points: usize,
    pub trace_start_s: f64,
    pub trace_step_s: f64,
    pub trace_span_s: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let v = VelocityGridSpec::default();
        let f = FrequencyGrid::default();
        let t = TraceSpec::default();
        GridSection {
            velocity_half_span_m_per_s: v.half_span,
            velocity_bins: v.bins,
            frequency_centre_hz: f.start + 0.5 * (f.count - 1) as f64 * f.step,
            frequency_half_span_hz: 0.5 * (f.count - 1) as f64 * f.step,
            frequency_points: f.count,
            trace_start_s: t.t_start,
            trace_step_s: t.dt,
            trace_span_s: t.span,
        }
    }
}

impl GridSection {
    pub fn velocity(&self) -> VelocityGridSpec {
        VelocityGridSpec {
            half_span: self.velocity_half_span_m_per_s,
            bins: self.velocity_bins,
        }
    }

    pub fn frequency(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::centred(
            self.frequency_centre_hz,
            self.frequency_half_span_hz,
            self.frequency_points,
        )
    }

    pub fn trace(&self) -> TraceSpec {
        TraceSpec {
            t_start: self.trace_start_s,
            dt: self.trace_step_s,
            span: self.trace_span_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepSection {
    pub efficiency: f64,
}

impl Default for PrepSection {
    fn default() -> Self {
        PrepSection { efficiency: 1.0 }
    }
}

/// Frame in which the comb spacing is quoted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpacingFrame {
    /// Spacing of the prepared classes as seen by the probe.
    #[default]
    Probe,
    /// Raw modulation frequency on the pump laser.
    Pump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VspSection {
    pub addressed_line: String,
    #[serde(default)]
    pub carrier_detuning_hz: f64,
    pub spacing_hz: f64,
    #[serde(default)]
    pub spacing_frame: SpacingFrame,
    /// Harmonics of the spacing driven as modulation frequencies.
    #[serde(default)]
    pub sidebands: Vec<u32>,
    /// `[carrier, k1-, k1+, k2-, k2+, ...]`
    pub tone_weights: Vec<f64>,
    pub effective_linewidth_hz: f64,
    pub pump_rate_per_s: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    #[default]
    Convolution,
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsorptionSection {
    pub od_scale_hz: f64,
    /// Probe lines that absorb; all lines of the table when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lines: Option<Vec<String>>,
    #[serde(default)]
    pub method: MethodName,
}

/// What the echo energy is normalised to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// The input pulse itself.
    #[default]
    Input,
    /// The input transmitted through the medium before velocity-selective pumping.
    PrepOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    /// Hz, in the spectrum frame.
    pub carrier_detuning_hz: f64,
    pub pulse_times_s: Vec<f64>,
    pub pulse_fwhm_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excited_decay_s: Option<f64>,
    #[serde(default)]
    pub reference: Reference,
}

impl ProbeSection {
    pub fn amplitudes(&self) -> Vec<f64> {
        self.amplitudes
            .clone()
            .unwrap_or_else(|| vec![1.0; self.pulse_times_s.len()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombFitSection {
    pub window_lo_hz: f64,
    pub window_hi_hz: f64,
    pub gamma_guess_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFitSection {
    pub window_lo_hz: f64,
    pub window_hi_hz: f64,
    pub fwhm_guess_hz: f64,
    #[serde(default)]
    pub shift_guess_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comb_fit: Option<CombFitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_fit: Option<FeatureFitSection>,
    #[serde(default = "default_echo_window")]
    pub echo_window_width_s: f64,
    /// Sample this many atoms for a dipole-sum trace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_atoms: Option<usize>,
}

fn default_echo_window() -> f64 {
    5e-9
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            comb_fit: None,
            feature_fit: None,
            echo_window_width_s: default_echo_window(),
            oracle_atoms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    pub d: f64,
    pub d0: f64,
    pub finesse: f64,
    pub delta_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
}

struct Issue {
    section: &'static str,
    key: &'static str,
    message: String,
}

fn issue(section: &'static str, key: &'static str, message: impl Into<String>) -> Issue {
    Issue {
        section,
        key,
        message: message.into(),
    }
}

/// 1-based line of `key` inside `[section]`, falling back to the section header.
fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(n + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(n + 1);
                }
            }
        }
    }
    header
}

fn line_of_offset(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

pub fn scenario_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn is_caesium(name: &str) -> bool {
    matches!(
        name.to_ascii_lowercase().as_str(),
        "cs" | "cs133" | "cs-133" | "caesium" | "cesium"
    )
}

impl Scenario {
    /// Parses and validates; `origin` prefixes every diagnostic.
    pub fn parse(text: &str, origin: &str) -> Result<Scenario> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_of_offset(text, span.start);
                    AfcError::config(format!("{origin}:{line}:{col}: {msg}"))
                }
                None => AfcError::config(format!("{origin}: {msg}")),
            }
        })?;
        let issues = scenario.issues();
        if !issues.is_empty() {
            let lines: Vec<String> = issues
                .iter()
                .map(|i| {
                    let at = key_line(text, i.section, i.key).map_or(String::new(), |n| format!("{n}:"));
                    format!("{origin}:{at} {}.{}: {}", i.section, i.key, i.message)
                })
                .collect();
            return Err(AfcError::config(lines.join("\n")));
        }
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<(Scenario, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| AfcError::io(path, e))?;
        let scenario = Scenario::parse(&text, &path.display().to_string())?;
        Ok((scenario, scenario_hash(&text)))
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            return Ok(());
        }
        let lines: Vec<String> = issues
            .iter()
            .map(|i| format!("{}.{}: {}", i.section, i.key, i.message))
            .collect();
        Err(AfcError::config(lines.join("\n")))
    }

    fn issues(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        if self.scenario.name.trim().is_empty() {
            out.push(issue("scenario", "name", "must not be empty"));
        }
        if !is_caesium(&self.species.name) {
            out.push(issue(
                "species",
                "name",
                format!("unsupported species '{}', only Cs-133 has line data", self.species.name),
            ));
        }
        if !(self.species.temperature_k > 0.0) {
            out.push(issue("species", "temperature_k", "must be positive"));
        }
        let g = &self.grids;
        if !(g.velocity_half_span_m_per_s > 0.0) {
            out.push(issue("grids", "velocity_half_span_m_per_s", "must be positive"));
        }
        if g.velocity_bins < 16 {
            out.push(issue("grids", "velocity_bins", "need at least 16 bins"));
        }
        if !(g.frequency_half_span_hz > 0.0) || !g.frequency_centre_hz.is_finite() {
            out.push(issue(
                "grids",
                "frequency_half_span_hz",
                "must be positive with a finite centre",
            ));
        }
        if g.frequency_points < 16 {
            out.push(issue("grids", "frequency_points", "need at least 16 points"));
        }
        if !(g.trace_step_s > 0.0) {
            out.push(issue("grids", "trace_step_s", "must be positive"));
        }
        if !(g.trace_span_s >= 2.0 * g.trace_step_s) {
            out.push(issue("grids", "trace_span_s", "must hold at least two samples"));
        }
        if !(0.0..=1.0).contains(&self.prep.efficiency) {
            out.push(issue("prep", "efficiency", "must lie in [0, 1]"));
        }
        let species = AtomSpecies::caesium(self.species.temperature_k.max(1.0)).ok();
        if let Some(v) = &self.vsp {
            match v.addressed_line.parse::<LineLabel>() {
                Ok(label) => {
                    let known = species
                        .as_ref()
                        .and_then(|s| d1_line_table(s).ok())
                        .is_some_and(|t| t.get(label).is_some());
                    if !known {
                        out.push(issue("vsp", "addressed_line", format!("{label} is not a D1 line")));
                    }
                }
                Err(e) => out.push(issue("vsp", "addressed_line", e.to_string())),
            }
            if !(v.spacing_hz > 0.0) {
                out.push(issue("vsp", "spacing_hz", "must be positive"));
            }
            if v.sidebands.contains(&0) {
                out.push(issue("vsp", "sidebands", "harmonic orders start at 1"));
            }
            if v.tone_weights.len() != 1 + 2 * v.sidebands.len() {
                out.push(issue(
                    "vsp",
                    "tone_weights",
                    format!(
                        "need {} weights (carrier + 2 per sideband), got {}",
                        1 + 2 * v.sidebands.len(),
                        v.tone_weights.len()
                    ),
                ));
            }
            if v.tone_weights.iter().any(|w| !(*w >= 0.0)) {
                out.push(issue("vsp", "tone_weights", "weights must be non-negative"));
            }
            if !(v.effective_linewidth_hz > 0.0) {
                out.push(issue("vsp", "effective_linewidth_hz", "must be positive"));
            }
            if !(v.pump_rate_per_s >= 0.0) {
                out.push(issue("vsp", "pump_rate_per_s", "must be non-negative"));
            }
            if !(v.duration_s >= 0.0) {
                out.push(issue("vsp", "duration_s", "must be non-negative"));
            }
        }
        if !(self.absorption.od_scale_hz > 0.0) {
            out.push(issue("absorption", "od_scale_hz", "must be positive"));
        }
        if let Some(names) = &self.absorption.lines {
            let table = species.as_ref().and_then(|s| d2_line_table(s).ok());
            if names.is_empty() {
                out.push(issue("absorption", "lines", "list at least one line or omit the key"));
            }
            for n in names {
                match n.parse::<LineLabel>() {
                    Ok(l) if table.as_ref().is_some_and(|t| t.get(l).is_some()) => {}
                    Ok(l) => out.push(issue("absorption", "lines", format!("{l} is not a D2 line"))),
                    Err(e) => out.push(issue("absorption", "lines", e.to_string())),
                }
            }
        }
        let freq = g.frequency().ok();
        let in_grid = |f: f64| freq.is_some_and(|grid| grid.contains(f));
        let trace = g.trace();
        if let Some(p) = &self.probe {
            if !in_grid(p.carrier_detuning_hz) {
                out.push(issue(
                    "probe",
                    "carrier_detuning_hz",
                    "must lie inside the frequency grid",
                ));
            }
            if p.pulse_times_s.is_empty() {
                out.push(issue("probe", "pulse_times_s", "need at least one pulse"));
            }
            if p.pulse_times_s
                .iter()
                .any(|t| *t < trace.t_start || *t > trace.t_start + trace.span)
            {
                out.push(issue("probe", "pulse_times_s", "pulses must sit inside the trace"));
            }
            if !(p.pulse_fwhm_s > 0.0) {
                out.push(issue("probe", "pulse_fwhm_s", "must be positive"));
            }
            if let Some(a) = &p.amplitudes {
                if a.len() != p.pulse_times_s.len() {
                    out.push(issue("probe", "amplitudes", "need one amplitude per pulse"));
                }
            }
            if p.excited_decay_s.is_some_and(|t| !(t > 0.0)) {
                out.push(issue("probe", "excited_decay_s", "must be positive"));
            }
            if let Some(tau) = self.echo_delay() {
                let w = self.analysis.echo_window_width_s;
                if !(w > 0.0) {
                    out.push(issue("analysis", "echo_window_width_s", "must be positive"));
                } else if p
                    .pulse_times_s
                    .iter()
                    .any(|t| t + tau - 0.5 * w < trace.t_start || t + tau + 0.5 * w > trace.t_start + trace.span)
                {
                    out.push(issue(
                        "analysis",
                        "echo_window_width_s",
                        "echo windows run past the trace; extend trace_span_s",
                    ));
                }
            }
        }
        let windows = [
            (
                "analysis.comb_fit",
                self.analysis
                    .comb_fit
                    .as_ref()
                    .map(|c| (c.window_lo_hz, c.window_hi_hz)),
            ),
            (
                "analysis.feature_fit",
                self.analysis
                    .feature_fit
                    .as_ref()
                    .map(|c| (c.window_lo_hz, c.window_hi_hz)),
            ),
        ];
        for (section, window) in windows {
            if let Some((lo, hi)) = window {
                if !(lo < hi) || !in_grid(lo) || !in_grid(hi) {
                    out.push(issue(
                        section,
                        "window_lo_hz",
                        "window must be ordered and inside the frequency grid",
                    ));
                }
            }
        }
        if let Some(c) = &self.analysis.comb_fit {
            if !(c.gamma_guess_hz > 0.0) {
                out.push(issue("analysis.comb_fit", "gamma_guess_hz", "must be positive"));
            }
            if self.vsp.is_none() {
                out.push(issue(
                    "analysis.comb_fit",
                    "window_lo_hz",
                    "a comb fit needs a [vsp] section for the spacing",
                ));
            }
        }
        if let Some(c) = &self.analysis.feature_fit {
            if !(c.fwhm_guess_hz > 0.0) {
                out.push(issue("analysis.feature_fit", "fwhm_guess_hz", "must be positive"));
            }
        }
        if self.analysis.oracle_atoms == Some(0) {
            out.push(issue("analysis", "oracle_atoms", "must be at least 1"));
        }
        if self.analysis.oracle_atoms.is_some() && self.probe.is_none() {
            out.push(issue(
                "analysis",
                "oracle_atoms",
                "needs a [probe] section for the time grid",
            ));
        }
        if let Some(t) = &self.theory {
            if TheoryInputs::new(t.d, t.d0, t.finesse, t.delta_hz).is_err() {
                out.push(issue("theory", "d", "need d >= 0, d0 >= 0, finesse > 0, delta_hz > 0"));
            }
        }
        if self.output.directory.as_os_str().is_empty() {
            out.push(issue("output", "directory", "must not be empty"));
        }
        out
    }

    /// Comb spacing in the probe frame (Hz).
    pub fn probe_spacing(&self) -> Option<f64> {
        let v = self.vsp.as_ref()?;
        Some(match v.spacing_frame {
            SpacingFrame::Probe => v.spacing_hz,
            SpacingFrame::Pump => v.spacing_hz * CS_D1_OVER_D2,
        })
    }

    /// Expected rephasing delay (s) of the prepared comb.
    pub fn echo_delay(&self) -> Option<f64> {
        self.probe_spacing().and_then(|d| echo_time(d).ok())
    }

    pub fn output_dir(&self) -> PathBuf {
        resolve_output_dir(&self.output.directory)
    }

    fn pump_config(&self, v: &VspSection) -> Result<PumpConfig> {
        let modulation = match v.spacing_frame {
            SpacingFrame::Pump => v.spacing_hz,
            SpacingFrame::Probe => v.spacing_hz / CS_D1_OVER_D2,
        };
        Ok(PumpConfig {
            carrier_detuning: v.carrier_detuning_hz,
            modulation_freqs: v.sidebands.iter().map(|&k| k as f64 * modulation).collect(),
            tone_weights: v.tone_weights.clone(),
            effective_linewidth: v.effective_linewidth_hz,
            pump_rate: v.pump_rate_per_s,
            duration: v.duration_s,
            addressed_line: v.addressed_line.parse()?,
            beam: Beam::CounterPropagating,
        })
    }

    fn probe_lines(&self, species: &AtomSpecies) -> Result<LineTable> {
        let table = d2_line_table(species)?;
        let Some(names) = &self.absorption.lines else {
            return Ok(table);
        };
        let keep: Vec<LineLabel> = names.iter().map(|n| n.parse()).collect::<Result<_>>()?;
        let lines: Vec<TransitionLine> = table
            .lines()
            .iter()
            .map(|l| TransitionLine {
                strength: if keep.contains(&l.label) { l.strength } else { 0.0 },
                ..*l
            })
            .collect();
        LineTable::new(table.species.clone(), table.manifold.clone(), lines)
    }
}

/// Ratio of the D1 to D2 vacuum wavelengths of caesium.
const CS_D1_OVER_D2: f64 = crate::atomic::CS_D1_WAVELENGTH / crate::atomic::CS_D2_WAVELENGTH;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub hash: String,
    pub distribution: VelocityDistribution,
    pub spectrum: ComplexSpectrum,
    pub comb_fit: Option<CombFit>,
    pub feature_fit: Option<FeatureFit>,
    pub input: Option<PulseEnvelope>,
    pub trace: Option<PulseEnvelope>,
    /// One report per input pulse.
    pub echoes: Vec<EchoReport>,
    pub oracle: Option<(Vec<f64>, Vec<f64>)>,
    /// Total population before and after pumping.
    pub population: (f64, f64),
    pub timings: Vec<(&'static str, f64)>,
}

impl RunOutcome {
    pub fn summary_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("population_initial".to_string(), format!("{:.17e}", self.population.0)),
            ("population_final".to_string(), format!("{:.17e}", self.population.1)),
            ("peak_depth".to_string(), format!("{:.9e}", self.spectrum.peak_re())),
        ];
        if let Some(f) = &self.comb_fit {
            let p = &f.params;
            kv.extend([
                ("comb_delta_hz".into(), format!("{:.9e}", p.delta)),
                ("comb_gamma_hz".into(), format!("{:.9e}", p.gamma)),
                ("comb_d".into(), format!("{:.9e}", p.d)),
                ("comb_d0".into(), format!("{:.9e}", p.d0)),
                ("comb_m_teeth".into(), p.m_teeth.to_string()),
                ("comb_bandwidth_hz".into(), format!("{:.9e}", p.bandwidth)),
                ("comb_finesse".into(), format!("{:.9e}", p.finesse)),
            ]);
            if let Ok(inputs) = TheoryInputs::new(p.d.max(0.0), p.d0.max(0.0), p.finesse, p.delta) {
                kv.push((
                    "analytic_efficiency".into(),
                    format!("{:.9e}", analytic_efficiency(&inputs).eta),
                ));
            }
        }
        if let Some(f) = &self.feature_fit {
            kv.push(("feature_fwhm_hz".into(), format!("{:.9e}", f.fwhm)));
            kv.push(("feature_shift_hz".into(), format!("{:.9e}", f.shift)));
        }
        for (i, e) in self.echoes.iter().enumerate() {
            kv.push((format!("mode{i}_echo_time_s"), format!("{:.9e}", e.echo_time)));
            kv.push((format!("mode{i}_efficiency"), format!("{:.9e}", e.efficiency)));
        }
        kv
    }
}

fn timed<T>(timings: &mut Vec<(&'static str, f64)>, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().stage(stage);
    timings.push((stage, start.elapsed().as_secs_f64()));
    out
}

/// Executes the pipeline without touching the filesystem.
pub fn simulate(s: &Scenario, hash: &str) -> Result<RunOutcome> {
    s.validate()?;
    let mut timings = Vec::new();
    let species = AtomSpecies::caesium(s.species.temperature_k)?;
    let thermal = timed(&mut timings, "thermal", || {
        thermal_populations(&species, &s.grids.velocity())
    })?;
    let prepared = timed(&mut timings, "prep", || apply_prep_pump(&thermal, s.prep.efficiency))?;
    let distribution = match &s.vsp {
        Some(v) => timed(&mut timings, "vsp", || {
            let cfg = s.pump_config(v)?;
            apply_vsp(&prepared, &cfg, &d1_line_table(&species)?)
        })?,
        None => prepared.clone(),
    };
    let method = match s.absorption.method {
        MethodName::Convolution => SpectrumMethod::Convolution,
        MethodName::Quadrature => SpectrumMethod::Quadrature,
    };
    let lines = s.probe_lines(&species)?;
    let grid = s.grids.frequency()?;
    let spectrum = timed(&mut timings, "spectrum", || {
        complex_depth_spectrum_with(&distribution, &lines, &grid, s.absorption.od_scale_hz, method)
    })?;

    let comb_fit = match (&s.analysis.comb_fit, s.probe_spacing()) {
        (Some(c), Some(delta)) => Some(timed(&mut timings, "comb_fit", || {
            fit_comb(
                &spectrum,
                FitWindow::new(c.window_lo_hz, c.window_hi_hz)?,
                &CombParams::guess(delta, c.gamma_guess_hz, 0.0, 0.0),
            )
        })?),
        _ => None,
    };
    let feature_fit = match &s.analysis.feature_fit {
        Some(c) => Some(timed(&mut timings, "feature_fit", || {
            let offsets: Vec<f64> = lines
                .lines()
                .iter()
                .filter(|l| l.strength > 0.0)
                .map(|l| l.offset)
                .collect();
            fit_features(
                &spectrum,
                FitWindow::new(c.window_lo_hz, c.window_hi_hz)?,
                &offsets,
                c.shift_guess_hz,
                c.fwhm_guess_hz,
            )
        })?),
        None => None,
    };

    let mut input = None;
    let mut trace = None;
    let mut echoes = Vec::new();
    let mut oracle = None;
    if let Some(p) = &s.probe {
        let spec = s.grids.trace();
        let amps = p.amplitudes();
        let opts = PropagationOptions {
            excited_decay: p.excited_decay_s,
        };
        let pulse = make_pulse_train(&spec, &p.pulse_times_s, p.pulse_fwhm_s, &amps, p.carrier_detuning_hz)?;
        let out = timed(&mut timings, "propagation", || propagate_with(&pulse, &spectrum, &opts))?;
        if let Some(tau) = s.echo_delay() {
            let reference_medium = match p.reference {
                Reference::Input => None,
                Reference::PrepOnly => Some(timed(&mut timings, "reference", || {
                    complex_depth_spectrum_with(&prepared, &lines, &grid, s.absorption.od_scale_hz, method)
                })?),
            };
            echoes = timed(&mut timings, "echo", || {
                p.pulse_times_s
                    .iter()
                    .zip(&amps)
                    .map(|(&t, &a)| {
                        let single = make_pulse_train(&spec, &[t], p.pulse_fwhm_s, &[a], p.carrier_detuning_hz)?;
                        let reference = match &reference_medium {
                            Some(m) => propagate_with(&single, m, &opts)?,
                            None => single,
                        };
                        echo_efficiency(&out, &reference, t + tau, s.analysis.echo_window_width_s)
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
        }
        if let Some(n) = s.analysis.oracle_atoms {
            oracle = Some(timed(&mut timings, "oracle", || {
                let sample = sample_ensemble_random(&spectrum, n, s.scenario.seed)?;
                let shifted = crate::propagation::AtomEnsembleSample::new(
                    sample.detunings.iter().map(|d| d - p.carrier_detuning_hz).collect(),
                    sample.weights.clone(),
                )?;
                let times: Vec<f64> = (0..out.len())
                    .map(|i| out.time(i) - p.pulse_times_s[0])
                    .filter(|t| *t >= 0.0)
                    .collect();
                let values = dipole_sum_echo(&shifted, &times);
                Ok((times, values))
            })?);
        }
        input = Some(pulse);
        trace = Some(out);
    }
    Ok(RunOutcome {
        hash: hash.to_string(),
        population: (thermal.summed_population(), distribution.summed_population()),
        distribution,
        spectrum,
        comb_fit,
        feature_fit,
        input,
        trace,
        echoes,
        oracle,
        timings,
    })
}

/// Runs the scenario and writes its artifacts; returns the files written.
pub fn run_scenario(s: &Scenario, hash: &str, threads: usize) -> Result<Vec<PathBuf>> {
    let outcome = simulate(s, hash)?;
    write_outcome(s, &outcome, threads)
}

pub fn write_outcome(s: &Scenario, o: &RunOutcome, threads: usize) -> Result<Vec<PathBuf>> {
    let dir = s.output_dir();
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        write_table(&path, &o.hash, &body)?;
        written.push(path);
        Ok(())
    };
    put("distribution.dat", o.distribution.to_table())?;
    put("spectrum.dat", o.spectrum.to_table())?;
    if let Some(t) = &o.trace {
        put("trace.dat", t.to_table())?;
    }
    if o.comb_fit.is_some() || o.feature_fit.is_some() {
        let mut body = String::new();
        if let Some(f) = &o.comb_fit {
            body.push_str("# comb fit\n");
            body.push_str(&f.report());
        }
        if let Some(f) = &o.feature_fit {
            body.push_str("# feature fit\n");
            body.push_str(&feature_report(f));
        }
        put("fit_report.txt", body)?;
    }
    if !o.echoes.is_empty() {
        let mut body = String::new();
        for (i, e) in o.echoes.iter().enumerate() {
            let _ = writeln!(body, "# mode {i}");
            for line in e.to_kv().lines() {
                let _ = writeln!(body, "mode{i}_{line}");
            }
        }
        put("echo_report.txt", body)?;
    }
    if let Some((times, values)) = &o.oracle {
        let mut body = String::from("# time_since_pulse_s dipole_sum_intensity\n");
        for (t, v) in times.iter().zip(values) {
            let _ = writeln!(body, "{t:.12e} {v:.17e}");
        }
        put("oracle.dat", body)?;
    }
    let path = dir.join("summary.toml");
    write_atomic(&path, &summary(s, o, threads)?)?;
    written.push(path);
    Ok(written)
}

fn feature_report(f: &FeatureFit) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "shift_hz = {:.9e}", f.shift);
    let _ = writeln!(out, "fwhm_hz = {:.9e}", f.fwhm);
    let _ = writeln!(out, "background = {:.9e}", f.background);
    let amps: Vec<String> = f.amplitudes.iter().map(|a| format!("{a:.6e}")).collect();
    let _ = writeln!(out, "amplitudes = {}", amps.join(" "));
    let _ = writeln!(out, "residual_rms = {:.9e}", f.residual_rms);
    let _ = writeln!(out, "evaluations = {}", f.evaluations);
    out
}

fn summary(s: &Scenario, o: &RunOutcome, threads: usize) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "[run]");
    let _ = writeln!(out, "scenario = {:?}", s.scenario.name);
    let _ = writeln!(out, "scenario_sha256 = {:?}", o.hash);
    let _ = writeln!(out, "afc_core_version = {VERSION:?}");
    let _ = writeln!(out, "seed = {}", s.scenario.seed);
    let _ = writeln!(out, "threads = {threads}");
    let _ = writeln!(out, "\n[timings_s]");
    for (stage, secs) in &o.timings {
        let _ = writeln!(out, "{stage} = {secs:.6}");
    }
    let _ = writeln!(out, "\n[results]");
    for (k, v) in o.summary_values() {
        let _ = writeln!(out, "{k} = {v}");
    }
    let inputs = toml::to_string(s).map_err(|e| AfcError::config(format!("cannot echo scenario: {e}")))?;
    let _ = writeln!(out, "\n# scenario as parsed");
    for line in inputs.lines() {
        // nest every input table under [inputs]
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let _ = writeln!(out, "[inputs.{name}]");
        } else {
            let _ = writeln!(out, "{line}");
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    DeltaHz,
    PumpDurationS,
    OdScaleHz,
    D,
    Finesse,
}

impl FromStr for SweepParam {
    type Err = AfcError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "delta_hz" => SweepParam::DeltaHz,
            "pump_duration_s" => SweepParam::PumpDurationS,
            "od_scale_hz" => SweepParam::OdScaleHz,
            "d" => SweepParam::D,
            "finesse" => SweepParam::Finesse,
            other => {
                return Err(AfcError::config(format!(
                    "unknown sweep parameter '{other}'; expected delta_hz, pump_duration_s, od_scale_hz, d or finesse"
                )))
            }
        })
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::DeltaHz => "delta_hz",
            SweepParam::PumpDurationS => "pump_duration_s",
            SweepParam::OdScaleHz => "od_scale_hz",
            SweepParam::D => "d",
            SweepParam::Finesse => "finesse",
        }
    }

    fn is_theory(self) -> bool {
        matches!(self, SweepParam::D | SweepParam::Finesse)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub efficiency: f64,
    pub echo_time: f64,
    pub comb: Option<CombParams>,
}

fn apply_point(base: &Scenario, param: SweepParam, value: f64) -> Result<Scenario> {
    let mut s = base.clone();
    match param {
        SweepParam::DeltaHz => match &mut s.vsp {
            Some(v) => v.spacing_hz = value,
            None => return Err(AfcError::config("sweeping delta_hz needs a [vsp] section")),
        },
        SweepParam::PumpDurationS => match &mut s.vsp {
            Some(v) => v.duration_s = value,
            None => return Err(AfcError::config("sweeping pump_duration_s needs a [vsp] section")),
        },
        SweepParam::OdScaleHz => s.absorption.od_scale_hz = value,
        SweepParam::D | SweepParam::Finesse => unreachable!("theory sweeps do not rebuild the scenario"),
    }
    s.validate()?;
    Ok(s)
}

fn theory_row(t: &TheorySection, param: SweepParam, value: f64) -> Result<SweepRow> {
    let (d, finesse) = match param {
        SweepParam::D => (value, t.finesse),
        _ => (t.d, value),
    };
    let inputs = TheoryInputs::new(d, t.d0, finesse, t.delta_hz)?;
    Ok(SweepRow {
        value,
        efficiency: analytic_efficiency(&inputs).eta,
        echo_time: echo_time(t.delta_hz)?,
        comb: Some(CombParams::guess(t.delta_hz, inputs.tooth_width(), d, t.d0)),
    })
}

/// Evaluates every point in parallel; nothing is written.
pub fn sweep(base: &Scenario, hash: &str, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(AfcError::config(format!("sweep over {} has no values", param.name())));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(AfcError::config(format!("sweep value {v} is not finite")));
    }
    base.validate()?;
    if param.is_theory() {
        let t = base
            .theory
            .as_ref()
            .ok_or_else(|| AfcError::config(format!("sweeping {} needs a [theory] section", param.name())))?;
        return values.iter().map(|&v| theory_row(t, param, v)).collect();
    }
    if base.probe.is_none() || base.vsp.is_none() {
        return Err(AfcError::config("simulation sweeps need [vsp] and [probe] sections"));
    }
    values
        .par_iter()
        .map(|&value| {
            let mut s = apply_point(base, param, value)?;
            let o = match simulate(&s, hash) {
                Err(e) if matches!(e.root(), AfcError::NoComb { .. } | AfcError::FitNotConverged { .. }) => {
                    log::warn!(
                        "{} = {value:e}: {e}; recording the point without a comb fit",
                        param.name()
                    );
                    s.analysis.comb_fit = None;
                    simulate(&s, hash)
                }
                other => other,
            }
            .map_err(|e| AfcError::Stage {
                stage: "sweep point",
                source: Box::new(e),
            })?;
            let first = o
                .echoes
                .first()
                .ok_or_else(|| AfcError::domain("sweep point produced no echo"))?;
            Ok(SweepRow {
                value,
                efficiency: first.efficiency,
                echo_time: first.echo_time - s.probe.as_ref().map_or(0.0, |p| p.pulse_times_s[0]),
                comb: o.comb_fit.map(|f| f.params),
            })
        })
        .collect()
}

pub fn sweep_table(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = format!(
        "# {} efficiency echo_time_s delta_hz gamma_hz d d0 m_teeth bandwidth_hz finesse\n",
        param.name()
    );
    for r in rows {
        let _ = write!(out, "{:.9e} {:.9e} {:.9e}", r.value, r.efficiency, r.echo_time);
        match &r.comb {
            Some(c) => {
                let _ = writeln!(
                    out,
                    " {:.9e} {:.9e} {:.9e} {:.9e} {} {:.9e} {:.9e}",
                    c.delta, c.gamma, c.d, c.d0, c.m_teeth, c.bandwidth, c.finesse
                );
            }
            None => out.push_str(" nan nan nan nan 0 nan nan\n"),
        }
    }
    out
}

/// Runs a sweep and writes `sweep_<param>.dat` into the scenario's output directory.
pub fn run_sweep(base: &Scenario, hash: &str, param: SweepParam, values: &[f64]) -> Result<PathBuf> {
    let rows = sweep(base, hash, param, values)?;
    let path = base.output_dir().join(format!("sweep_{}.dat", param.name()));
    write_atomic(&path, &(provenance_header(hash) + &sweep_table(param, &rows)))?;
    Ok(path)
}

#[cfg(test)]
mod tests;
