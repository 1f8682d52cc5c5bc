//! Discrete-atom picture: an ensemble of undamped dipoles at fixed detunings.

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{AfcError, Result};
use crate::spectral::ComplexSpectrum;

#[derive(Debug, Clone, PartialEq)]
pub struct AtomEnsembleSample {
    /// Hz
    pub detunings: Vec<f64>,
    /// Normalised to sum to 1.
    pub weights: Vec<f64>,
    /// Sum of the raw weights before normalisation (`sum Re D * df`).
    pub total_weight: f64,
}

impl AtomEnsembleSample {
    pub fn new(detunings: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if detunings.is_empty() || detunings.len() != weights.len() {
            return Err(AfcError::domain(
                "ensemble needs at least one atom and one weight per detuning",
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || detunings.iter().any(|d| !d.is_finite()) {
            return Err(AfcError::domain("ensemble weights must be >= 0 and detunings finite"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(AfcError::domain("ensemble weights sum to zero"));
        }
        Ok(AtomEnsembleSample {
            detunings,
            weights: weights.iter().map(|w| w / total).collect(),
            total_weight: total,
        })
    }

    pub fn len(&self) -> usize {
        self.detunings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detunings.is_empty()
    }
}

/// Deterministic discretisation of `Re D`: the grid is cut into `n_atoms`
/// contiguous blocks and each block becomes one atom at its centre grid point,
/// carrying the block's summed absorption. Empty blocks are dropped.
pub fn sample_ensemble(spectrum: &ComplexSpectrum, n_atoms: usize) -> Result<AtomEnsembleSample> {
    if n_atoms == 0 {
        return Err(AfcError::domain("need at least one atom"));
    }
    let count = spectrum.grid.count;
    let block = count.div_ceil(n_atoms.min(count));
    let mut detunings = Vec::new();
    let mut weights = Vec::new();
    for start in (0..count).step_by(block) {
        let end = (start + block).min(count);
        let w: f64 = spectrum.depth[start..end].iter().map(|d| d.re.max(0.0)).sum::<f64>() * spectrum.grid.step;
        if w > 0.0 {
            detunings.push(spectrum.grid.freq((start + end - 1) / 2));
            weights.push(w);
        }
    }
    if weights.is_empty() {
        return Err(AfcError::domain("spectrum has no absorption to sample"));
    }
    AtomEnsembleSample::new(detunings, weights)
}

/// `n_atoms` grid detunings drawn with probability proportional to `Re D`, equal weights.
pub fn sample_ensemble_random(spectrum: &ComplexSpectrum, n_atoms: usize, seed: u64) -> Result<AtomEnsembleSample> {
    if n_atoms == 0 {
        return Err(AfcError::domain("need at least one atom"));
    }
    let w: Vec<f64> = spectrum.depth.iter().map(|d| d.re.max(0.0)).collect();
    let dist = WeightedIndex::new(&w).map_err(|_| AfcError::domain("spectrum has no absorption to sample"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let detunings = (0..n_atoms)
        .map(|_| spectrum.grid.freq(dist.sample(&mut rng)))
        .collect();
    let mut sample = AtomEnsembleSample::new(detunings, vec![1.0; n_atoms])?;
    sample.total_weight = w.iter().sum::<f64>() * spectrum.grid.step;
    Ok(sample)
}

/// Collective dipole `sum_j w_j exp(i 2 pi delta_j t)` after impulsive excitation at t = 0.
pub fn dipole_sum_field(sample: &AtomEnsembleSample, times: &[f64]) -> Vec<Complex64> {
    times
        .par_iter()
        .map(|&t| {
            sample
                .detunings
                .iter()
                .zip(&sample.weights)
                .map(|(d, w)| Complex64::from_polar(*w, 2.0 * std::f64::consts::PI * d * t))
                .sum()
        })
        .collect()
}

/// Normalised collective emission intensity, 1 at t = 0.
pub fn dipole_sum_echo(sample: &AtomEnsembleSample, times: &[f64]) -> Vec<f64> {
    dipole_sum_field(sample, times).iter().map(|f| f.norm_sqr()).collect()
}
