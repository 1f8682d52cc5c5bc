//! Closed-form comb memory theory for Gaussian teeth of equal depth on a flat background.

use crate::error::{AfcError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryInputs {
    /// Peak tooth depth above the background.
    pub d: f64,
    /// Background depth.
    pub d0: f64,
    /// Spacing over tooth FWHM.
    pub finesse: f64,
    /// Hz
    pub delta: f64,
}

impl TheoryInputs {
    pub fn new(d: f64, d0: f64, finesse: f64, delta: f64) -> Result<Self> {
        let inputs = TheoryInputs { d, d0, finesse, delta };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d >= 0.0) || !(self.d0 >= 0.0) || !(self.finesse > 0.0) || !(self.delta > 0.0) {
            return Err(AfcError::domain(format!(
                "theory inputs need d >= 0, d0 >= 0, finesse > 0, delta > 0; got d {}, d0 {}, F {}, delta {} Hz",
                self.d, self.d0, self.finesse, self.delta
            )));
        }
        if !(self.d.is_finite() && self.d0.is_finite() && self.finesse.is_finite() && self.delta.is_finite()) {
            return Err(AfcError::domain("theory inputs must be finite"));
        }
        Ok(())
    }

    pub fn tooth_width(&self) -> f64 {
        self.delta / self.finesse
    }
}

/// The efficiency and its four multiplicative factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Efficiency {
    pub eta: f64,
    /// `(d/F)^2`
    pub coupling: f64,
    /// `exp(-d/F)`
    pub reabsorption: f64,
    /// `exp(-7/F^2)`
    pub dephasing: f64,
    /// `exp(-d0)`
    pub background: f64,
}

pub fn analytic_efficiency(inputs: &TheoryInputs) -> Efficiency {
    let x = inputs.d / inputs.finesse;
    let coupling = x * x;
    let reabsorption = (-x).exp();
    let dephasing = (-7.0 / (inputs.finesse * inputs.finesse)).exp();
    let background = (-inputs.d0).exp();
    Efficiency {
        eta: coupling * reabsorption * dephasing * background,
        coupling,
        reabsorption,
        dephasing,
        background,
    }
}

pub fn efficiency(d: f64, finesse: f64, d0: f64) -> Result<f64> {
    let inputs = TheoryInputs::new(d, d0, finesse, 1.0)?;
    Ok(analytic_efficiency(&inputs).eta)
}

/// Rephasing time (s) for a tooth spacing in Hz.
pub fn echo_time(delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(AfcError::domain(format!(
            "tooth spacing must be positive, got {delta} Hz"
        )));
    }
    Ok(1.0 / delta)
}

/// Echo-to-transmitted energy ratio `(d/F)^2 exp(-7/F^2)`; the background loss cancels.
pub fn echo_to_transmit_ratio(d: f64, finesse: f64) -> f64 {
    (d / finesse).powi(2) * (-7.0 / (finesse * finesse)).exp()
}

/// Transmission of a pulse spanning many teeth, `exp(-d/F - d0)`.
pub fn comb_transmission(d: f64, finesse: f64, d0: f64) -> f64 {
    (-d / finesse - d0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferredDepths {
    pub d: f64,
    pub d0: f64,
    /// The forward ratio evaluated at the recovered `d`.
    pub model_ratio: f64,
}

/// Inverts [`echo_to_transmit_ratio`] for `d`, then [`comb_transmission`] for `d0`.
pub fn infer_depths(ratio: f64, transmission: f64, finesse: f64) -> Result<InferredDepths> {
    if !(ratio >= 0.0) || !ratio.is_finite() {
        return Err(AfcError::domain(format!(
            "echo to transmit ratio must be >= 0, got {ratio}"
        )));
    }
    if !(transmission > 0.0 && transmission <= 1.0) {
        return Err(AfcError::domain(format!(
            "transmission must lie in (0, 1], got {transmission}"
        )));
    }
    if !(finesse > 0.0) || !finesse.is_finite() {
        return Err(AfcError::domain(format!("finesse must be positive, got {finesse}")));
    }
    let d = finesse * (ratio * (7.0 / (finesse * finesse)).exp()).sqrt();
    let d0 = -transmission.ln() - d / finesse;
    if d0 < 0.0 {
        return Err(AfcError::InconsistentDepths { d, d0 });
    }
    Ok(InferredDepths {
        d,
        d0,
        model_ratio: echo_to_transmit_ratio(d, finesse),
    })
}

/// Tooth depth maximising the efficiency at fixed finesse.
pub fn optimal_depth(finesse: f64) -> Result<f64> {
    if !(finesse > 0.0) {
        return Err(AfcError::domain(format!("finesse must be positive, got {finesse}")));
    }
    Ok(2.0 * finesse)
}
