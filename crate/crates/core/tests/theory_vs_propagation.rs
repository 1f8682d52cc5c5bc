use afc_core::propagation::{echo_efficiency, make_pulse_train, propagate, TraceSpec};
use afc_core::spectral::{complex_voigt, ComplexSpectrum, FrequencyGrid};
use afc_core::theory::{analytic_efficiency, TheoryInputs};

// Causal Gaussian teeth of peak depth `d` on a flat background `d0`, extending past the grid.
fn gaussian_comb(delta: f64, finesse: f64, d: f64, d0: f64) -> ComplexSpectrum {
    let sigma = delta / finesse / (8.0 * std::f64::consts::LN_2).sqrt();
    let scale = d * (2.0 * std::f64::consts::PI).sqrt() * sigma;
    let grid = FrequencyGrid::default();
    ComplexSpectrum::from_fn(grid, |f| {
        let teeth: num_complex::Complex64 = (-40..=40)
            .map(|k| complex_voigt(f - k as f64 * delta, 0.0, sigma))
            .sum();
        teeth * scale + d0
    })
}

#[test]
fn formula_tracks_full_propagation_on_ideal_combs() {
    let delta = 100e6;
    let tau = 1.0 / delta;
    let spec = TraceSpec::default();
    let pulse = make_pulse_train(&spec, &[0.0], 1e-9, &[1.0], 0.0).unwrap();
    for finesse in [1.5, 2.0, 3.0, 4.0, 5.0] {
        for d in [0.25, 0.5, 1.0, 2.0] {
            let d0 = 0.1;
            let out = propagate(&pulse, &gaussian_comb(delta, finesse, d, d0)).unwrap();
            let sim = echo_efficiency(&out, &pulse, tau, 4e-9).unwrap().efficiency;
            let theory = analytic_efficiency(&TheoryInputs::new(d, d0, finesse, delta).unwrap()).eta;
            let rel = (sim - theory).abs() / theory;
            assert!(
                rel < 0.2,
                "F {finesse} d {d}: simulated {sim:.4e}, formula {theory:.4e} ({rel:.3})"
            );
        }
    }
}
