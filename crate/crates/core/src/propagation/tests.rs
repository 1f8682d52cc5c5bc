use super::*;
use crate::spectral::{complex_lorentzian, FrequencyGrid};
use approx::assert_relative_eq;
use proptest::prelude::*;
use std::f64::consts::{LN_2, PI};

fn lorentz_comb(grid: &FrequencyGrid, centres: &[f64], fwhm: f64, d: f64) -> ComplexSpectrum {
    let g = 0.5 * fwhm;
    ComplexSpectrum::from_fn(*grid, |f| {
        centres.iter().map(|c| complex_lorentzian(f - c, g)).sum::<Complex64>() * (d * PI * g)
    })
}

fn gauss_comb(grid: &FrequencyGrid, centres: &[f64], fwhm: f64, d: f64) -> ComplexSpectrum {
    let a = 4.0 * LN_2 / (fwhm * fwhm);
    ComplexSpectrum::from_fn(*grid, |f| {
        Complex64::new(
            d * centres.iter().map(|c| (-a * (f - c).powi(2)).exp()).sum::<f64>(),
            0.0,
        )
    })
}

fn single_pulse(fwhm: f64) -> PulseEnvelope {
    make_pulse_train(&TraceSpec::default(), &[0.0], fwhm, &[1.0], 0.0).unwrap()
}

#[test]
fn single_pulse_has_unit_energy_and_requested_width() {
    let p = single_pulse(2e-9);
    assert_relative_eq!(p.energy(), 1.0, max_relative = 1e-12);
    let inten = p.intensity();
    let peak = inten.iter().cloned().fold(0.0, f64::max);
    let above: usize = inten.iter().filter(|&&i| i >= 0.5 * peak).count();
    assert!((above as f64 * p.dt - 2e-9).abs() <= 2.0 * p.dt);
    assert_relative_eq!(p.peak_time_between(-5e-9, 5e-9).unwrap(), 0.0, epsilon = 1e-15);
}

#[test]
fn zero_amplitude_mode_matches_single_pulse() {
    let spec = TraceSpec::default();
    let two = make_pulse_train(&spec, &[0.0, 6e-9], 2e-9, &[1.0, 0.0], 0.0).unwrap();
    assert_eq!(two, single_pulse(2e-9));
    let both = make_pulse_train(&spec, &[0.0, 6e-9], 2e-9, &[1.0, 1.0], 0.0).unwrap();
    // unit-energy Gaussians 6 ns apart overlap by exp(-9 ln 2)
    assert_relative_eq!(both.energy(), 2.0 * (1.0 + (-9.0 * LN_2).exp()), max_relative = 1e-9);
}

#[test]
fn bad_pulse_requests_are_rejected() {
    let spec = TraceSpec::default();
    assert!(make_pulse_train(&spec, &[0.0], 0.0, &[1.0], 0.0).is_err());
    assert!(make_pulse_train(&spec, &[100e-9], 1e-9, &[1.0], 0.0).is_err());
    assert!(make_pulse_train(&spec, &[0.0, 1e-9], 1e-9, &[1.0], 0.0).is_err());
}

#[test]
fn transparent_medium_is_identity() {
    let p = single_pulse(2e-9);
    let s = ComplexSpectrum::zeros(FrequencyGrid::default());
    let out = propagate(&p, &s).unwrap();
    for (a, b) in out.samples.iter().zip(&p.samples) {
        assert!((a - b).norm() < 1e-12 * p.samples.iter().map(|x| x.norm()).fold(0.0, f64::max));
    }
}

#[test]
fn echo_sits_at_inverse_spacing() {
    let grid = FrequencyGrid::default();
    for delta in [50e6, 100e6, 150e6, 200e6, 250e6] {
        let centres: Vec<f64> = (-40..=40)
            .map(|k| k as f64 * delta)
            .filter(|c: &f64| c.abs() < 1.45e9)
            .collect();
        let s = lorentz_comb(&grid, &centres, 4e6, 0.3);
        let p = single_pulse(1e-9);
        let out = propagate(&p, &s).unwrap();
        let tau = 1.0 / delta;
        let t = out.peak_time_between(0.75 * tau, 1.25 * tau).unwrap();
        assert!(
            (t - tau).abs() <= p.dt,
            "delta {delta:e}: echo at {t:e}, expected {tau:e}"
        );
    }
}

#[test]
fn multimode_propagation_is_linear() {
    let spec = TraceSpec::default();
    let grid = FrequencyGrid::default();
    let centres: Vec<f64> = (-5..=5).map(|k| k as f64 * 83.7e6).collect();
    let s = lorentz_comb(&grid, &centres, 40e6, 0.8);
    let a = make_pulse_train(&spec, &[0.0], 2e-9, &[1.0], 0.0).unwrap();
    let b = make_pulse_train(&spec, &[6e-9], 2e-9, &[1.0], 0.0).unwrap();
    let ab = make_pulse_train(&spec, &[0.0, 6e-9], 2e-9, &[1.0, 1.0], 0.0).unwrap();
    let sum = propagate(&a, &s).unwrap().add(&propagate(&b, &s).unwrap()).unwrap();
    let joint = propagate(&ab, &s).unwrap();
    let scale = ab.samples.iter().map(|x| x.norm()).fold(0.0, f64::max);
    for (x, y) in joint.samples.iter().zip(&sum.samples) {
        assert!((x - y).norm() < 1e-12 * scale);
    }
    let tau = 1.0 / 83.7e6;
    let e1 = joint.peak_time_between(tau - 2e-9, tau + 2e-9).unwrap();
    let e2 = joint.peak_time_between(tau + 4e-9, tau + 8e-9).unwrap();
    assert!((e2 - e1 - 6e-9).abs() < 2.0 * spec.dt);
}

#[test]
fn echo_beyond_trace_end_is_detected() {
    let spec = TraceSpec {
        t_start: -3e-9,
        dt: 10e-12,
        span: 10e-9,
    };
    let grid = FrequencyGrid::default();
    let centres: Vec<f64> = (-8..=8).map(|k| k as f64 * 125.5e6).collect();
    let s = lorentz_comb(&grid, &centres, 30e6, 1.5);
    let p = make_pulse_train(&spec, &[0.0], 1e-9, &[1.0], 0.0).unwrap();
    match propagate(&p, &s) {
        Err(AfcError::TraceTooShort { fraction }) => assert!(fraction > MAX_WRAP_FRACTION),
        other => panic!("{other:?}"),
    }
}

#[test]
fn pulse_wider_than_grid_is_rejected() {
    let grid = FrequencyGrid::centred(0.0, 100e6, 2001).unwrap();
    let s = ComplexSpectrum::zeros(grid);
    assert!(matches!(propagate(&single_pulse(0.3e-9), &s), Err(AfcError::Domain(_))));
}

#[test]
fn excited_decay_scales_echo_intensity() {
    let grid = FrequencyGrid::default();
    let centres: Vec<f64> = (-10..=10).map(|k| k as f64 * 125.5e6).collect();
    let s = lorentz_comb(&grid, &centres, 10e6, 0.3);
    let p = single_pulse(1e-9);
    let plain = propagate(&p, &s).unwrap();
    let decayed = propagate_with(
        &p,
        &s,
        &PropagationOptions {
            excited_decay: Some(CS_D2_LIFETIME),
        },
    )
    .unwrap();
    let tau = 1.0 / 125.5e6;
    let i = ((tau - p.t0) / p.dt).round() as usize;
    let ratio = decayed.samples[i].norm_sqr() / plain.samples[i].norm_sqr();
    assert_relative_eq!(ratio, (-(p.time(i)) / CS_D2_LIFETIME).exp(), max_relative = 1e-9);
}

#[test]
fn efficiency_of_reference_against_itself_is_one() {
    let p = single_pulse(2e-9);
    let r = echo_efficiency(&p, &p, 25e-9, 69e-9).unwrap();
    assert_relative_eq!(r.efficiency, 1.0, max_relative = 1e-12);
}

#[test]
fn efficiency_of_constructed_fixture() {
    let reference = single_pulse(2e-9);
    let spec = TraceSpec::default();
    // a unit-energy copy displaced to 20 ns and scaled to carry 10% of the energy
    let echo = make_pulse_train(&spec, &[20e-9], 2e-9, &[0.1f64.sqrt()], 0.0).unwrap();
    let r = echo_efficiency(&echo, &reference, 20e-9, 20e-9).unwrap();
    assert!((r.efficiency - 0.1).abs() < 1e-6, "{}", r.efficiency);
    assert!(r.transmitted_fraction < 1e-12);
    assert_relative_eq!(r.echo_time, 20e-9, epsilon = 1e-15);
    assert!(r.to_kv().contains("efficiency = "));
}

#[test]
fn bad_windows_are_rejected() {
    let p = single_pulse(2e-9);
    assert!(echo_efficiency(&p, &p, 0.0, 0.0).is_err());
    assert!(echo_efficiency(&p, &p, 69e-9, 5e-9).is_err());
    assert!(echo_efficiency(&p, &p, 5e-12, 1e-12).is_err());
}

#[test]
fn single_atom_never_dephases() {
    let s = AtomEnsembleSample::new(vec![37e6], vec![3.0]).unwrap();
    let times: Vec<f64> = (0..100).map(|i| i as f64 * 1e-10).collect();
    for v in dipole_sum_echo(&s, &times) {
        assert_relative_eq!(v, 1.0, max_relative = 1e-12);
    }
}

#[test]
fn two_teeth_fully_revive_at_inverse_spacing() {
    let delta = 125.5e6;
    let s = AtomEnsembleSample::new(vec![-0.5 * delta, 0.5 * delta], vec![1.0, 1.0]).unwrap();
    let i = dipole_sum_echo(&s, &[0.0, 0.5 / delta, 1.0 / delta]);
    assert_relative_eq!(i[0], 1.0, max_relative = 1e-12);
    assert!(i[1] < 1e-20);
    assert_relative_eq!(i[2], 1.0, max_relative = 1e-12);
}

#[test]
fn gaussian_comb_revival_follows_finesse_factor() {
    let delta = 83.7e6;
    let finesse = 1.9;
    let grid = FrequencyGrid::default();
    let centres: Vec<f64> = (-2..=2).map(|k| k as f64 * delta).collect();
    let s = gauss_comb(&grid, &centres, delta / finesse, 0.5);
    let sample = sample_ensemble(&s, grid.count).unwrap();
    let peak = dipole_sum_echo(&sample, &[1.0 / delta])[0];
    let expected = (-7.0 / (finesse * finesse)).exp();
    assert!((peak / expected - 1.0).abs() < 0.1, "{peak} vs {expected}");
}

#[test]
fn flat_band_decays_without_revival() {
    let b = 400e6;
    let grid = FrequencyGrid::default();
    let s = ComplexSpectrum::from_fn(grid, |f| {
        Complex64::new(if f.abs() <= 0.5 * b { 0.3 } else { 0.0 }, 0.0)
    });
    let sample = sample_ensemble(&s, grid.count).unwrap();
    let times: Vec<f64> = (0..6000).map(|i| i as f64 * 1e-11).collect();
    let i = dipole_sum_echo(&sample, &times);
    let first_zero = (1.0 / b / 1e-11).round() as usize;
    assert!(i[first_zero] < 1e-4, "{}", i[first_zero]);
    assert!(i[2 * first_zero..].iter().all(|&v| v < 0.05));
}

#[test]
fn ensemble_sampling() {
    let grid = FrequencyGrid::new(0.0, 1e6, 11).unwrap();
    let mut s = ComplexSpectrum::zeros(grid);
    assert!(sample_ensemble(&s, 4).is_err());
    assert!(sample_ensemble_random(&s, 4, 1).is_err());
    s.depth[7] = Complex64::new(0.4, 0.0);
    let one = sample_ensemble(&s, 11).unwrap();
    assert_eq!(one.detunings, vec![7e6]);
    assert_eq!(one.weights, vec![1.0]);
    assert_relative_eq!(one.total_weight, 0.4e6, max_relative = 1e-12);
    s.depth[2] = Complex64::new(0.2, 0.0);
    let coarse = sample_ensemble(&s, 3).unwrap();
    assert_relative_eq!(coarse.weights.iter().sum::<f64>(), 1.0, max_relative = 1e-15);
    let a = sample_ensemble_random(&s, 500, 7).unwrap();
    let b = sample_ensemble_random(&s, 500, 7).unwrap();
    assert_eq!(a, b);
    let frac = a.detunings.iter().filter(|&&d| d == 7e6).count() as f64 / 500.0;
    assert!((frac - 2.0 / 3.0).abs() < 0.08);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn medium_is_passive(
        d in 0.0f64..3.0,
        delta in 50e6f64..250e6,
        fwhm in 15e6f64..60e6,
        carrier in -2e8f64..2e8,
    ) {
        let grid = FrequencyGrid::centred(0.0, 1.5e9, 1 << 13).unwrap();
        let centres: Vec<f64> = (-5..=5).map(|k| k as f64 * delta).collect();
        let s = lorentz_comb(&grid, &centres, fwhm, d);
        for f in [-1e9, 0.0, 3e8] {
            prop_assert!((-0.5 * s.interpolate(f)).exp().norm() <= 1.0 + 1e-15);
        }
        let p = make_pulse_train(&TraceSpec::default(), &[0.0], 2e-9, &[1.0], carrier).unwrap();
        let out = propagate(&p, &s).unwrap();
        prop_assert!(out.energy() <= p.energy() * (1.0 + 1e-12));
    }
}
