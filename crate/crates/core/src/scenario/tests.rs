use super::*;

const MINIMAL: &str = r#"
[scenario]
name = "t"
seed = 3

[species]
temperature_k = 294.0

[absorption]
od_scale_hz = 0.7e9

[output]
directory = "out"
"#;

const COMB: &str = r#"
[scenario]
name = "comb"
seed = 1

[species]
temperature_k = 294.0

[prep]
efficiency = 0.9

[vsp]
addressed_line = "3-4"
spacing_hz = 125.5e6
sidebands = [1]
tone_weights = [1.0, 1.0, 1.0]
effective_linewidth_hz = 10.0e6
pump_rate_per_s = 8.0e6
duration_s = 1.0e-6

[absorption]
od_scale_hz = 0.7e9

[probe]
carrier_detuning_hz = -125.55e6
pulse_times_s = [0.0]
pulse_fwhm_s = 2.0e-9

[analysis.comb_fit]
window_lo_hz = -560.0e6
window_hi_hz = 260.0e6
gamma_guess_hz = 45.0e6

[theory]
d = 0.55
d0 = 0.2
finesse = 1.9
delta_hz = 83.7e6

[output]
directory = "out"
"#;

fn with_output(text: &str, dir: &Path) -> String {
    text.replace("directory = \"out\"", &format!("directory = \"{}\"", dir.display()))
}

#[test]
fn minimal_scenario_takes_defaults() {
    let s = Scenario::parse(MINIMAL, "min.cfg").unwrap();
    assert_eq!(s.species.name, "Cs-133");
    assert_eq!(s.prep.efficiency, 1.0);
    assert!(s.vsp.is_none() && s.probe.is_none());
    assert_eq!(s.grids, GridSection::default());
}

#[test]
fn syntax_errors_carry_line_and_column() {
    let text = MINIMAL.replace("temperature_k = 294.0", "temperature_k = = 294.0");
    let msg = Scenario::parse(&text, "bad.cfg").unwrap_err().to_string();
    assert!(msg.contains("bad.cfg:7:"), "{msg}");
}

#[test]
fn unknown_keys_are_rejected() {
    let text = MINIMAL.replace("seed = 3", "seed = 3\ncolour = \"blue\"");
    let msg = Scenario::parse(&text, "bad.cfg").unwrap_err().to_string();
    assert!(msg.contains("bad.cfg:5:") && msg.contains("colour"), "{msg}");
}

#[test]
fn semantic_errors_name_the_key_line() {
    let text = MINIMAL.replace("temperature_k = 294.0", "temperature_k = -4.0");
    let msg = Scenario::parse(&text, "bad.cfg").unwrap_err().to_string();
    assert!(msg.contains("bad.cfg:7: species.temperature_k"), "{msg}");
    let text = COMB.replace("tone_weights = [1.0, 1.0, 1.0]", "tone_weights = [1.0]");
    let msg = Scenario::parse(&text, "bad.cfg").unwrap_err().to_string();
    assert!(msg.contains("vsp.tone_weights"), "{msg}");
}

#[test]
fn hash_tracks_file_contents() {
    assert_eq!(scenario_hash(COMB), scenario_hash(COMB));
    assert_ne!(
        scenario_hash(COMB),
        scenario_hash(&COMB.replace("seed = 1", "seed = 2"))
    );
    assert_eq!(scenario_hash(COMB).len(), 64);
}

#[test]
fn repeated_runs_write_identical_tables() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let read = |dir: &Path| {
        let s = Scenario::parse(&with_output(COMB, dir), "comb.cfg").unwrap();
        let files = run_scenario(&s, "h", 1).unwrap();
        files
            .iter()
            .filter(|f| f.extension().is_some_and(|e| e == "dat" || e == "txt"))
            .map(|f| (f.file_name().unwrap().to_owned(), std::fs::read(f).unwrap()))
            .collect::<Vec<_>>()
    };
    let (x, y) = (read(a.path()), read(b.path()));
    assert!(!x.is_empty());
    assert_eq!(x, y);
    let summary = std::fs::read_to_string(a.path().join("summary.toml")).unwrap();
    assert!(summary.contains("scenario_sha256"));
}

#[test]
fn comb_scenario_produces_fit_and_echo() {
    let s = Scenario::parse(COMB, "comb.cfg").unwrap();
    let out = simulate(&s, "h").unwrap();
    let fit = out.comb_fit.unwrap().params;
    assert!((fit.delta / 125.5e6 - 1.0).abs() < 0.05, "{fit:?}");
    assert_eq!(out.echoes.len(), 1);
    assert!((out.echoes[0].echo_time - 1.0 / 125.5e6).abs() < 0.5e-9);
    assert!(out.echoes[0].efficiency > 0.0 && out.echoes[0].efficiency < 1.0);
    let (before, after) = out.population;
    assert!(((after - before) / before).abs() < 1e-10);
}

#[test]
fn empty_sweep_is_an_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let s = Scenario::parse(&with_output(COMB, dir.path()), "comb.cfg").unwrap();
    assert!(matches!(
        run_sweep(&s, "h", SweepParam::DeltaHz, &[]),
        Err(AfcError::Config(_))
    ));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn sweep_parameter_names() {
    for p in [
        SweepParam::DeltaHz,
        SweepParam::PumpDurationS,
        SweepParam::OdScaleHz,
        SweepParam::D,
        SweepParam::Finesse,
    ] {
        assert_eq!(p.name().parse::<SweepParam>().unwrap(), p);
    }
    assert!("gamma".parse::<SweepParam>().is_err());
}

#[test]
fn depth_sweep_peaks_at_twice_the_finesse() {
    let s = Scenario::parse(COMB, "comb.cfg").unwrap();
    let values: Vec<f64> = (1..=80).map(|i| i as f64 * 0.1).collect();
    let rows = sweep(&s, "h", SweepParam::D, &values).unwrap();
    let best = rows
        .iter()
        .max_by(|a, b| a.efficiency.total_cmp(&b.efficiency))
        .unwrap();
    assert!((best.value - 3.8).abs() < 1e-9, "{}", best.value);
    assert!(rows.iter().all(|r| (r.echo_time - 1.0 / 83.7e6).abs() < 1e-15));
}

#[test]
fn spacing_sweep_moves_the_echo() {
    let s = Scenario::parse(COMB, "comb.cfg").unwrap();
    let rows = sweep(&s, "h", SweepParam::DeltaHz, &[62.75e6, 83.7e6, 125.5e6]).unwrap();
    assert!(rows[2].comb.is_some());
    for (row, expected) in rows.iter().zip([15.94e-9, 11.95e-9, 7.97e-9]) {
        assert!(
            (row.echo_time - expected).abs() < 0.5e-9,
            "{} vs {expected}",
            row.echo_time
        );
    }
    let table = sweep_table(SweepParam::DeltaHz, &rows);
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn theory_sweep_needs_theory_section() {
    let s = Scenario::parse(MINIMAL, "min.cfg").unwrap();
    assert!(sweep(&s, "h", SweepParam::Finesse, &[1.0]).is_err());
    assert!(sweep(&s, "h", SweepParam::OdScaleHz, &[1e9]).is_err());
}
