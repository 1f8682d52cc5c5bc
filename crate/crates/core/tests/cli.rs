use std::path::PathBuf;
use std::process::{Command, Output};

fn afc(args: &[&str], root: &std::path::Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afc"))
        .args(args)
        .env("AFC_OUTPUT_ROOT", root)
        .output()
        .unwrap()
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .display()
        .to_string()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key)?.trim().strip_prefix('=')?.trim().parse().ok())
        .unwrap_or_else(|| panic!("{key} missing from\n{text}"))
}

#[test]
fn theory_prints_efficiency_and_echo_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = afc(
        &[
            "theory", "--d", "0.55", "--f", "1.9", "--d0", "0.2", "--delta", "83.7e6",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!((value(&text, "efficiency") - 0.0073876).abs() < 1e-6, "{text}");
    assert!((value(&text, "echo_time_s") - 11.947e-9).abs() < 1e-12);
    assert!((value(&text, "optimal_d") - 3.8).abs() < 1e-12);
}

#[test]
fn theory_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = afc(&["theory", "--d", "-1", "--f", "1.9"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("error:"));
}

#[test]
fn run_writes_tables_under_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = afc(&["run", &scenario("fig2_single_class.cfg")], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let base = dir.path().join("out/fig2_single_class");
    for f in ["distribution.dat", "spectrum.dat", "fit_report.txt"] {
        let text = std::fs::read_to_string(base.join(f)).unwrap();
        assert!(text.starts_with("# scenario_sha256 "), "{f}");
    }
    let summary = std::fs::read_to_string(base.join("summary.toml")).unwrap();
    assert!(summary.contains("scenario_sha256 = "));
}

#[test]
fn fit_subcommand_reads_a_written_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    assert!(afc(&["run", &scenario("fig3_left_comb125.cfg")], dir.path())
        .status
        .success());
    let spectrum = dir.path().join("out/fig3_left_comb125/spectrum.dat");
    let out = afc(
        &[
            "fit",
            spectrum.to_str().unwrap(),
            "--delta",
            "125.5e6",
            "--lo",
            "-560e6",
            "--hi",
            "260e6",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!((value(&text, "delta_hz") / 125.5e6 - 1.0).abs() < 0.05, "{text}");
}

#[test]
fn bad_config_reports_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    let text = std::fs::read_to_string(scenario("fig2_single_class.cfg")).unwrap();
    std::fs::write(&path, text.replace("efficiency = 1.0", "efficiency = 1.5")).unwrap();
    let out = afc(&["run", path.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("bad.cfg:") && err.contains("prep.efficiency"), "{err}");
}

#[test]
fn sweep_without_values_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = afc(
        &[
            "sweep",
            &scenario("fig4a_comb125.cfg"),
            "--param",
            "od_scale_hz",
            "--values",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(!dir.path().join("out").exists());
    let out = afc(
        &[
            "sweep",
            &scenario("fig4a_comb125.cfg"),
            "--param",
            "gamma",
            "--values",
            "1",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
}

#[test]
fn seed_override_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let out = afc(
        &[
            "--seed",
            "9",
            "--threads",
            "2",
            "run",
            &scenario("fig2_single_class.cfg"),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
