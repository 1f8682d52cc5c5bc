use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use afc_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(afc_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn scenario_path(name: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn theory_functions() {
    let mut eta = 0.0;
    assert_eq!(afc_analytic_efficiency(0.55, 0.2, 1.9, &mut eta), AfcStatus::Ok);
    assert!((eta - 0.0073876).abs() < 1e-6);
    assert_eq!(last_error(), "");

    let mut t = 0.0;
    assert_eq!(afc_echo_time(125.5e6, &mut t), AfcStatus::Ok);
    assert!((t - 7.968e-9).abs() < 1e-12);

    let mut d = 0.0;
    assert_eq!(afc_optimal_depth(1.9, &mut d), AfcStatus::Ok);
    assert!((d - 3.8).abs() < 1e-12);

    let ratio = (2.0f64 / 1.9).powi(2) * (-7.0 / 3.61f64).exp();
    let transmission = (-2.0 / 1.9 - 0.4f64).exp();
    let (mut d, mut d0) = (0.0, 0.0);
    assert_eq!(
        afc_infer_depths(ratio, transmission, 1.9, &mut d, &mut d0),
        AfcStatus::Ok
    );
    assert!((d - 2.0).abs() < 1e-9 && (d0 - 0.4).abs() < 1e-9);
}

#[test]
fn errors_map_to_codes_and_messages() {
    let mut x = 0.0;
    assert_eq!(afc_echo_time(0.0, &mut x), AfcStatus::Domain);
    assert!(last_error().contains("positive"));
    assert_eq!(afc_echo_time(1e6, ptr::null_mut()), AfcStatus::NullPointer);
    assert!(last_error().contains("out_s"));
    let (mut d, mut d0) = (0.0, 0.0);
    assert_eq!(
        afc_infer_depths(0.5, 0.9, 1.9, &mut d, &mut d0),
        AfcStatus::InconsistentDepths
    );
    assert_eq!(afc_analytic_efficiency(1.0, 0.0, 1.0, &mut x), AfcStatus::Ok);
    assert_eq!(last_error(), "");
}

#[test]
fn errors_are_per_thread() {
    let mut x = 0.0;
    assert_eq!(afc_echo_time(-1.0, &mut x), AfcStatus::Domain);
    std::thread::spawn(|| assert_eq!(last_error(), "")).join().unwrap();
    assert!(!last_error().is_empty());
}

#[test]
fn scenario_handles() {
    let mut s = ptr::null_mut();
    assert_eq!(
        afc_scenario_load(scenario_path("fig4a_comb125.cfg").as_ptr(), &mut s),
        AfcStatus::Ok
    );
    assert!(!s.is_null());
    let hash = unsafe { CStr::from_ptr(afc_scenario_hash(s)) }
        .to_str()
        .unwrap()
        .to_owned();
    assert_eq!(hash.len(), 64);
    assert_eq!(afc_scenario_set_seed(s, 4), AfcStatus::Ok);

    let mut run = ptr::null_mut();
    assert_eq!(afc_simulate(s, &mut run), AfcStatus::Ok);
    let mut n = 0;
    assert_eq!(afc_run_echo_count(run, &mut n), AfcStatus::Ok);
    assert_eq!(n, 1);
    let mut echo = AfcEcho::default();
    assert_eq!(afc_run_echo(run, 0, &mut echo), AfcStatus::Ok);
    assert!(echo.efficiency > 0.0 && echo.efficiency < 1.0);
    assert!((echo.window_centre_s - 1.0 / 125.5e6).abs() < 1e-12);
    assert_eq!(afc_run_echo(run, 1, &mut echo), AfcStatus::OutOfRange);

    let mut comb = AfcCombParams::default();
    assert_eq!(afc_run_comb_fit(run, &mut comb), AfcStatus::Ok);
    assert!((comb.delta_hz / 125.5e6 - 1.0).abs() < 0.05);
    assert!(comb.m_teeth >= 3);

    let mut len = 0;
    assert_eq!(afc_run_spectrum_len(run, &mut len), AfcStatus::Ok);
    let (mut f, mut re, mut im) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    assert_eq!(
        afc_run_spectrum(run, f.as_mut_ptr(), re.as_mut_ptr(), im.as_mut_ptr(), len - 1),
        AfcStatus::OutOfRange
    );
    assert_eq!(
        afc_run_spectrum(run, f.as_mut_ptr(), re.as_mut_ptr(), im.as_mut_ptr(), len),
        AfcStatus::Ok
    );
    assert!(f.windows(2).all(|w| w[1] > w[0]));
    assert!(re.iter().all(|&x| x >= -1e-12));

    afc_run_free(run);
    afc_scenario_free(s);
    afc_run_free(ptr::null_mut());
    afc_scenario_free(ptr::null_mut());
}

#[test]
fn bad_scenarios_report_config_errors() {
    let text = CString::new("[scenario]\nname = \"x\"\nbogus = 1\n").unwrap();
    let origin = CString::new("inline.cfg").unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(
        afc_scenario_parse(text.as_ptr(), origin.as_ptr(), &mut s),
        AfcStatus::Config
    );
    assert!(s.is_null());
    assert!(last_error().contains("inline.cfg:"), "{}", last_error());

    let missing = CString::new("/nonexistent/x.cfg").unwrap();
    assert_eq!(afc_scenario_load(missing.as_ptr(), &mut s), AfcStatus::Io);
    assert_eq!(afc_scenario_load(ptr::null(), &mut s), AfcStatus::NullPointer);
    let mut run = ptr::null_mut();
    assert_eq!(afc_simulate(ptr::null(), &mut run), AfcStatus::NullPointer);
    assert!(afc_scenario_hash(ptr::null()).is_null());
}

#[test]
fn run_and_write_honours_output_root() {
    let text = std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/fig2_single_class.cfg"),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let text = text.replace("out/fig2_single_class", dir.path().join("fig2").to_str().unwrap());
    let text = CString::new(text).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(afc_scenario_parse(text.as_ptr(), ptr::null(), &mut s), AfcStatus::Ok);
    assert_eq!(afc_run_and_write(s, 1), AfcStatus::Ok);
    assert!(dir.path().join("fig2/spectrum.dat").exists());
    afc_scenario_free(s);
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/afc.h")).unwrap();
    for name in [
        "typedef struct AfcScenario AfcScenario;",
        "typedef struct AfcRun AfcRun;",
        "AFC_STATUS_OK = 0",
        "afc_last_error(void)",
        "afc_simulate(",
        "afc_run_spectrum(",
    ] {
        assert!(header.contains(name), "{name}");
    }
    assert!(unsafe { CStr::from_ptr(afc_version()) }
        .to_str()
        .unwrap()
        .starts_with("0."));
}
