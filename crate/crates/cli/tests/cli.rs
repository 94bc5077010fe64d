use std::path::Path;
use std::process::{Command as Process, Output};

use nvsim_cli::config::{BiasSpec, ExperimentConfig};
use nvsim_cli::output::Report;
use nvsim_cli::{execute, Command};
use nvsim_core::pulseseq::EngineMode;

fn nvsim(dir: &Path, args: &[&str]) -> Output {
    Process::new(env!("CARGO_BIN_EXE_nvsim"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.ini");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn analytic() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.engine.mode = EngineMode::Analytic;
    c
}

fn num(r: &Report, key: &str) -> f64 {
    r.summary.get(key).unwrap_or_else(|| panic!("missing {key}")).parse().unwrap()
}

#[test]
fn unknown_key_reports_line_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[sample]\nt2_us = 100\nt2_uss = 3\n");
    let out = nvsim(dir.path(), &["rabi", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("t2_uss"), "{err}");
}

#[test]
fn empty_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[laser]\nqwp_deg =\n");
    let out = nvsim(dir.path(), &["beff-qwp", "--config", &cfg, "--mode", "analytic"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nvsim(dir.path(), &["rabi", "--mode", "quantum"]).status.code(), Some(2));
    assert_eq!(nvsim(dir.path(), &["teleport"]).status.code(), Some(2));
}

#[test]
fn physically_invalid_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // the PSD exposure cannot fit inside the wait
    let cfg = write_config(dir.path(), "[sequence]\ntau_us = 21\nt0_us = 30\n");
    let out = nvsim(dir.path(), &["beff-qwp", "--config", &cfg, "--mode", "analytic"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn inconsistent_anchors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = nvsim(dir.path(), &["calibrate", "--anchor", "20,45,785,60", "--anchor", "20,45,785,61"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("inconsistent"));
}

#[test]
fn zero_field_anchor_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = nvsim(dir.path(), &["calibrate", "--anchor", "20,45,785,0"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn calibrate_writes_loadable_section() {
    let dir = tempfile::tempdir().unwrap();
    let out = nvsim(dir.path(), &["calibrate", "--anchor", "10,45,785,30"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let section = std::fs::read_to_string(dir.path().join("calib.ini")).unwrap();
    let cfg = ExperimentConfig::parse(&section).unwrap();
    let mut c = analytic();
    c.calib = cfg.calib;
    let r = execute(&Command::BeffQwp, c).unwrap();
    // 10 mW at 785 nm gives 30 nT, so 20 mW gives 60 nT
    assert!((num(&r, "amplitude_nt") - 60.0).abs() < 1e-6);
}

#[test]
fn csv_headers_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let expected = [
        ("rabi", "rabi.csv", "t_mw_us,p1,stderr"),
        ("echo", "echo.csv", "tau_us,p1,stderr"),
        ("echo", "echo_peaks.csv", "k,tau_us,signal,stderr"),
        ("psd-decoherence", "psd_decoherence_705nm_5mW.csv", "t0_us,visibility,stderr"),
        ("beff-power", "beff_power.csv", "wavelength_nm,power_mw,beff_nt,stderr_nt"),
        ("beff-qwp", "beff_qwp.csv", "qwp_deg,beff_nt,stderr_nt"),
        (
            "beff-wavelength",
            "beff_wavelength.csv",
            "wavelength_nm,temperature_k,beff_plus_nt,beff_minus_nt,magnitude_nt,stderr_nt,intensity_gw_m2,normalized,normalized_stderr",
        ),
    ];
    for (cmd, file, header) in expected {
        let out = nvsim(dir.path(), &[cmd, "--mode", "analytic", "--seed", "3"]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        let text = std::fs::read_to_string(dir.path().join(file)).unwrap();
        let mut lines = text.lines();
        let meta = lines.next().unwrap();
        assert!(meta.starts_with("# nvsim ") && meta.contains(&format!("command={cmd}")) && meta.contains("seed=3"), "{meta}");
        assert_eq!(lines.next().unwrap(), header, "{file}");
        let width = header.split(',').count();
        for row in lines {
            assert_eq!(row.split(',').count(), width);
            assert!(row.split(',').all(|c| c.parse::<f64>().is_ok()), "{row}");
        }
        let summary = format!("{}_summary.txt", cmd.replace('-', "_"));
        let s = std::fs::read_to_string(dir.path().join(summary)).unwrap();
        assert!(s.starts_with("command_line="));
        assert!(s.contains("mode=analytic\n"));
    }
}

#[test]
fn single_shot_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = nvsim(dir.path(), &["rabi", "--shots", "1", "--mode", "mc"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn doubling_bias_halves_revival_spacing() {
    let period = |b: f64| {
        let mut c = analytic();
        c.sample.bias = BiasSpec::Field(b);
        c.sequence.echo_grid = (1..=240).map(|i| i as f64 * 0.25e-6).collect();
        num(&execute(&Command::Echo, c).unwrap(), "predicted.revival_period_us")
    };
    let (p1, p2) = (period(4.45e-3), period(8.9e-3));
    assert!((p1 / p2 - 2.0).abs() < 1e-12);

    let mut c = analytic();
    c.sample.bias = BiasSpec::Field(8.9e-3);
    c.sequence.echo_grid = (1..=240).map(|i| i as f64 * 0.25e-6).collect();
    let r = execute(&Command::Echo, c).unwrap();
    let found: Vec<f64> = r.summary.get("revivals_us").unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((found[0] - p2).abs() <= 0.5 && (found[1] - 2.0 * p2).abs() <= 0.5, "{found:?} vs {p2}");
}

#[test]
fn zero_power_leaves_visibility_at_baseline() {
    let base = {
        let mut c = analytic();
        c.laser.decoherence_powers = vec![0.0];
        c.laser.decoherence_wavelengths = vec![705e-9];
        execute(&Command::PsdDecoherence, c).unwrap()
    };
    let t = &base.tables[0];
    let first = t.rows[0][1];
    assert!(t.rows.iter().all(|r| (r[1] - first).abs() < 1e-9), "{:?}", t.rows);
}

#[test]
fn analytic_output_is_seed_independent() {
    let mut a = analytic();
    a.engine.seed = 1;
    let mut b = analytic();
    b.engine.seed = 2;
    assert_eq!(execute(&Command::BeffQwp, a).unwrap().tables, execute(&Command::BeffQwp, b).unwrap().tables);
}

#[test]
fn monte_carlo_output_depends_on_seed() {
    let mut a = ExperimentConfig::default();
    a.engine.seed = 1;
    let mut b = a.clone();
    b.engine.seed = 2;
    assert_ne!(execute(&Command::BeffQwp, a).unwrap().tables, execute(&Command::BeffQwp, b).unwrap().tables);
}

#[test]
fn example_config_matches_defaults() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../config/example.ini");
    let got = format!("{:?}", ExperimentConfig::load(Path::new(path)).unwrap());
    let want = format!("{:?}", ExperimentConfig::default());
    // same structure, numbers equal up to unit-conversion rounding
    let split = |s: &str| -> Vec<String> {
        s.split(|c: char| !(c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_'))
            .filter(|t| !t.is_empty())
            .map(String::from)
            .collect()
    };
    let (a, b) = (split(&got), split(&want));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        match (x.parse::<f64>(), y.parse::<f64>()) {
            (Ok(u), Ok(v)) => assert!((u - v).abs() <= 1e-12 * v.abs(), "{u} vs {v}"),
            _ => assert_eq!(x, y),
        }
    }
}
