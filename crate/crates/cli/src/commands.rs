//! Sweep commands. Each returns CSV tables and a fit summary; grid points
//! run in parallel and are reported in grid order.

use std::f64::consts::PI;

use nvsim_core::fitkit::{
    fit, model_damped_cosine, model_inverse_detuning, model_linear, model_sin2theta, model_stretched_exp,
    FitModel, FitResult,
};
use nvsim_core::optics::{effective_field, BeamSpec, CalibrationAnchor, EffectiveFieldModel, SPEED_OF_LIGHT};
use nvsim_core::rng::SeedTree;
use rayon::prelude::*;

use crate::measure::{FieldPoint, Population, Runner};
use crate::output::{join, tag, Csv, Report, Summary};
use crate::CliError;

fn nonempty(grid: &[f64], what: &str) -> Result<(), CliError> {
    if grid.is_empty() {
        Err(CliError::Usage(format!("{what} grid is empty")))
    } else {
        Ok(())
    }
}

fn put_fit(s: &mut Summary, prefix: &str, model: &FitModel, r: &FitResult) {
    s.put(format!("{prefix}.model"), model.name());
    s.put(format!("{prefix}.status"), r.status);
    s.put(format!("{prefix}.iterations"), r.iterations);
    s.put(format!("{prefix}.chi2"), r.chi2);
    s.put(format!("{prefix}.dof"), r.dof);
    s.put(format!("{prefix}.reduced_chi2"), r.reduced_chi2);
    for (i, p) in model.params().iter().enumerate() {
        s.put(format!("{prefix}.{}", p.name), r.params[i]);
        s.put(format!("{prefix}.{}_stderr", p.name), r.std_errors[i]);
    }
}

fn positive(se: &[f64]) -> Vec<f64> {
    let floor = se.iter().cloned().filter(|v| *v > 0.0 && v.is_finite()).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1.0 };
    se.iter().map(|&v| if v > 0.0 && v.is_finite() { v } else { floor }).collect()
}

/// Rabi nutation sweep with a damped-cosine fit of the envelope.
pub fn cmd_rabi(r: &Runner) -> Result<Report, CliError> {
    let q = &r.cfg.sequence;
    nonempty(&q.rabi_grid, "rabi_t_us")?;
    let seqs = q
        .rabi_grid
        .iter()
        .map(|&t| q.builder.rabi(t, q.rabi_frequency))
        .collect::<Result<Vec<_>, _>>()?;
    let root = r.root();
    let pts: Vec<Population> = seqs
        .par_iter()
        .enumerate()
        .map(|(i, s)| r.population(s, r.cfg.calib.temperature, root.child(i as u64)))
        .collect::<Result<_, _>>()?;

    let mut csv = Csv::new("rabi.csv", vec!["t_mw_us", "p1", "stderr"]);
    for (t, p) in q.rabi_grid.iter().zip(&pts) {
        csv.push(vec![t * 1e6, p.value, p.std_error]);
    }
    let mut s = Summary::default();
    s.put("configured.t2_star_us", r.cfg.sample.t2_star * 1e6);
    s.put("configured.rabi_frequency_mhz", q.rabi_frequency / (2.0 * PI) * 1e-6);
    let xs: Vec<f64> = q.rabi_grid.iter().map(|t| t * 1e6).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.value).collect();
    let se = positive(&pts.iter().map(|p| p.std_error).collect::<Vec<_>>());
    if xs.len() >= 6 {
        let model = model_damped_cosine();
        let f = fit(&model, &xs, &ys, &se)?;
        s.put("t2_star_us", f.params[1]);
        s.put("t2_star_us_stderr", f.std_errors[1]);
        s.put("rabi_frequency_mhz", f.params[3]);
        put_fit(&mut s, "fit", &model, &f);
    } else {
        s.put("fit.status", "skipped");
    }
    Ok(Report { tables: vec![csv], summary: s, files: vec![] })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Revival {
    pub k: u32,
    pub tau: f64,
    pub signal: f64,
    pub std_error: f64,
}

const PEAK_AVERAGE_HALF_WIDTH: f64 = 0.5e-6;

/// Revival peaks near `k·period`. The argmax in each window is taken on the
/// envelope-corrected signal once an envelope estimate exists.
pub fn locate_revivals(taus: &[f64], ys: &[f64], se: &[f64], period: f64) -> Vec<Revival> {
    let (lo, hi) = (taus[0], taus[taus.len() - 1]);
    let windows: Vec<(u32, Vec<usize>)> = (1u32..)
        .map(|k| (k, k as f64 * period))
        .take_while(|(_, c)| c - 0.25 * period <= hi)
        .filter(|(_, c)| c - 0.25 * period >= lo && c + 0.25 * period <= hi + 1e-12)
        .map(|(k, c)| {
            let idx: Vec<usize> = (0..taus.len()).filter(|&i| (taus[i] - c).abs() <= 0.25 * period).collect();
            (k, idx)
        })
        .filter(|(_, idx)| !idx.is_empty())
        .collect();

    let mut peaks = windows_pick(&windows, taus, ys, ys, se, &|_| 1.0);
    for _ in 0..2 {
        let Some(f) = fit_revivals(&peaks) else { break };
        let (a, t, p, c) = (f.params[0], f.params[1], f.params[2], f.params[3]);
        if !(a > 0.0) {
            break;
        }
        // flatten the envelope so the decay does not pull the argmax earlier
        let shifted: Vec<f64> = ys.iter().map(|y| y - c).collect();
        let weight = |tau: f64| 1.0 / (-(2.0 * tau * 1e6 / t).powf(p)).exp().max(1e-300);
        peaks = windows_pick(&windows, taus, &shifted, ys, se, &weight);
    }
    peaks
}

fn windows_pick(
    windows: &[(u32, Vec<usize>)],
    taus: &[f64],
    score: &[f64],
    ys: &[f64],
    se: &[f64],
    weight: &dyn Fn(f64) -> f64,
) -> Vec<Revival> {
    windows
        .iter()
        .map(|(k, idx)| {
            let best = idx
                .iter()
                .copied()
                .max_by(|&a, &b| (weight(taus[a]) * score[a]).total_cmp(&(weight(taus[b]) * score[b])).then(b.cmp(&a)))
                .expect("window not empty");
            let near: Vec<usize> =
                (0..taus.len()).filter(|&i| (taus[i] - taus[best]).abs() <= PEAK_AVERAGE_HALF_WIDTH + 1e-12).collect();
            let n = near.len() as f64;
            Revival {
                k: *k,
                tau: taus[best],
                signal: near.iter().map(|&i| ys[i]).sum::<f64>() / n,
                std_error: near.iter().map(|&i| se[i] * se[i]).sum::<f64>().sqrt() / n,
            }
        })
        .collect()
}

/// Stretched-exponential fit of peak signal against total free time `2τ` (µs).
fn fit_revivals(peaks: &[Revival]) -> Option<FitResult> {
    if peaks.len() < 4 {
        return None;
    }
    let xs: Vec<f64> = peaks.iter().map(|p| 2.0 * p.tau * 1e6).collect();
    let ys: Vec<f64> = peaks.iter().map(|p| p.signal).collect();
    let se = positive(&peaks.iter().map(|p| p.std_error).collect::<Vec<_>>());
    fit(&model_stretched_exp(), &xs, &ys, &se).ok()
}

/// Hahn-echo sweep, revival location and envelope fit.
pub fn cmd_echo(r: &Runner) -> Result<Report, CliError> {
    let q = &r.cfg.sequence;
    nonempty(&q.echo_grid, "echo_tau_us")?;
    let mut taus = q.echo_grid.clone();
    taus.sort_by(f64::total_cmp);
    let seqs = taus
        .iter()
        .map(|&t| q.builder.hahn(t, q.rabi_frequency))
        .collect::<Result<Vec<_>, _>>()?;
    let root = r.root();
    let pts: Vec<Population> = seqs
        .par_iter()
        .enumerate()
        .map(|(i, s)| r.population(s, r.cfg.calib.temperature, root.child(i as u64)))
        .collect::<Result<_, _>>()?;

    let mut csv = Csv::new("echo.csv", vec!["tau_us", "p1", "stderr"]);
    for (t, p) in taus.iter().zip(&pts) {
        csv.push(vec![t * 1e6, p.value, p.std_error]);
    }
    let ys: Vec<f64> = pts.iter().map(|p| p.value).collect();
    let se: Vec<f64> = pts.iter().map(|p| p.std_error).collect();
    let bath = r.cfg.bath();
    let period = bath.revival_period(&r.cfg.constants);
    let peaks = locate_revivals(&taus, &ys, &se, period);

    let mut peak_csv = Csv::new("echo_peaks.csv", vec!["k", "tau_us", "signal", "stderr"]);
    for p in &peaks {
        peak_csv.push(vec![p.k as f64, p.tau * 1e6, p.signal, p.std_error]);
    }
    let mut s = Summary::default();
    s.put("configured.t2_us", bath.t2 * 1e6);
    s.put("configured.bias_mt", bath.bias_field * 1e3);
    s.put("predicted.revival_period_us", period * 1e6);
    s.put("revivals_us", join(&peaks.iter().map(|p| p.tau * 1e6).collect::<Vec<_>>()));
    if peaks.len() >= 2 {
        let ks: Vec<f64> = peaks.iter().map(|p| p.k as f64).collect();
        let ts: Vec<f64> = peaks.iter().map(|p| p.tau * 1e6).collect();
        let step = taus.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min) * 1e6;
        let sig = vec![(step / 12f64.sqrt()).max(1e-9); ks.len()];
        let model = model_linear();
        let lf = fit(&model, &ks, &ts, &sig)?;
        s.put("revival_period_us", lf.params[0]);
        s.put("revival_period_us_stderr", lf.std_errors[0]);
    }
    match fit_revivals(&peaks) {
        Some(f) => {
            s.put("t2_us", f.params[1]);
            s.put("t2_us_stderr", f.std_errors[1]);
            s.put("stretch", f.params[2]);
            put_fit(&mut s, "fit", &model_stretched_exp(), &f);
        }
        None => s.put("fit.status", "skipped"),
    }
    Ok(Report { tables: vec![csv, peak_csv], summary: s, files: vec![] })
}

fn beam(r: &Runner, power: f64, qwp: f64, wavelength: f64) -> Result<BeamSpec, CliError> {
    Ok(BeamSpec::new(power, qwp, wavelength, r.cfg.laser.waist)?)
}

/// Double-PSD visibility against exposure time, one table per (λ, P).
pub fn cmd_psd_decoherence(r: &Runner) -> Result<Report, CliError> {
    let q = &r.cfg.sequence;
    let l = &r.cfg.laser;
    nonempty(&q.t0_grid, "t0_grid_us")?;
    nonempty(&l.decoherence_powers, "decoherence_powers_mw")?;
    nonempty(&l.decoherence_wavelengths, "decoherence_wavelengths_nm")?;

    let mut jobs = Vec::new();
    for (wi, &w) in l.decoherence_wavelengths.iter().enumerate() {
        for (pi, &p) in l.decoherence_powers.iter().enumerate() {
            let b = beam(r, p, l.qwp, w)?;
            for (ti, &t0) in q.t0_grid.iter().enumerate() {
                let seq = if t0 == 0.0 {
                    q.builder.hahn(q.tau, q.rabi_frequency)?
                } else {
                    q.builder.double_psd(q.tau, t0, b, q.rabi_frequency)?
                };
                jobs.push(((wi, pi, ti), w, seq));
            }
        }
    }
    let root = r.root();
    let pts: Vec<Population> = jobs
        .par_iter()
        .map(|((wi, pi, ti), w, seq)| {
            r.population(seq, r.temperature(*w), root.child(*wi as u64).child(*pi as u64).child(*ti as u64))
        })
        .collect::<Result<_, _>>()?;

    let mut s = Summary::default();
    let mut tables = Vec::new();
    let n = q.t0_grid.len();
    let t0_max = q.t0_grid.iter().cloned().fold(0.0, f64::max);
    for (wi, &w) in l.decoherence_wavelengths.iter().enumerate() {
        for (pi, &p) in l.decoherence_powers.iter().enumerate() {
            let base = (wi * l.decoherence_powers.len() + pi) * n;
            let name = format!("psd_decoherence_{}nm_{}mW.csv", tag(w * 1e9), tag(p * 1e3));
            let mut csv = Csv::new(name, vec!["t0_us", "visibility", "stderr"]);
            let vis: Vec<(f64, f64)> =
                pts[base..base + n].iter().map(|p| (2.0 * p.value - 1.0, 2.0 * p.std_error)).collect();
            for (t0, (v, e)) in q.t0_grid.iter().zip(&vis) {
                csv.push(vec![t0 * 1e6, *v, *e]);
            }
            tables.push(csv);
            let key = format!("curve.{}nm.{}mW", tag(w * 1e9), tag(p * 1e3));
            s.put(format!("{key}.temperature_k"), r.temperature(w));
            if n >= 2 {
                let xs: Vec<f64> = q.t0_grid.iter().map(|t| t * 1e6).collect();
                let ys: Vec<f64> = vis.iter().map(|v| v.0).collect();
                let se = positive(&vis.iter().map(|v| v.1).collect::<Vec<_>>());
                let f = fit(&model_linear(), &xs, &ys, &se)?;
                let (m, b) = (f.params[0], f.params[1]);
                s.put(format!("{key}.loss"), -m * t0_max * 1e6 / b);
                s.put(format!("{key}.loss_stderr"), f.std_errors[0] * t0_max * 1e6 / b.abs());
            }
        }
    }
    s.put("t0_max_us", t0_max * 1e6);
    Ok(Report { tables, summary: s, files: vec![] })
}

fn fields(r: &Runner, beams: &[BeamSpec], root: SeedTree) -> Result<Vec<FieldPoint>, CliError> {
    beams.par_iter().enumerate().map(|(i, b)| r.field(*b, root.child(i as u64))).collect()
}

/// Field against power at the operating QWP angle, for each wavelength.
pub fn cmd_beff_power(r: &Runner) -> Result<Report, CliError> {
    let l = &r.cfg.laser;
    nonempty(&l.powers, "powers_mw")?;
    nonempty(&l.wavelengths, "wavelengths_nm")?;
    let mut beams = Vec::new();
    for &w in &l.wavelengths {
        for &p in &l.powers {
            beams.push(beam(r, p, l.qwp, w)?);
        }
    }
    let pts = fields(r, &beams, r.root())?;
    let mut csv = Csv::new("beff_power.csv", vec!["wavelength_nm", "power_mw", "beff_nt", "stderr_nt"]);
    for (b, f) in beams.iter().zip(&pts) {
        csv.push(vec![b.wavelength * 1e9, b.power * 1e3, f.field * 1e9, f.std_error * 1e9]);
    }
    let mut s = Summary::default();
    s.put("qwp_deg", l.qwp);
    let np = l.powers.len();
    for (wi, &w) in l.wavelengths.iter().enumerate() {
        let key = format!("fit.{}nm", tag(w * 1e9));
        let chunk = &pts[wi * np..(wi + 1) * np];
        let xs: Vec<f64> = l.powers.iter().map(|p| p * 1e3).collect();
        let ys: Vec<f64> = chunk.iter().map(|f| f.field * 1e9).collect();
        let se = positive(&chunk.iter().map(|f| f.std_error * 1e9).collect::<Vec<_>>());
        let model = model_linear();
        if xs.len() < 2 {
            s.put(format!("{key}.status"), "skipped");
            continue;
        }
        let f = fit(&model, &xs, &ys, &se)?;
        put_fit(&mut s, &key, &model, &f);
        let z = if f.std_errors[1] > 0.0 { f.params[1] / f.std_errors[1] } else { 0.0 };
        s.put(format!("{key}.intercept_sigmas"), z);
        let configured = effective_field(&beam(r, 1e-3, l.qwp, w)?, &r.cfg.calib.field_model)? * 1e9;
        s.put(format!("{key}.configured_slope_nt_per_mw"), configured);
    }
    Ok(Report { tables: vec![csv], summary: s, files: vec![] })
}

/// Field against QWP angle with a sin(2θ) fit.
pub fn cmd_beff_qwp(r: &Runner) -> Result<Report, CliError> {
    let l = &r.cfg.laser;
    nonempty(&l.qwp_grid, "qwp_deg")?;
    let beams = l.qwp_grid.iter().map(|&q| beam(r, l.power, q, l.wavelength)).collect::<Result<Vec<_>, _>>()?;
    let pts = fields(r, &beams, r.root())?;
    let mut csv = Csv::new("beff_qwp.csv", vec!["qwp_deg", "beff_nt", "stderr_nt"]);
    for (q, f) in l.qwp_grid.iter().zip(&pts) {
        csv.push(vec![*q, f.field * 1e9, f.std_error * 1e9]);
    }
    let configured = effective_field(&beam(r, l.power, 45.0, l.wavelength)?, &r.cfg.calib.field_model)? * 1e9;
    let mut s = Summary::default();
    s.put("configured_amplitude_nt", configured);
    if l.qwp_grid.len() >= 3 {
        let model = model_sin2theta();
        let ys: Vec<f64> = pts.iter().map(|f| f.field * 1e9).collect();
        let se = positive(&pts.iter().map(|f| f.std_error * 1e9).collect::<Vec<_>>());
        let f = fit(&model, &l.qwp_grid, &ys, &se)?;
        // report the sign convention with a positive amplitude
        let (amp, theta0) = if f.params[0] < 0.0 { (-f.params[0], f.params[1] + 90.0) } else { (f.params[0], f.params[1]) };
        let theta0 = (theta0 + 90.0).rem_euclid(180.0) - 90.0;
        s.put("amplitude_nt", amp);
        s.put("amplitude_rel_error", amp / configured - 1.0);
        s.put("theta0_deg", theta0);
        s.put("zeros_deg", join(&[theta0, theta0 + 90.0]));
        put_fit(&mut s, "fit", &model, &f);
    } else {
        s.put("fit.status", "skipped");
    }
    Ok(Report { tables: vec![csv], summary: s, files: vec![] })
}

/// Constant of the `C/(λΔ)` law, in nT per GW/m², implied by a field model.
pub fn configured_wavelength_constant(model: &EffectiveFieldModel) -> f64 {
    1e18 * model.c_cal / (2.0 * PI * SPEED_OF_LIGHT)
}

/// Spectrum of the normalized field magnitude with a `C/(λΔ)` fit.
pub fn cmd_beff_wavelength(r: &Runner) -> Result<Report, CliError> {
    let l = &r.cfg.laser;
    nonempty(&l.spectrum, "spectrum_nm")?;
    let mut beams = Vec::new();
    for &w in &l.spectrum {
        beams.push(beam(r, l.power, 45.0, w)?);
        beams.push(beam(r, l.power, -45.0, w)?);
    }
    let pts = fields(r, &beams, r.root())?;
    let mut csv = Csv::new(
        "beff_wavelength.csv",
        vec![
            "wavelength_nm",
            "temperature_k",
            "beff_plus_nt",
            "beff_minus_nt",
            "magnitude_nt",
            "stderr_nt",
            "intensity_gw_m2",
            "normalized",
            "normalized_stderr",
        ],
    );
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut se = Vec::new();
    for (i, &w) in l.spectrum.iter().enumerate() {
        let (plus, minus) = (pts[2 * i], pts[2 * i + 1]);
        let mag = 0.5 * (plus.field - minus.field) * 1e9;
        let err = 0.5 * plus.std_error.hypot(minus.std_error) * 1e9;
        let intensity = beams[2 * i].peak_intensity() * 1e-9;
        let y = mag / intensity;
        let ye = err / intensity;
        csv.push(vec![w * 1e9, r.temperature(w), plus.field * 1e9, minus.field * 1e9, mag, err, intensity, y, ye]);
        xs.push(w * 1e9);
        ys.push(y);
        se.push(ye);
    }
    let mut s = Summary::default();
    let c_conf = configured_wavelength_constant(&r.cfg.calib.field_model);
    s.put("configured_c", c_conf);
    let zpl = r.cfg.calib.field_model.lambda_zpl * 1e9;
    s.put("lambda_zpl_nm", zpl);
    let model = model_inverse_detuning(Some(zpl));
    let f = fit(&model, &xs, &ys, &positive(&se))?;
    s.put("c", f.params[0]);
    s.put("c_rel_error", f.params[0] / c_conf - 1.0);
    put_fit(&mut s, "fit", &model, &f);
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            let ld = |x: f64| x * (1.0 / zpl - 1.0 / x);
            s.put(format!("ratio.{}_{}", tag(xs[i]), tag(xs[j])), ys[i] / ys[j]);
            s.put(format!("ratio_expected.{}_{}", tag(xs[i]), tag(xs[j])), ld(xs[j]) / ld(xs[i]));
        }
    }
    Ok(Report { tables: vec![csv], summary: s, files: vec![] })
}

/// Solves `C_cal` from anchors and echoes the updated calibration section.
pub fn cmd_calibrate(r: &Runner, anchors: &[CalibrationAnchor]) -> Result<Report, CliError> {
    let cfg = &r.cfg;
    let anchors = if anchors.is_empty() { vec![cfg.calib.anchor] } else { anchors.to_vec() };
    let zpl = cfg.calib.field_model.lambda_zpl;
    let solved = anchors
        .iter()
        .map(|a| EffectiveFieldModel::solve_c_cal(a, cfg.laser.waist, zpl))
        .collect::<Result<Vec<f64>, _>>()?;
    let c = solved[0];
    if let Some((i, ci)) = solved.iter().enumerate().find(|(_, ci)| ((*ci / c) - 1.0).abs() > 1e-9) {
        return Err(CliError::Validation(format!(
            "anchors are inconsistent: anchor 1 needs C_cal = {c:e}, anchor {} needs {ci:e}",
            i + 1
        )));
    }
    let mut updated = cfg.clone();
    updated.calib.field_model = cfg.calib.field_model.with_c_cal(c);
    updated.calib.anchor = anchors[0];
    let a = anchors[0];
    let check = effective_field(&BeamSpec::new(a.power, a.qwp_deg, a.wavelength, cfg.laser.waist)?, &updated.calib.field_model)?;
    let section = updated.calib_section();
    let mut s = Summary::default();
    s.put("c_cal", format!("{c:e}"));
    s.put("anchor_count", anchors.len());
    s.put("anchor_field_nt", check * 1e9);
    s.put("target_field_nt", a.field * 1e9);
    Ok(Report { tables: vec![], summary: s, files: vec![("calib.ini".into(), section)] })
}
