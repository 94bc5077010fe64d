use std::f64::consts::PI;

use nvsim_core::fitkit::{
    fit, model_damped_cosine, model_inverse_detuning, model_sin2theta, model_stretched_exp, FitStatus,
};
use nvsim_core::rng::SeedTree;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn damped_cosine_frequency_coverage() {
    let m = model_damped_cosine();
    let truth = [0.5, 2.0, 2.0, 5.0, 0.0, 0.5];
    let xs = grid(0.0, 6.0, 121);
    let mut rng = SeedTree::new(21).rng();
    let mut covered = 0;
    for _ in 0..100 {
        let ys: Vec<f64> = xs.iter().map(|&x| m.eval(&truth, x) + 0.02 * rng.sample::<f64, _>(StandardNormal)).collect();
        let r = fit(&m, &xs, &ys, &vec![0.02; xs.len()]).unwrap();
        assert_eq!(r.status, FitStatus::Converged);
        if (r.params[3] - truth[3]).abs() <= 3.0 * r.std_errors[3] {
            covered += 1;
        }
    }
    assert!(covered >= 95, "{covered}/100");
}

#[test]
fn sin2theta_amplitude_and_offset() {
    let m = model_sin2theta();
    let xs = grid(-45.0, 135.0, 13);
    for &shift in &[0.0, 3.0, -7.5] {
        let truth = [60.0, shift, 0.0];
        let mut rng = SeedTree::new(22).rng();
        let ys: Vec<f64> = xs.iter().map(|&x| m.eval(&truth, x) + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let r = fit(&m, &xs, &ys, &vec![0.3; xs.len()]).unwrap();
        assert!((r.params[0] / 60.0 - 1.0).abs() < 0.01);
        assert!((r.params[1] - shift).abs() < 0.5, "{} vs {shift}", r.params[1]);
    }
}

#[test]
fn inverse_detuning_recovers_constant() {
    let zpl = 637.0;
    let m = model_inverse_detuning(Some(zpl));
    let xs = [705.0, 730.0, 785.0, 818.0];
    let truth = [1.1, zpl];
    let mut rng = SeedTree::new(23).rng();
    let ys: Vec<f64> = xs.iter().map(|&x| m.eval(&truth, x) * (1.0 + 0.002 * rng.sample::<f64, _>(StandardNormal))).collect();
    let sig: Vec<f64> = ys.iter().map(|y| 0.002 * y).collect();
    let r = fit(&m, &xs, &ys, &sig).unwrap();
    assert!((r.params[0] / 1.1 - 1.0).abs() < 0.01);
    assert_eq!(r.params[1], zpl);
}

#[test]
fn stretched_exp_round_trip() {
    let m = model_stretched_exp();
    let truth = [0.5, 100.0, 2.0, 0.5];
    let xs = grid(10.0, 250.0, 30);
    let ys: Vec<f64> = xs.iter().map(|&x| m.eval(&truth, x)).collect();
    let r = fit(&m, &xs, &ys, &vec![1e-3; xs.len()]).unwrap();
    for (g, t) in r.params.iter().zip(truth) {
        assert!((g - t).abs() < 1e-6 * t.abs().max(1.0), "{:?}", r.params);
    }
}

#[test]
fn shuffled_input_gives_identical_fit() {
    let m = model_damped_cosine();
    let truth = [0.4, 3.0, 1.5, 2.0, PI / 5.0, 0.1];
    let xs = grid(0.0, 8.0, 60);
    let mut rng = SeedTree::new(24).rng();
    let ys: Vec<f64> = xs.iter().map(|&x| m.eval(&truth, x) + 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
    let sig: Vec<f64> = (0..60).map(|i| 0.01 * (1.0 + 0.01 * i as f64)).collect();
    let a = fit(&m, &xs, &ys, &sig).unwrap();
    let mut idx: Vec<usize> = (0..60).collect();
    idx.shuffle(&mut rng);
    let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let b = fit(&m, &pick(&xs), &pick(&ys), &pick(&sig)).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.std_errors, b.std_errors);
    assert_eq!(a.chi2, b.chi2);
}
