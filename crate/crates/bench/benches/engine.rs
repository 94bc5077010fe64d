use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nvsim_core::bath::{OuConfig, OuProcess};
use nvsim_core::fitkit::{fit, model_damped_cosine};
use nvsim_core::optics::BeamSpec;
use nvsim_core::pulseseq::{build_beff, build_hahn, simulate, EngineMode, Half, SimConfig};
use nvsim_core::rng::SeedTree;

const OMEGA: f64 = 2.0 * PI * 5e6;

fn engine(c: &mut Criterion) {
    let beam = BeamSpec::new(20e-3, 45.0, 785e-9, 1e-6).unwrap();
    let beff = build_beff(21e-6, 20e-6, beam, Half::First, OMEGA).unwrap();
    let hahn = build_hahn(21e-6, OMEGA).unwrap();

    let mut g = c.benchmark_group("simulate");
    g.bench_function("analytic_beff", |b| b.iter(|| simulate(black_box(&beff), &SimConfig::default()).unwrap()));
    for shots in [1_000u64, 10_000] {
        let cfg = SimConfig { mode: EngineMode::MonteCarlo, shots, ..SimConfig::default() };
        g.bench_with_input(BenchmarkId::new("mc_hahn", shots), &cfg, |b, cfg| {
            b.iter(|| simulate(black_box(&hahn), cfg).unwrap())
        });
    }
    g.finish();
}

fn fitting(c: &mut Criterion) {
    let m = model_damped_cosine();
    let truth = [0.5, 2.0, 2.0, 5.0, 0.3, 0.5];
    let xs: Vec<f64> = (0..121).map(|i| i as f64 * 0.05).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| m.eval(&truth, x)).collect();
    let sig = vec![0.01; xs.len()];
    c.bench_function("fit_damped_cosine_121", |b| b.iter(|| fit(&m, black_box(&xs), black_box(&ys), &sig).unwrap()));
}

fn ou(c: &mut Criterion) {
    let cfg = OuConfig::default();
    c.bench_function("ou_advance_integrated_1000", |b| {
        b.iter(|| {
            let mut rng = SeedTree::new(1).rng();
            let mut x = OuProcess::stationary(&cfg, &mut rng);
            (0..1000).map(|_| x.advance_integrated(black_box(1e-6), &mut rng)).sum::<f64>()
        })
    });
}

criterion_group!(benches, engine, fitting, ou);
criterion_main!(benches);
