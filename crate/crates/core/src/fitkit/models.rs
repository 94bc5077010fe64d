use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{FitModel, InitialGuess, ParamSpec};

const POS: f64 = f64::MIN_POSITIVE;
const INF: f64 = f64::INFINITY;

/// Ordinary least squares on the given columns; `None` if rank deficient.
fn least_squares(cols: &[Vec<f64>], ys: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = ys.len();
    let a = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let b = DVector::from_column_slice(ys);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || svd.singular_values.min() < 1e-12 * smax {
        return None;
    }
    let x = svd.solve(&b, 0.0).ok()?;
    let ss = (a * &x - b).norm_squared();
    Some((x.iter().cloned().collect(), ss))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn is_flat(ys: &[f64]) -> bool {
    let m = mean(ys);
    ys.iter().all(|&y| (y - m).abs() <= 1e-12 * m.abs().max(1e-300))
}

fn span(xs: &[f64]) -> (f64, f64) {
    let lo = xs.iter().cloned().fold(INF, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(move |i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
}

fn decay(x: f64, t: f64, p: f64) -> f64 {
    (-(x.abs() / t).powf(p)).exp()
}

/// Grid over `(T, p)` with `(a, c)` solved linearly at each node.
fn decay_grid(model: &FitModel, xs: &[f64], ys: &[f64], ti: usize, pi: usize) -> (f64, f64, f64, f64) {
    let (lo, hi) = span(xs);
    let width = (hi - lo).max(hi.abs()).max(POS);
    let ps: Vec<f64> = match model.fixed_value(pi) {
        Some(p) => vec![p],
        None => vec![1.0, 1.5, 2.0, 2.5, 3.0],
    };
    let ts: Vec<f64> = match model.fixed_value(ti) {
        Some(t) => vec![t],
        None => log_grid(width / 100.0, width * 10.0, 121).collect(),
    };
    let ones = vec![1.0; xs.len()];
    let mut best = (INF, 0.0, width, 2.0, mean(ys));
    for &p in &ps {
        for &t in &ts {
            let g: Vec<f64> = xs.iter().map(|&x| decay(x, t, p)).collect();
            if let Some((coef, ss)) = least_squares(&[g, ones.clone()], ys) {
                if ss < best.0 {
                    best = (ss, coef[0], t, p, coef[1]);
                }
            }
        }
    }
    (best.1, best.2, best.3, best.4)
}

/// `y = a·exp(−(t/T)^p)·cos(2πft + φ₀) + c`; parameters `[a, T, p, f, φ0, c]`.
pub fn model_damped_cosine() -> FitModel {
    FitModel::new(
        "damped_cosine",
        vec![
            ParamSpec::free("a"),
            ParamSpec::new("T", POS, INF),
            ParamSpec::new("p", 0.5, 4.0),
            ParamSpec::new("f", 0.0, INF),
            ParamSpec::free("phi0"),
            ParamSpec::free("c"),
        ],
        Arc::new(|p, t| p[0] * decay(t, p[1], p[2]) * (2.0 * PI * p[3] * t + p[4]).cos() + p[5]),
        Arc::new(guess_damped_cosine),
    )
}

fn guess_damped_cosine(model: &FitModel, xs: &[f64], ys: &[f64]) -> InitialGuess {
    let c = mean(ys);
    let (lo, hi) = span(xs);
    let width = (hi - lo).max(POS);
    if is_flat(ys) || xs.len() < 4 {
        return InitialGuess {
            params: vec![0.0, width, 2.0, 1.0 / width, 0.0, c],
            degraded: true,
            frozen: vec![1, 2, 3, 4],
        };
    }
    let dev: Vec<f64> = ys.iter().map(|y| y - c).collect();
    // periodogram on the Nyquist range of the mean sample spacing, 8x oversampled
    let nyquist = 0.5 * (xs.len() - 1) as f64 / width;
    let df = 1.0 / (8.0 * width);
    let power = |f: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for (&x, &d) in xs.iter().zip(&dev) {
            let (s, co) = (2.0 * PI * f * (x - lo)).sin_cos();
            re += d * co;
            im -= d * s;
        }
        (re, im)
    };
    let mut f_best = df;
    let mut p_best = -1.0;
    let mut f = df;
    while f <= nyquist {
        let (re, im) = power(f);
        let pw = re * re + im * im;
        if pw > p_best {
            p_best = pw;
            f_best = f;
        }
        f += df;
    }
    // golden-section refinement inside the winning bin
    let (mut a, mut b) = ((f_best - df).max(0.0), f_best + df);
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let m1 = b - gr * (b - a);
        let m2 = a + gr * (b - a);
        let p1 = { let (r, i) = power(m1); r * r + i * i };
        let p2 = { let (r, i) = power(m2); r * r + i * i };
        if p1 > p2 {
            b = m2;
        } else {
            a = m1;
        }
    }
    let freq = 0.5 * (a + b);
    let (re, im) = power(freq);
    let phi0 = im.atan2(re) - 2.0 * PI * freq * lo;

    // envelope from the RMS of one-period windows
    let period = 1.0 / freq.max(POS);
    let mut windows: Vec<(f64, f64)> = Vec::new();
    let mut start = lo;
    while start < hi {
        let sel: Vec<f64> = xs
            .iter()
            .zip(&dev)
            .filter(|(&x, _)| x >= start && x < start + period)
            .map(|(_, &d)| d * d)
            .collect();
        if !sel.is_empty() {
            windows.push((start + 0.5 * period, (2.0 * mean(&sel)).sqrt()));
        }
        start += period;
    }
    let a0 = windows.first().map_or(dev.iter().fold(0.0, |m, d| f64::max(m, d.abs())), |w| w.1);
    let threshold = a0 / std::f64::consts::E;
    let t_decay = windows
        .iter()
        .find(|w| w.1 < threshold)
        .map_or(width, |w| (w.0 - lo).max(period));
    let pinned = |i: usize, v: f64| model.fixed_value(i).unwrap_or(v);
    InitialGuess {
        params: vec![a0, pinned(1, t_decay), pinned(2, 2.0), freq, phi0, c],
        degraded: freq * width < 2.0,
        frozen: vec![],
    }
}

/// `y = a·exp(−(x/T)^p) + c`; parameters `[a, T, p, c]`.
pub fn model_stretched_exp() -> FitModel {
    FitModel::new(
        "stretched_exp",
        vec![
            ParamSpec::free("a"),
            ParamSpec::new("T", POS, INF),
            ParamSpec::new("p", 0.2, 5.0),
            ParamSpec::free("c"),
        ],
        Arc::new(|p, x| p[0] * decay(x, p[1], p[2]) + p[3]),
        Arc::new(guess_stretched),
    )
}

/// Stretched exponential with `p = 1`.
pub fn model_exponential() -> FitModel {
    let mut m = model_stretched_exp().fix("p", 1.0).expect("p exists");
    m.name = "exponential".into();
    m
}

fn guess_stretched(model: &FitModel, xs: &[f64], ys: &[f64]) -> InitialGuess {
    if is_flat(ys) {
        let (_, hi) = span(xs);
        return InitialGuess {
            params: vec![0.0, hi.abs().max(1.0), model.fixed_value(2).unwrap_or(1.0), mean(ys)],
            degraded: true,
            frozen: vec![1, 2],
        };
    }
    let (a, t, p, c) = decay_grid(model, xs, ys, 1, 2);
    InitialGuess { params: vec![a, t, p, c], degraded: false, frozen: vec![] }
}

/// `y = A·sin(2(θ − θ₀)) + c` with angles in degrees; parameters `[A, theta0, c]`.
pub fn model_sin2theta() -> FitModel {
    FitModel::new(
        "sin2theta",
        vec![ParamSpec::free("A"), ParamSpec::free("theta0"), ParamSpec::free("c")],
        Arc::new(|p, th| p[0] * (2.0 * (th - p[1]).to_radians()).sin() + p[2]),
        Arc::new(guess_sin2theta),
    )
}

fn guess_sin2theta(_: &FitModel, xs: &[f64], ys: &[f64]) -> InitialGuess {
    let s: Vec<f64> = xs.iter().map(|t| (2.0 * t.to_radians()).sin()).collect();
    let c: Vec<f64> = xs.iter().map(|t| (2.0 * t.to_radians()).cos()).collect();
    let ones = vec![1.0; xs.len()];
    match least_squares(&[s, c, ones], ys) {
        Some((k, _)) if !is_flat(ys) => {
            let amp = k[0].hypot(k[1]);
            let theta0 = 0.5 * (-k[1]).atan2(k[0]).to_degrees();
            InitialGuess { params: vec![amp, theta0, k[2]], degraded: false, frozen: vec![] }
        }
        _ => InitialGuess { params: vec![0.0, 0.0, mean(ys)], degraded: true, frozen: vec![1] },
    }
}

/// `y = m·x + b`; parameters `[m, b]`.
pub fn model_linear() -> FitModel {
    FitModel::new(
        "linear",
        vec![ParamSpec::free("m"), ParamSpec::free("b")],
        Arc::new(|p, x| p[0] * x + p[1]),
        Arc::new(|_, xs, ys| {
            let ones = vec![1.0; xs.len()];
            match least_squares(&[xs.to_vec(), ones], ys) {
                Some((k, _)) => InitialGuess { params: k, degraded: false, frozen: vec![] },
                None => InitialGuess { params: vec![0.0, mean(ys)], degraded: true, frozen: vec![] },
            }
        }),
    )
}

/// `y = C/(λ·(1/λ_ZPL − 1/λ))`; parameters `[C, lambda_zpl]`. Passing
/// `Some(λ_ZPL)` holds the line fixed. Undefined for `λ ≤ λ_ZPL`.
pub fn model_inverse_detuning(lambda_zpl: Option<f64>) -> FitModel {
    let m = FitModel::new(
        "inverse_detuning",
        vec![ParamSpec::free("C"), ParamSpec::new("lambda_zpl", POS, INF)],
        Arc::new(|p, lam| {
            if lam > p[1] {
                p[0] / (lam * (1.0 / p[1] - 1.0 / lam))
            } else {
                f64::NAN
            }
        }),
        Arc::new(guess_inverse_detuning),
    );
    match lambda_zpl {
        Some(v) => m.fix("lambda_zpl", v).expect("parameter exists"),
        None => m,
    }
}

fn guess_inverse_detuning(model: &FitModel, xs: &[f64], ys: &[f64]) -> InitialGuess {
    let (lo, _) = span(xs);
    let candidates: Vec<f64> = match model.fixed_value(1) {
        Some(z) => vec![z],
        None => (0..400).map(|i| lo * (0.5 + 0.4995 * i as f64 / 399.0)).collect(),
    };
    let mut best = (INF, 0.0, candidates[0]);
    for &z in &candidates {
        if xs.iter().any(|&x| x <= z) {
            continue;
        }
        let g: Vec<f64> = xs.iter().map(|&x| 1.0 / (x * (1.0 / z - 1.0 / x))).collect();
        if let Some((k, ss)) = least_squares(&[g], ys) {
            if ss < best.0 {
                best = (ss, k[0], z);
            }
        }
    }
    InitialGuess { params: vec![best.1, best.2], degraded: !best.0.is_finite(), frozen: vec![] }
}
