//! Bounded Levenberg–Marquardt least squares and the model library.

mod models;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use models::{
    model_damped_cosine, model_exponential, model_inverse_detuning, model_linear,
    model_sin2theta, model_stretched_exp,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("xs, ys and sigmas differ in length ({0}, {1}, {2})")]
    LengthMismatch(usize, usize, usize),
    #[error("sigma at index {0} is not positive and finite")]
    BadSigma(usize),
    #[error("data at index {0} is not finite")]
    NonFiniteData(usize),
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("model output is not finite at x = {x}")]
    NonFiniteModel { x: f64 },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("model `{0}` has no free parameters")]
    NothingToFit(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl ParamSpec {
    pub fn new(name: &str, lower: f64, upper: f64) -> Self {
        Self { name: name.to_string(), lower, upper }
    }

    pub fn free(name: &str) -> Self {
        Self::new(name, f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Starting point produced by a model's heuristic.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    pub params: Vec<f64>,
    /// The data did not support a reliable guess.
    pub degraded: bool,
    /// Indices the data cannot identify; [`fit`] holds them fixed.
    pub frozen: Vec<usize>,
}

pub type EvalFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type GuessFn = Arc<dyn Fn(&FitModel, &[f64], &[f64]) -> InitialGuess + Send + Sync>;

#[derive(Clone)]
pub struct FitModel {
    name: String,
    params: Vec<ParamSpec>,
    fixed: Vec<Option<f64>>,
    eval: EvalFn,
    guess: GuessFn,
}

impl fmt::Debug for FitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FitModel")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("fixed", &self.fixed)
            .finish_non_exhaustive()
    }
}

impl FitModel {
    pub fn new(name: &str, params: Vec<ParamSpec>, eval: EvalFn, guess: GuessFn) -> Self {
        assert!(!params.is_empty(), "a model needs at least one parameter");
        let n = params.len();
        Self { name: name.to_string(), params, fixed: vec![None; n], eval, guess }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn fixed_value(&self, index: usize) -> Option<f64> {
        self.fixed[index]
    }

    /// Holds a parameter at `value` during fitting.
    pub fn fix(mut self, name: &str, value: f64) -> Result<Self, FitError> {
        let i = self.index_of(name).ok_or_else(|| FitError::UnknownParameter(name.to_string()))?;
        self.fixed[i] = Some(value);
        Ok(self)
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| self.fixed[i].is_none()).collect()
    }

    pub fn eval(&self, params: &[f64], x: f64) -> f64 {
        (self.eval)(params, x)
    }

    pub fn initial_guess(&self, xs: &[f64], ys: &[f64]) -> InitialGuess {
        let mut g = (self.guess)(self, xs, ys);
        for (i, f) in self.fixed.iter().enumerate() {
            if let Some(v) = f {
                g.params[i] = *v;
            }
        }
        g.frozen.retain(|&i| self.fixed[i].is_none());
        g
    }

    fn clamp(&self, i: usize, v: f64) -> f64 {
        v.clamp(self.params[i].lower, self.params[i].upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitStatus {
    Converged,
    MaxIter,
    Singular,
}

impl fmt::Display for FitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitStatus::Converged => "converged",
            FitStatus::MaxIter => "max_iter",
            FitStatus::Singular => "singular",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Square roots of the covariance diagonal (zero for fixed parameters).
    pub std_errors: Vec<f64>,
    /// Full-size covariance; `None` when the normal matrix is singular.
    pub covariance: Option<DMatrix<f64>>,
    pub chi2: f64,
    pub dof: usize,
    pub reduced_chi2: f64,
    pub status: FitStatus,
    pub iterations: usize,
    /// Objective after each accepted step, starting with the initial value.
    pub objective_trace: Vec<f64>,
    pub degraded_guess: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub initial_damping: f64,
    pub max_iter: usize,
    /// Relative objective change that counts as converged.
    pub ftol: f64,
    /// Step norm, relative to `1 + |p|`, that counts as converged.
    pub xtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { initial_damping: 1e-3, max_iter: 200, ftol: 1e-10, xtol: 1e-12 }
    }
}

const MAX_DAMPING: f64 = 1e16;
const SINGULAR_EIGENVALUE: f64 = 1e-12;

/// Finite-difference step for a parameter value.
pub fn fd_step(p: f64) -> f64 {
    1e-8f64.max(1e-6 * p.abs())
}

/// Central-difference Jacobian `∂f(xᵢ)/∂pⱼ` over all parameters, falling back
/// to one-sided differences at the bounds.
pub fn jacobian(model: &FitModel, params: &[f64], xs: &[f64]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(xs.len(), params.len());
    let mut p = params.to_vec();
    for k in 0..params.len() {
        let h = fd_step(params[k]);
        let spec = &model.params[k];
        let hi = (params[k] + h).min(spec.upper);
        let lo = (params[k] - h).max(spec.lower);
        for (i, &x) in xs.iter().enumerate() {
            p[k] = hi;
            let fp = model.eval(&p, x);
            p[k] = lo;
            let fm = model.eval(&p, x);
            j[(i, k)] = (fp - fm) / (hi - lo);
        }
        p[k] = params[k];
    }
    j
}

struct Data {
    xs: Vec<f64>,
    ys: Vec<f64>,
    sigmas: Vec<f64>,
}

fn prepare(xs: &[f64], ys: &[f64], sigmas: &[f64], needed: usize) -> Result<Data, FitError> {
    if xs.len() != ys.len() || xs.len() != sigmas.len() {
        return Err(FitError::LengthMismatch(xs.len(), ys.len(), sigmas.len()));
    }
    if xs.len() < needed {
        return Err(FitError::TooFewPoints { needed, got: xs.len() });
    }
    for i in 0..xs.len() {
        if !(xs[i].is_finite() && ys[i].is_finite()) {
            return Err(FitError::NonFiniteData(i));
        }
        if !(sigmas[i] > 0.0 && sigmas[i].is_finite()) {
            return Err(FitError::BadSigma(i));
        }
    }
    // canonical order so sums do not depend on how the caller listed points
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| {
        xs[a].total_cmp(&xs[b]).then(ys[a].total_cmp(&ys[b])).then(sigmas[a].total_cmp(&sigmas[b]))
    });
    Ok(Data {
        xs: idx.iter().map(|&i| xs[i]).collect(),
        ys: idx.iter().map(|&i| ys[i]).collect(),
        sigmas: idx.iter().map(|&i| sigmas[i]).collect(),
    })
}

fn objective(model: &FitModel, p: &[f64], d: &Data) -> f64 {
    let mut s = 0.0;
    for i in 0..d.xs.len() {
        let r = (d.ys[i] - model.eval(p, d.xs[i])) / d.sigmas[i];
        s += r * r;
    }
    if s.is_finite() {
        s
    } else {
        f64::NAN
    }
}

/// Weighted Jacobian over free parameters and weighted residuals.
fn linearize(model: &FitModel, p: &[f64], free: &[usize], d: &Data) -> (DMatrix<f64>, DVector<f64>) {
    let full = jacobian(model, p, &d.xs);
    let n = d.xs.len();
    let mut j = DMatrix::zeros(n, free.len());
    let mut r = DVector::zeros(n);
    for i in 0..n {
        let w = 1.0 / d.sigmas[i];
        r[i] = (d.ys[i] - model.eval(p, d.xs[i])) * w;
        for (c, &k) in free.iter().enumerate() {
            j[(i, c)] = full[(i, k)] * w;
        }
    }
    (j, r)
}

fn is_singular(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    if diag.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return true;
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (diag[i] * diag[j]).sqrt());
    let eig = scaled.symmetric_eigenvalues();
    eig.iter().cloned().fold(f64::INFINITY, f64::min) < SINGULAR_EIGENVALUE
}

/// Minimizes `Σ((y − f(x))/σ)²` from `init` with default options.
pub fn fit_lm(model: &FitModel, xs: &[f64], ys: &[f64], sigmas: &[f64], init: &[f64]) -> Result<FitResult, FitError> {
    fit_lm_with(model, xs, ys, sigmas, init, &FitOptions::default())
}

pub fn fit_lm_with(
    model: &FitModel,
    xs: &[f64],
    ys: &[f64],
    sigmas: &[f64],
    init: &[f64],
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    let np = model.param_count();
    if init.len() != np {
        return Err(FitError::ParamCount { expected: np, got: init.len() });
    }
    let free = model.free_indices();
    if free.is_empty() {
        return Err(FitError::NothingToFit(model.name.clone()));
    }
    let d = prepare(xs, ys, sigmas, free.len())?;

    let mut p: Vec<f64> = (0..np)
        .map(|i| model.fixed[i].unwrap_or_else(|| model.clamp(i, init[i])))
        .collect();
    if let Some(&x) = d.xs.iter().find(|&&x| !model.eval(&p, x).is_finite()) {
        return Err(FitError::NonFiniteModel { x });
    }

    let mut chi2 = objective(model, &p, &d);
    let mut trace = vec![chi2];
    let mut lambda = opts.initial_damping;
    let mut status = FitStatus::MaxIter;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iter {
        iterations += 1;
        let (j, r) = linearize(model, &p, &free, &d);
        let a = j.transpose() * &j;
        let g = j.transpose() * r;
        let max_diag = (0..free.len()).map(|i| a[(i, i)]).fold(0.0, f64::max);
        loop {
            let mut m = a.clone();
            for i in 0..free.len() {
                m[(i, i)] += lambda * a[(i, i)].max(1e-12 * max_diag).max(f64::MIN_POSITIVE);
            }
            let step = m.cholesky().map(|c| c.solve(&g));
            if let Some(delta) = step.filter(|s| s.iter().all(|v| v.is_finite())) {
                let mut trial = p.clone();
                for (c, &k) in free.iter().enumerate() {
                    trial[k] = model.clamp(k, p[k] + delta[c]);
                }
                let chi2_t = objective(model, &trial, &d);
                if chi2_t <= chi2 {
                    let moved: f64 = free.iter().map(|&k| (trial[k] - p[k]).powi(2)).sum::<f64>().sqrt();
                    let scale: f64 = free.iter().map(|&k| p[k] * p[k]).sum::<f64>().sqrt();
                    let rel = (chi2 - chi2_t) / chi2.max(f64::MIN_POSITIVE);
                    p = trial;
                    chi2 = chi2_t;
                    trace.push(chi2);
                    lambda = (lambda / 10.0).max(1e-15);
                    if rel < opts.ftol || moved < opts.xtol * (1.0 + scale) {
                        status = FitStatus::Converged;
                        break 'outer;
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > MAX_DAMPING {
                // no downhill step exists at any damping: a stationary point
                status = FitStatus::Converged;
                break 'outer;
            }
        }
    }

    let (j, _) = linearize(model, &p, &free, &d);
    let a = j.transpose() * &j;
    let dof = d.xs.len() - free.len();
    let reduced_chi2 = if dof > 0 { chi2 / dof as f64 } else { f64::NAN };
    let mut covariance = None;
    let mut std_errors = vec![0.0; np];
    if is_singular(&a) {
        status = FitStatus::Singular;
    } else if let Some(inv) = a.clone().cholesky().map(|c| c.inverse()) {
        let scale = if dof > 0 { reduced_chi2 } else { 1.0 };
        let mut full = DMatrix::zeros(np, np);
        for (ci, &ki) in free.iter().enumerate() {
            for (cj, &kj) in free.iter().enumerate() {
                full[(ki, kj)] = 0.5 * (inv[(ci, cj)] + inv[(cj, ci)]) * scale;
            }
        }
        for &k in &free {
            std_errors[k] = full[(k, k)].max(0.0).sqrt();
        }
        covariance = Some(full);
    } else {
        status = FitStatus::Singular;
    }

    Ok(FitResult {
        params: p,
        std_errors,
        covariance,
        chi2,
        dof,
        reduced_chi2,
        status,
        iterations,
        objective_trace: trace,
        degraded_guess: false,
    })
}

/// Fits from the model's own initial guess, holding unidentifiable
/// parameters at their guessed values.
pub fn fit(model: &FitModel, xs: &[f64], ys: &[f64], sigmas: &[f64]) -> Result<FitResult, FitError> {
    let d = prepare(xs, ys, sigmas, 0)?;
    let guess = model.initial_guess(&d.xs, &d.ys);
    let mut m = model.clone();
    for &i in &guess.frozen {
        m.fixed[i] = Some(guess.params[i]);
    }
    let mut r = fit_lm(&m, &d.xs, &d.ys, &d.sigmas, &guess.params)?;
    r.degraded_guess = guess.degraded;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin() -> FitModel {
        model_linear()
    }

    #[test]
    fn exact_data_converges_immediately() {
        let m = model_sin2theta();
        let xs: Vec<f64> = (0..13).map(|i| -45.0 + 15.0 * i as f64).collect();
        let truth = [60.0, 3.0, 1.0];
        let ys: Vec<f64> = xs.iter().map(|&x| m.eval(&truth, x)).collect();
        let r = fit_lm(&m, &xs, &ys, &[1.0; 13], &truth).unwrap();
        assert_eq!(r.status, FitStatus::Converged);
        assert!(r.iterations <= 2);
        assert!(r.chi2 < 1e-20);
    }

    #[test]
    fn degenerate_model_is_singular() {
        let eval: EvalFn = Arc::new(|p, x| (p[0] + p[1]) * x);
        let guess: GuessFn = Arc::new(|_, _, _| InitialGuess { params: vec![1.0, 1.0], degraded: false, frozen: vec![] });
        let m = FitModel::new("dup", vec![ParamSpec::free("a"), ParamSpec::free("b")], eval, guess);
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [3.0, 6.1, 8.9, 12.0];
        let r = fit_lm(&m, &xs, &ys, &[0.1; 4], &[1.0, 1.0]).unwrap();
        assert_eq!(r.status, FitStatus::Singular);
        assert!(r.covariance.is_none());
    }

    #[test]
    fn input_errors() {
        let m = lin();
        assert!(matches!(fit_lm(&m, &[1.0], &[1.0], &[1.0], &[0.0, 0.0]), Err(FitError::TooFewPoints { .. })));
        assert!(matches!(fit_lm(&m, &[1.0, 2.0], &[1.0], &[1.0, 1.0], &[0.0, 0.0]), Err(FitError::LengthMismatch(..))));
        assert!(matches!(fit_lm(&m, &[1.0, 2.0], &[1.0, 2.0], &[1.0, 0.0], &[0.0, 0.0]), Err(FitError::BadSigma(1))));
        let inv = model_inverse_detuning(Some(637.0));
        assert!(matches!(
            fit_lm(&inv, &[600.0, 700.0], &[1.0, 2.0], &[1.0, 1.0], &[1.0, 637.0]),
            Err(FitError::NonFiniteModel { .. })
        ));
    }

    #[test]
    fn objective_never_increases() {
        let m = model_damped_cosine();
        let truth = [0.5, 2.0, 2.0, 5.0, 0.3, 0.5];
        let xs: Vec<f64> = (0..301).map(|i| i as f64 * 0.02).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| m.eval(&truth, x)).collect();
        let r = fit_lm(&m, &xs, &ys, &vec![0.01; xs.len()], &[0.4, 1.5, 1.8, 5.05, 0.2, 0.45]).unwrap();
        assert!(r.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.status, FitStatus::Converged);
    }

    #[test]
    fn fixed_parameters_stay_put() {
        let m = model_stretched_exp().fix("p", 1.5).unwrap();
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 2.0 * (-(x / 7.0f64).powf(1.5)).exp() + 0.1).collect();
        let r = fit(&m, &xs, &ys, &[0.01; 20]).unwrap();
        assert_eq!(r.params[2], 1.5);
        assert_eq!(r.std_errors[2], 0.0);
        assert!((r.params[1] - 7.0).abs() < 1e-6);
        assert!(m.clone().fix("nope", 1.0).is_err());
    }

    #[test]
    fn two_points_exact_line() {
        let r = fit(&lin(), &[1.0, 3.0], &[5.0, 11.0], &[1.0, 1.0]).unwrap();
        assert!((r.params[0] - 3.0).abs() < 1e-12 && (r.params[1] - 2.0).abs() < 1e-12);
        assert_eq!(r.dof, 0);
    }
}
