//! Gaussian-process surrogate with an anisotropic Matérn-5/2 kernel.
//!
//! Inputs are expected in normalized actuator units (`[-1, 1]^5`); targets are
//! standardized internally. Hyperparameters (log lengthscales, log signal
//! variance, log noise variance) are fitted by projected gradient ascent on
//! the log marginal likelihood inside configurable bounds.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DIM: usize = 5;
const N_PARAMS: usize = DIM + 2;
const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("no training data")]
    NoData,
    #[error("non-finite training data")]
    NonFinite,
    #[error("kernel matrix is not positive definite even with jitter {0:e}")]
    NotPositiveDefinite(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub lengthscale_bounds: [f64; 2],
    pub signal_variance_bounds: [f64; 2],
    pub noise_variance_bounds: [f64; 2],
    /// Gradient-ascent iterations per start.
    pub fit_iterations: usize,
    /// Initial jitter added on Cholesky failure; escalated tenfold up to `max_jitter`.
    pub jitter: f64,
    pub max_jitter: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            lengthscale_bounds: [0.05, 20.0],
            signal_variance_bounds: [0.05, 20.0],
            noise_variance_bounds: [1e-6, 0.1],
            fit_iterations: 80,
            jitter: 1e-9,
            max_jitter: 1e-3,
        }
    }
}

/// Kernel hyperparameters in natural units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lengthscales: [f64; DIM],
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Hyperparameters {
    fn to_log(self) -> [f64; N_PARAMS] {
        let mut t = [0.0; N_PARAMS];
        for (d, l) in self.lengthscales.iter().enumerate() {
            t[d] = l.ln();
        }
        t[DIM] = self.signal_variance.ln();
        t[DIM + 1] = self.noise_variance.ln();
        t
    }

    fn from_log(t: &[f64; N_PARAMS]) -> Self {
        let mut lengthscales = [0.0; DIM];
        for (d, l) in lengthscales.iter_mut().enumerate() {
            *l = t[d].exp();
        }
        Self {
            lengthscales,
            signal_variance: t[DIM].exp(),
            noise_variance: t[DIM + 1].exp(),
        }
    }
}

fn matern52(r: f64) -> f64 {
    (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * (-SQRT5 * r).exp()
}

fn scaled_sq(a: &[f64; DIM], b: &[f64; DIM], ls: &[f64; DIM]) -> [f64; DIM] {
    let mut out = [0.0; DIM];
    for d in 0..DIM {
        let z = (a[d] - b[d]) / ls[d];
        out[d] = z * z;
    }
    out
}

pub fn kernel(a: &[f64; DIM], b: &[f64; DIM], h: &Hyperparameters) -> f64 {
    let r = scaled_sq(a, b, &h.lengthscales).iter().sum::<f64>().sqrt();
    h.signal_variance * matern52(r)
}

struct Factorization {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn factorize(
    x: &[[f64; DIM]],
    y: &DVector<f64>,
    h: &Hyperparameters,
    config: &GpConfig,
) -> Result<Factorization, GpError> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(&x[i], &x[j], h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let mut jitter = 0.0;
    loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += h.noise_variance + jitter;
        }
        if let Some(chol) = Cholesky::new(kj) {
            let alpha = chol.solve(y);
            return Ok(Factorization { chol, alpha, jitter });
        }
        jitter = if jitter == 0.0 { config.jitter } else { jitter * 10.0 };
        if jitter > config.max_jitter {
            return Err(GpError::NotPositiveDefinite(jitter / 10.0));
        }
    }
}

/// Log marginal likelihood and its gradient with respect to the log parameters.
fn lml_and_grad(
    x: &[[f64; DIM]],
    y: &DVector<f64>,
    theta: &[f64; N_PARAMS],
    config: &GpConfig,
) -> Result<(f64, [f64; N_PARAMS]), GpError> {
    let h = Hyperparameters::from_log(theta);
    let f = factorize(x, y, &h, config)?;
    let n = x.len();
    let log_det: f64 = f.chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * y.dot(&f.alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // W = alpha alpha^T - K^-1
    let k_inv = f.chol.inverse();
    let w = &f.alpha * f.alpha.transpose() - k_inv;

    let mut grad = [0.0; N_PARAMS];
    for i in 0..n {
        for j in 0..n {
            let wij = w[(i, j)];
            let sq = scaled_sq(&x[i], &x[j], &h.lengthscales);
            let r = sq.iter().sum::<f64>().sqrt();
            let e = (-SQRT5 * r).exp();
            let base = h.signal_variance * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e;
            for d in 0..DIM {
                grad[d] += wij * base * sq[d];
            }
            grad[DIM] += wij * h.signal_variance * matern52(r);
        }
        grad[DIM + 1] += w[(i, i)] * (h.noise_variance + f.jitter);
    }
    for g in grad.iter_mut() {
        *g *= 0.5;
    }
    Ok((lml, grad))
}

fn bounds(config: &GpConfig) -> [[f64; 2]; N_PARAMS] {
    let ln = |b: [f64; 2]| [b[0].ln(), b[1].ln()];
    let mut out = [ln(config.lengthscale_bounds); N_PARAMS];
    out[DIM] = ln(config.signal_variance_bounds);
    out[DIM + 1] = ln(config.noise_variance_bounds);
    out
}

fn project(theta: &mut [f64; N_PARAMS], b: &[[f64; 2]; N_PARAMS]) {
    for (t, [lo, hi]) in theta.iter_mut().zip(b) {
        *t = t.clamp(*lo, *hi);
    }
}

/// Projected gradient ascent with an adaptive step.
fn maximize(
    x: &[[f64; DIM]],
    y: &DVector<f64>,
    start: [f64; N_PARAMS],
    config: &GpConfig,
) -> Option<([f64; N_PARAMS], f64)> {
    let b = bounds(config);
    let mut theta = start;
    project(&mut theta, &b);
    let (mut value, mut grad) = lml_and_grad(x, y, &theta, config).ok()?;
    let mut step = 0.1;
    for _ in 0..config.fit_iterations {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-8 {
            break;
        }
        let mut accepted = false;
        while step > 1e-6 {
            let mut trial = theta;
            for (t, g) in trial.iter_mut().zip(grad) {
                *t += step * g / norm;
            }
            project(&mut trial, &b);
            match lml_and_grad(x, y, &trial, config) {
                Ok((v, g)) if v > value => {
                    theta = trial;
                    value = v;
                    grad = g;
                    step *= 1.5;
                    accepted = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            break;
        }
    }
    Some((theta, value))
}

#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<[f64; DIM]>,
    y_mean: f64,
    y_scale: f64,
    hyper: Hyperparameters,
    log_likelihood: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl GpModel {
    /// Fits hyperparameters by maximum marginal likelihood.
    pub fn fit(x: &[[f64; DIM]], y: &[f64], config: &GpConfig) -> Result<Self, GpError> {
        let (y_mean, y_scale, ys) = standardize(x, y)?;
        let mid = |b: [f64; 2]| (b[0] * b[1]).sqrt();
        let starts = [
            Hyperparameters {
                lengthscales: [0.5; DIM],
                signal_variance: 1.0,
                noise_variance: 1e-4,
            },
            Hyperparameters {
                lengthscales: [1.5; DIM],
                signal_variance: 1.0,
                noise_variance: 1e-3,
            },
            Hyperparameters {
                lengthscales: [mid(config.lengthscale_bounds); DIM],
                signal_variance: mid(config.signal_variance_bounds),
                noise_variance: mid(config.noise_variance_bounds),
            },
        ];
        let mut best: Option<([f64; N_PARAMS], f64)> = None;
        for s in starts {
            if let Some((theta, v)) = maximize(x, &ys, s.to_log(), config) {
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((theta, v));
                }
            }
        }
        let (theta, _) = best.ok_or(GpError::NotPositiveDefinite(config.max_jitter))?;
        Self::build(x, y_mean, y_scale, ys, Hyperparameters::from_log(&theta), config)
    }

    /// Conditions on data with fixed hyperparameters.
    pub fn with_hyperparameters(
        x: &[[f64; DIM]],
        y: &[f64],
        hyper: Hyperparameters,
        config: &GpConfig,
    ) -> Result<Self, GpError> {
        let (y_mean, y_scale, ys) = standardize(x, y)?;
        Self::build(x, y_mean, y_scale, ys, hyper, config)
    }

    fn build(
        x: &[[f64; DIM]],
        y_mean: f64,
        y_scale: f64,
        ys: DVector<f64>,
        hyper: Hyperparameters,
        config: &GpConfig,
    ) -> Result<Self, GpError> {
        let f = factorize(x, &ys, &hyper, config)?;
        let (log_likelihood, _) = lml_and_grad(x, &ys, &hyper.to_log(), config)?;
        Ok(Self {
            x: x.to_vec(),
            y_mean,
            y_scale,
            hyper,
            log_likelihood,
            chol: f.chol,
            alpha: f.alpha,
        })
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Standardizes a raw target value with the training statistics.
    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    /// Posterior mean and latent variance in standardized units.
    pub fn predict_standardized(&self, x: &[f64; DIM]) -> (f64, f64) {
        let k_star = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| kernel(xi, x, &self.hyper)));
        let mean = k_star.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&k_star).expect("triangular solve");
        let var = self.hyper.signal_variance - v.dot(&v);
        // cancellation noise at conditioned points
        let var = if var < 1e-12 * self.hyper.signal_variance {
            0.0
        } else {
            var
        };
        (mean, var)
    }

    /// Posterior mean and latent variance in the original target units.
    pub fn predict(&self, x: &[f64; DIM]) -> (f64, f64) {
        let (m, v) = self.predict_standardized(x);
        (m * self.y_scale + self.y_mean, v * self.y_scale * self.y_scale)
    }
}

fn standardize(x: &[[f64; DIM]], y: &[f64]) -> Result<(f64, f64, DVector<f64>), GpError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(GpError::NoData);
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GpError::NonFinite);
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - mean) / scale));
    Ok((mean, scale, ys))
}
