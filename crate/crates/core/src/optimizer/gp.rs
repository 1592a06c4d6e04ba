//! Gaussian-process regression with ARD kernels and marginal-likelihood
//! hyperparameter fitting.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::rng_for;
use crate::exec::{self, ExecMode};

pub const LENGTH_SCALE_BOUNDS: (f64, f64) = (1e-3, 10.0);
pub const SIGNAL_VARIANCE_BOUNDS: (f64, f64) = (1e-3, 1e3);
pub const JITTER_START: f64 = 1e-10;
pub const JITTER_CAP: f64 = 1e-4;

const SQRT5: f64 = 2.236_067_977_499_79;
const FIT_STREAM_BASE: u64 = 2 << 32;
const N_RANDOM_STARTS: usize = 4;
const MAX_ASCENT_STEPS: usize = 200;
const ASCENT_TOLERANCE: f64 = 1e-7;
const MAX_HALVINGS: usize = 40;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Matern52,
    SquaredExponential,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("a GP needs at least 2 distinct points, got {0}")]
    TooFewPoints(usize),
    #[error("covariance not positive definite even with jitter {0}")]
    NotPositiveDefinite(f64),
    #[error("points and values differ in length")]
    LengthMismatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub length_scales: Vec<f64>,
    pub signal_variance: f64,
}

impl Hyperparameters {
    fn to_log(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.length_scales.iter().map(|l| l.ln()).collect();
        t.push(self.signal_variance.ln());
        t
    }

    fn from_log(theta: &[f64]) -> Self {
        let d = theta.len() - 1;
        Self {
            length_scales: theta[..d].iter().map(|t| t.exp()).collect(),
            signal_variance: theta[d].exp(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GpModel {
    kernel: Kernel,
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_std: f64,
    hyper: Hyperparameters,
    jitter: f64,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    log_marginal_likelihood: f64,
    degenerate: bool,
}

impl GpModel {
    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// True when every target was identical; the model then predicts the
    /// constant with zero variance.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    /// Posterior mean and variance in standardized units, variance clamped
    /// at zero.
    pub fn predict_standardized(&self, point: &[f64]) -> (f64, f64) {
        let Some(chol) = &self.chol else {
            return (0.0, 0.0);
        };
        let k: DVector<f64> = DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .map(|xi| kernel_value(self.kernel, &self.hyper, xi, point)),
        );
        let mean = k.dot(&self.alpha);
        let v = chol.l_dirty().solve_lower_triangular(&k).expect("triangular solve");
        let var = self.hyper.signal_variance - v.dot(&v);
        (mean, var.max(0.0))
    }

    /// Posterior variance before clamping, for sanity checks.
    pub fn raw_variance(&self, point: &[f64]) -> f64 {
        let Some(chol) = &self.chol else { return 0.0 };
        let k: DVector<f64> = DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .map(|xi| kernel_value(self.kernel, &self.hyper, xi, point)),
        );
        let v = chol.l_dirty().solve_lower_triangular(&k).expect("triangular solve");
        self.hyper.signal_variance - v.dot(&v)
    }

    /// Posterior mean and standard deviation in the original units.
    pub fn predict(&self, point: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict_standardized(point);
        (self.y_mean + self.y_std * m, self.y_std * v.sqrt())
    }
}

pub(crate) fn kernel_value(kernel: Kernel, h: &Hyperparameters, a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&h.length_scales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    h.signal_variance * shape(kernel, r2)
}

fn shape(kernel: Kernel, r2: f64) -> f64 {
    match kernel {
        Kernel::Matern52 => {
            let r = r2.sqrt();
            (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * (-SQRT5 * r).exp()
        }
        Kernel::SquaredExponential => (-0.5 * r2).exp(),
    }
}

/// d shape / d log l_i = factor(r) * (dx_i / l_i)^2.
fn shape_grad_factor(kernel: Kernel, r2: f64) -> f64 {
    match kernel {
        Kernel::Matern52 => {
            let r = r2.sqrt();
            5.0 / 3.0 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp()
        }
        Kernel::SquaredExponential => (-0.5 * r2).exp(),
    }
}

fn covariance(kernel: Kernel, h: &Hyperparameters, x: &[Vec<f64>]) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| kernel_value(kernel, h, &x[i], &x[j]))
}

/// Cholesky with jitter escalated x10 from 1e-10 up to 1e-4.
fn factor(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let mut jitter = JITTER_START;
    loop {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        if jitter >= JITTER_CAP {
            return Err(GpError::NotPositiveDefinite(jitter));
        }
        jitter *= 10.0;
    }
}

struct Evaluated {
    lml: f64,
    grad: Vec<f64>,
}

struct Factored {
    h: Hyperparameters,
    k: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    lml: f64,
}

fn lml_only(kernel: Kernel, x: &[Vec<f64>], y: &DVector<f64>, theta: &[f64]) -> Option<Factored> {
    let h = Hyperparameters::from_log(theta);
    let n = x.len();
    let k = covariance(kernel, &h, x);
    let (chol, _) = factor(&k).ok()?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().take(n).map(|v| v.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    lml.is_finite().then_some(Factored { h, k, chol, alpha, lml })
}

fn lml_and_grad(kernel: Kernel, x: &[Vec<f64>], y: &DVector<f64>, theta: &[f64]) -> Option<Evaluated> {
    lml_only(kernel, x, y, theta).map(|f| gradient(kernel, x, f))
}

fn gradient(kernel: Kernel, x: &[Vec<f64>], f: Factored) -> Evaluated {
    let Factored { h, k, chol, alpha, lml } = f;
    let n = x.len();
    let d = h.length_scales.len();
    let kinv = chol.inverse();
    // W = alpha alpha^T - K^-1; dL/dtheta = 0.5 * sum(W .* dK)
    let mut grad = vec![0.0; d + 1];
    let mut scaled = vec![0.0; d];
    for i in 0..n {
        let w = alpha[i] * alpha[i] - kinv[(i, i)];
        grad[d] += 0.5 * w * k[(i, i)];
        for j in 0..i {
            // Symmetric pair counted once with weight 2.
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let mut r2 = 0.0;
            for c in 0..d {
                let s = ((x[i][c] - x[j][c]) / h.length_scales[c]).powi(2);
                scaled[c] = s;
                r2 += s;
            }
            let f = h.signal_variance * shape_grad_factor(kernel, r2);
            for c in 0..d {
                grad[c] += w * f * scaled[c];
            }
            grad[d] += w * k[(i, j)];
        }
    }
    Evaluated { lml, grad }
}

fn project(theta: &mut [f64]) {
    let d = theta.len() - 1;
    let (ll, lu) = (LENGTH_SCALE_BOUNDS.0.ln(), LENGTH_SCALE_BOUNDS.1.ln());
    for t in &mut theta[..d] {
        *t = t.clamp(ll, lu);
    }
    theta[d] = theta[d].clamp(SIGNAL_VARIANCE_BOUNDS.0.ln(), SIGNAL_VARIANCE_BOUNDS.1.ln());
}

/// Projected gradient ascent with Barzilai-Borwein step lengths, accepting
/// only steps that raise the likelihood (halving otherwise).
fn ascend(kernel: Kernel, x: &[Vec<f64>], y: &DVector<f64>, start: Vec<f64>) -> Option<(Vec<f64>, f64)> {
    let mut theta = start;
    project(&mut theta);
    let mut cur = lml_and_grad(kernel, x, y, &theta)?;
    let norm = cur.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let mut step = if norm > 0.0 { 0.1 / norm } else { 0.1 };
    for _ in 0..MAX_ASCENT_STEPS {
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut next: Vec<f64> = theta.iter().zip(&cur.grad).map(|(t, g)| t + step * g).collect();
            project(&mut next);
            if next == theta {
                break;
            }
            if let Some(f) = lml_only(kernel, x, y, &next) {
                if f.lml > cur.lml {
                    accepted = Some((next, f));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((next, f)) = accepted else {
            break;
        };
        let gain = f.lml - cur.lml;
        let new = gradient(kernel, x, f);
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let sy: f64 = s
            .iter()
            .zip(new.grad.iter().zip(&cur.grad))
            .map(|(s, (g1, g0))| s * (g1 - g0))
            .sum();
        step = if sy < 0.0 {
            (ss / -sy).clamp(1e-8, 1e4)
        } else {
            (2.0 * step).min(1e4)
        };
        theta = next;
        cur = new;
        if gain < ASCENT_TOLERANCE {
            break;
        }
    }
    Some((theta, cur.lml))
}

/// Fit a GP to `(points, values)`: targets standardized, hyperparameters by
/// multi-start maximization of the log marginal likelihood.
pub fn fit_gp(
    points: &[Vec<f64>],
    values: &[f64],
    kernel: Kernel,
    seed: u64,
    mode: ExecMode,
) -> Result<GpModel, GpError> {
    if points.len() != values.len() {
        return Err(GpError::LengthMismatch);
    }
    let distinct = count_distinct(points);
    if distinct < 2 {
        return Err(GpError::TooFewPoints(distinct));
    }
    let d = points[0].len();
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Ok(GpModel {
            kernel,
            x: points.to_vec(),
            y_mean: mean,
            y_std: 1.0,
            hyper: Hyperparameters {
                length_scales: vec![1.0; d],
                signal_variance: 0.0,
            },
            jitter: 0.0,
            chol: None,
            alpha: DVector::zeros(n),
            log_marginal_likelihood: 0.0,
            degenerate: true,
        });
    }
    let y = DVector::from_iterator(n, values.iter().map(|v| (v - mean) / std));

    let mut rng = rng_for(seed, FIT_STREAM_BASE + n as u64);
    let mut starts = vec![{
        let mut t = vec![0.5f64.ln(); d];
        t.push(0.0);
        t
    }];
    for _ in 0..N_RANDOM_STARTS {
        let mut t: Vec<f64> = (0..d).map(|_| rng.random_range(0.05f64.ln()..2f64.ln())).collect();
        t.push(rng.random_range(0.1f64.ln()..10f64.ln()));
        starts.push(t);
    }
    let results = exec::map(mode, &starts, |s| ascend(kernel, points, &y, s.clone()));
    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in results.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| r.1 > b.1) {
            best = Some(r);
        }
    }
    let (theta, lml) = best.ok_or(GpError::NotPositiveDefinite(JITTER_CAP))?;
    let hyper = Hyperparameters::from_log(&theta);
    let (chol, jitter) = factor(&covariance(kernel, &hyper, points))?;
    let alpha = chol.solve(&y);
    Ok(GpModel {
        kernel,
        x: points.to_vec(),
        y_mean: mean,
        y_std: std,
        hyper,
        jitter,
        chol: Some(chol),
        alpha,
        log_marginal_likelihood: lml,
        degenerate: false,
    })
}

/// A model with fixed hyperparameters, for checks against closed forms.
pub fn gp_with_hyperparameters(
    points: &[Vec<f64>],
    values: &[f64],
    kernel: Kernel,
    hyper: Hyperparameters,
) -> Result<GpModel, GpError> {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let std = if std > 0.0 { std } else { 1.0 };
    let y = DVector::from_iterator(n, values.iter().map(|v| (v - mean) / std));
    let (chol, jitter) = factor(&covariance(kernel, &hyper, points))?;
    let alpha = chol.solve(&y);
    let lml = lml_and_grad(kernel, points, &y, &hyper.to_log()).map_or(f64::NEG_INFINITY, |e| e.lml);
    Ok(GpModel {
        kernel,
        x: points.to_vec(),
        y_mean: mean,
        y_std: std,
        hyper,
        jitter,
        chol: Some(chol),
        alpha,
        log_marginal_likelihood: lml,
        degenerate: false,
    })
}

fn count_distinct(points: &[Vec<f64>]) -> usize {
    let mut out: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !out.iter().any(|q| q.iter().zip(p).all(|(a, b)| (a - b).abs() <= 1e-12)) {
            out.push(p);
        }
    }
    out.len()
}
