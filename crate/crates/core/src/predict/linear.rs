use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::ops::{dot, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogregParams {
    /// L2 strength on the weights (the bias is not penalized).
    pub l2: f64,
    /// Stop when the max-norm of the gradient falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogregParams {
    fn default() -> Self {
        LogregParams { l2: 1.0, tol: 1e-8, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub params: LogregParams,
    /// Per-column training mean and standard deviation (1 for constant
    /// columns); weights act on standardized features.
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Iterations run and final gradient max-norm.
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LinearModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let z: f64 = (0..x.len()).map(|j| self.weights[j] * (x[j] - self.center[j]) / self.scale[j]).sum();
        sigmoid(z + self.bias)
    }
}

/// `Σ logloss + ½·l2·‖w‖²`
fn objective(x: &FeatureMatrix, y: &[f64], w: &[f64], b: f64, l2: f64) -> f64 {
    let nll: f64 = (0..y.len())
        .map(|i| {
            let f = dot(w, x.row(i)) + b;
            f.max(0.0) + (-f.abs()).exp().ln_1p() - y[i] * f
        })
        .sum();
    nll + 0.5 * l2 * dot(w, w)
}

/// Solve `a · s = r` for symmetric positive-definite `a` (n×n, row-major).
fn cholesky_solve(mut a: Vec<f64>, mut r: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= a[j * n + k] * a[j * n + k];
        }
        if s <= 0.0 || !s.is_finite() {
            return None;
        }
        let d = s.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = r[i];
        for k in 0..i {
            s -= a[i * n + k] * r[k];
        }
        r[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = r[i];
        for k in i + 1..n {
            s -= a[k * n + i] * r[k];
        }
        r[i] = s / a[i * n + i];
    }
    Some(r)
}

/// Column means and standard deviations; constant columns get scale 1.
fn standardizer(x: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows as f64;
    let center: Vec<f64> = (0..x.cols).map(|j| (0..x.rows).map(|i| x.row(i)[j]).sum::<f64>() / n).collect();
    let scale = (0..x.cols)
        .map(|j| {
            let var = (0..x.rows).map(|i| (x.row(i)[j] - center[j]).powi(2)).sum::<f64>() / n;
            if var > 0.0 { var.sqrt() } else { 1.0 }
        })
        .collect();
    (center, scale)
}

/// L2-regularized maximum likelihood on standardized features by damped
/// Newton steps with a backtracking line search, run to a gradient-norm
/// tolerance.
pub fn train_logreg(x: &FeatureMatrix, y: &[f64], p: &LogregParams) -> Result<LinearModel> {
    if !(p.l2.is_finite() && p.l2 >= 0.0) {
        return Err(Error::field("l2", "must be finite and non-negative"));
    }
    super::check_binary(x, y)?;
    let (center, scale) = standardizer(x);
    let mut data = x.data.clone();
    for row in data.chunks_mut(x.cols.max(1)) {
        row.iter_mut().enumerate().for_each(|(j, v)| *v = (*v - center[j]) / scale[j]);
    }
    let x = &FeatureMatrix { data, ..x.clone() };
    let (n, d) = (y.len(), x.cols);
    let k = d + 1;
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let mut obj = objective(x, y, &w, b, p.l2);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..p.max_iter {
        let mut grad = vec![0.0; k];
        let mut hess = vec![0.0; k * k];
        for i in 0..n {
            let row = x.row(i);
            let pr = sigmoid(dot(&w, row) + b);
            let r = pr - y[i];
            let s = pr * (1.0 - pr);
            for a in 0..d {
                grad[a] += r * row[a];
                let sa = s * row[a];
                for c in 0..=a {
                    hess[a * k + c] += sa * row[c];
                }
                hess[d * k + a] += sa;
            }
            grad[d] += r;
            hess[d * k + d] += s;
        }
        for a in 0..d {
            grad[a] += p.l2 * w[a];
            hess[a * k + a] += p.l2;
        }
        // Mirror the lower triangle and keep the system strictly positive definite.
        for a in 0..k {
            for c in 0..a {
                hess[c * k + a] = hess[a * k + c];
            }
            hess[a * k + a] += 1e-12;
        }
        grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm < p.tol {
            break;
        }
        iterations += 1;
        let step = cholesky_solve(hess, grad.clone(), k).unwrap_or_else(|| grad.clone());
        let slope: f64 = -dot(&step, &grad);
        let mut t = 1.0;
        loop {
            let w_new: Vec<f64> = w.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            let b_new = b - t * step[d];
            let o = objective(x, y, &w_new, b_new, p.l2);
            if o <= obj + 1e-4 * t * slope || t < 1e-10 {
                if o <= obj {
                    w = w_new;
                    b = b_new;
                    obj = o;
                }
                break;
            }
            t *= 0.5;
        }
        if t < 1e-10 {
            break;
        }
    }
    if !(w.iter().all(|v| v.is_finite()) && b.is_finite()) {
        return Err(Error::precondition("logistic regression diverged"));
    }
    Ok(LinearModel { params: p.clone(), center, scale, weights: w, bias: b, iterations, grad_norm })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_small_system() {
        let a = vec![4.0, 2.0, 2.0, 3.0];
        let s = cholesky_solve(a, vec![2.0, 1.0], 2).unwrap();
        assert!((4.0 * s[0] + 2.0 * s[1] - 2.0).abs() < 1e-12);
        assert!((2.0 * s[0] + 3.0 * s[1] - 1.0).abs() < 1e-12);
        assert!(cholesky_solve(vec![-1.0], vec![1.0], 1).is_none());
    }
}
