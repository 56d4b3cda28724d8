//! Linear and logistic regression by full-batch gradient descent.
//!
//! Features are standardised internally and the step size is `1/L`, with
//! `L` the largest eigenvalue of the loss Hessian bound (found by power
//! iteration). Columns with zero variance are dropped from the fit and get
//! weight 0; if every column is constant the model is intercept-only.

use serde::{Deserialize, Serialize};

use crate::dataio::TaskKind;
use crate::error::{Error, Result};
use crate::tensor::{sigmoid_scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_steps: usize,
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_steps: 10_000,
            grad_tol: 1e-8,
        }
    }
}

/// A fitted affine predictor on the original feature scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub task: TaskKind,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub steps: usize,
    pub final_grad_norm: f64,
    pub intercept_only: bool,
}

impl LinearModel {
    /// Regression: the linear prediction. Classification: the score in [0, 1].
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        let (n, p) = x.dims();
        if p != self.weights.len() {
            return Err(Error::Shape {
                op: "linear_predict",
                left: x.shape().to_vec(),
                right: vec![self.weights.len()],
            });
        }
        Ok((0..n)
            .map(|i| {
                let z = self.intercept
                    + x.row(i)
                        .iter()
                        .zip(&self.weights)
                        .map(|(a, w)| a * w)
                        .sum::<f64>();
                match self.task {
                    TaskKind::Regression => z,
                    TaskKind::Classification => sigmoid_scalar(z),
                }
            })
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn top_eigenvalue(g: &[Vec<f64>]) -> f64 {
    let d = g.len();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w: Vec<f64> = g.iter().map(|row| dot(row, &v)).collect();
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw;
        v = w.into_iter().map(|x| x / nw).collect();
        if (next - lambda).abs() <= 1e-12 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}

/// Fit on `x` (`n × p`) and targets `y` (0/1 labels for classification).
pub fn fit(x: &Tensor, y: &[f64], task: TaskKind, opts: FitOptions) -> Result<LinearModel> {
    let (n, p) = x.dims();
    if n == 0 || y.len() != n {
        return Err(Error::contract(format!(
            "fit needs aligned nonempty inputs: {n} rows, {} targets",
            y.len()
        )));
    }
    if task == TaskKind::Classification && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::contract("classification targets must be 0 or 1"));
    }
    let nf = n as f64;

    // Internal standardisation; constant columns are left out.
    let mut keep = Vec::new();
    let mut mu = Vec::new();
    let mut sd = Vec::new();
    for j in 0..p {
        let m = (0..n).map(|i| x.get(i, j)).sum::<f64>() / nf;
        let v = (0..n).map(|i| (x.get(i, j) - m).powi(2)).sum::<f64>() / nf;
        if v.sqrt() > 1e-12 * (1.0 + m.abs()) {
            keep.push(j);
            mu.push(m);
            sd.push(v.sqrt());
        }
    }
    if keep.is_empty() && p > 0 {
        log::warn!("all {p} feature columns are constant; fitting intercept only");
    }
    let d = keep.len() + 1;
    // Design rows [1, z_1, ..., z_k].
    let z: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = Vec::with_capacity(d);
            r.push(1.0);
            for (c, &j) in keep.iter().enumerate() {
                r.push((x.get(i, j) - mu[c]) / sd[c]);
            }
            r
        })
        .collect();
    let mut gram = vec![vec![0.0; d]; d];
    for r in &z {
        for a in 0..d {
            for b in 0..d {
                gram[a][b] += r[a] * r[b] / nf;
            }
        }
    }
    let curvature = match task {
        TaskKind::Regression => 1.0,
        TaskKind::Classification => 0.25,
    };
    let lipschitz = curvature * top_eigenvalue(&gram);
    let step = 1.0 / lipschitz.max(1e-300);

    let mut w = vec![0.0; d];
    let mut steps = 0;
    let mut gnorm = f64::INFINITY;
    // Least squares only needs the Gram matrix and Zᵀy.
    let zty: Vec<f64> = (0..d)
        .map(|a| z.iter().zip(y).map(|(r, t)| r[a] * t).sum::<f64>() / nf)
        .collect();
    while steps < opts.max_steps {
        let grad: Vec<f64> = match task {
            TaskKind::Regression => (0..d).map(|a| dot(&gram[a], &w) - zty[a]).collect(),
            TaskKind::Classification => {
                let mut g = vec![0.0; d];
                for (r, t) in z.iter().zip(y) {
                    let e = sigmoid_scalar(dot(r, &w)) - t;
                    for a in 0..d {
                        g[a] += e * r[a] / nf;
                    }
                }
                g
            }
        };
        gnorm = norm(&grad);
        if gnorm < opts.grad_tol {
            break;
        }
        for a in 0..d {
            w[a] -= step * grad[a];
        }
        steps += 1;
    }

    let mut weights = vec![0.0; p];
    let mut intercept = w[0];
    for (c, &j) in keep.iter().enumerate() {
        weights[j] = w[c + 1] / sd[c];
        intercept -= w[c + 1] * mu[c] / sd[c];
    }
    Ok(LinearModel {
        task,
        weights,
        intercept,
        steps,
        final_grad_norm: gnorm,
        intercept_only: keep.is_empty(),
    })
}
