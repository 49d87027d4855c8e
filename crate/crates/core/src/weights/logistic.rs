//! Ridge-stabilised logistic regression by iteratively reweighted least
//! squares (Newton–Raphson with step halving).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_checked, expit, log1p_exp};

pub const DEFAULT_RIDGE: f64 = 1e-8;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_IRLS_ITERATIONS: usize = 100;
const MAX_RIDGE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Intercept first, then one coefficient per remaining design column.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    /// Ridge actually used (after any escalation).
    pub ridge: f64,
}

impl LogisticFit {
    /// Fitted probabilities for each row of `design`.
    pub fn predict(&self, design: &DMatrix<f64>) -> Vec<f64> {
        let beta = DVector::from_column_slice(&self.coefficients);
        (design * beta).iter().map(|&eta| expit(eta)).collect()
    }
}

/// Unweighted fit of binary `labels` on `design` (first column is the
/// intercept, which is not penalized).
pub fn fit_logistic(design: &DMatrix<f64>, labels: &[u8], ridge: f64) -> Result<LogisticFit> {
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    fit_logistic_weighted(design, &y, &vec![1.0; y.len()], ridge)
}

/// Case-weighted fit maximizing
/// `sum_i w_i [y_i eta_i - log(1 + e^eta_i)] - ridge * |beta_{1..}|^2`.
pub fn fit_logistic_weighted(
    design: &DMatrix<f64>,
    labels: &[f64],
    case_weights: &[f64],
    ridge: f64,
) -> Result<LogisticFit> {
    let n = design.nrows();
    let p = design.ncols();
    if labels.len() != n || case_weights.len() != n {
        return Err(Error::InvalidInput("design, labels and weights differ in length".into()));
    }
    if ridge < 0.0 {
        return Err(Error::InvalidInput("ridge must be nonnegative".into()));
    }
    let has = |v: f64| labels.iter().zip(case_weights).any(|(&y, &w)| y == v && w > 0.0);
    if !has(0.0) || !has(1.0) {
        return Err(Error::DegenerateLabels);
    }

    let mut ridge = ridge;
    let mut beta = DVector::zeros(p);
    let objective = |beta: &DVector<f64>, ridge: f64| -> f64 {
        let eta = design * beta;
        let ll: f64 = (0..n)
            .map(|i| case_weights[i] * (labels[i] * eta[i] - log1p_exp(eta[i])))
            .sum();
        ll - ridge * beta.rows(1, p - 1).norm_squared()
    };

    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    while iterations < MAX_IRLS_ITERATIONS {
        let eta = design * &beta;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..n {
            let w = case_weights[i];
            if w == 0.0 {
                continue;
            }
            let pi = expit(eta[i]);
            let row = design.row(i);
            let r = w * (labels[i] - pi);
            let h = w * pi * (1.0 - pi);
            for a in 0..p {
                grad[a] += r * row[a];
                let ha = h * row[a];
                for b in 0..=a {
                    hess[(a, b)] += ha * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        for a in 1..p {
            grad[a] -= 2.0 * ridge * beta[a];
            hess[(a, a)] += 2.0 * ridge;
        }
        grad_norm = grad.norm();
        if grad_norm < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }

        let step = match cholesky_checked(&hess) {
            Some(ch) => ch.solve(&grad),
            None => {
                let next = if ridge == 0.0 { DEFAULT_RIDGE } else { ridge * 10.0 };
                if next > MAX_RIDGE {
                    return Err(Error::Solver(
                        "weighted normal equations singular even with maximal ridge".into(),
                    ));
                }
                ridge = next;
                continue;
            }
        };

        iterations += 1;
        let current = objective(&beta, ridge);
        let mut scale = 1.0;
        let mut accepted = false;
        while scale > 1e-10 {
            let trial = &beta + &step * scale;
            if objective(&trial, ridge) >= current - 1e-12 * current.abs() {
                beta = trial;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    Ok(LogisticFit {
        coefficients: beta.iter().copied().collect(),
        converged,
        iterations,
        final_gradient_norm: grad_norm,
        ridge,
    })
}

/// Prepends an intercept column.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}
