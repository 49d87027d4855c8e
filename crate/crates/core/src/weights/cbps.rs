//! Covariate balancing propensity score, just-identified ATT form.
//!
//! The logistic coefficients `θ` on the moment-expanded design `[1, Z]` are
//! chosen so that the odds weights `p/(1−p) = exp(θᵀz̃)` of the controls
//! reproduce the treated totals of every design column:
//!
//! `g(θ) = (1/n_t) [Σ_treated z̃_i − Σ_control exp(θᵀz̃_i) z̃_i] = 0`.
//!
//! The intercept row pins the control weight total to `n_t`; the remaining
//! rows equate weighted control means with treated means.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::types::{EstimatorId, WeightSet};
use crate::weights::logistic::{fit_logistic, with_intercept, DEFAULT_RIDGE};
use crate::weights::moments::{expand_moments, MomentExpansionConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CbpsConfig {
    pub residual_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CbpsConfig {
    fn default() -> Self {
        CbpsConfig {
            residual_tolerance: 1e-6,
            max_iterations: 500,
        }
    }
}

/// Exponents above this are treated as overflow during line searches.
const MAX_EXPONENT: f64 = 700.0;

pub fn fit_cbps(x: &DMatrix<f64>, treatment: &[u8], m: usize, cfg: &CbpsConfig) -> Result<WeightSet> {
    let n = x.nrows();
    if treatment.len() != n {
        return Err(Error::InvalidInput("treatment length differs from n".into()));
    }
    let n_treated = treatment.iter().filter(|&&t| t == 1).count();
    if n_treated < 2 || n - n_treated < 2 {
        return Err(Error::InvalidInput("need at least two treated and two control units".into()));
    }
    let z = expand_moments(x, &MomentExpansionConfig::detect(x, m))?;
    let design = with_intercept(&z);
    let estimator = match m {
        1 => EstimatorId::Cbps1,
        2 => EstimatorId::Cbps2,
        _ => EstimatorId::Cbps3,
    };

    let system = BalanceSystem::new(&design, treatment);
    let start = match fit_logistic(&design, treatment, DEFAULT_RIDGE) {
        Ok(fit) => DVector::from_vec(fit.coefficients),
        Err(_) => {
            let mut theta = DVector::zeros(design.ncols());
            theta[0] = (n_treated as f64 / (n - n_treated) as f64).ln();
            theta
        }
    };
    let mut theta = start;
    let mut residual = system.residual(&theta);
    let mut iterations = 0;
    let mut used_fallback = false;

    // Damped Newton on g(θ) = 0 with ‖g‖ as merit function.
    while iterations < cfg.max_iterations && norm(&residual) >= cfg.residual_tolerance {
        iterations += 1;
        let jac = system.neg_jacobian(&theta);
        let Some(step) = solve_spd(&jac, &residual) else {
            break;
        };
        let current = norm(&residual);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-8 {
            let trial = &theta + &step * t;
            let r = system.residual(&trial);
            if norm(&r) < (1.0 - 1e-4 * t) * current {
                theta = trial;
                residual = r;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if norm(&residual) >= cfg.residual_tolerance && iterations < cfg.max_iterations {
        used_fallback = true;
        let (t, r, it) = bfgs_fallback(&system, theta, cfg, cfg.max_iterations - iterations);
        theta = t;
        residual = r;
        iterations += it;
    }

    let converged = norm(&residual) < cfg.residual_tolerance;
    let mut weights = vec![1.0; n];
    for (i, w) in weights.iter_mut().enumerate() {
        if treatment[i] == 0 {
            *w = system.odds(&theta, i);
        }
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Solver("CBPS weights overflowed".into()));
    }
    let mut ws = WeightSet::new(weights, estimator);
    ws.converged = converged;
    ws.iterations = iterations;
    if used_fallback {
        ws.note("Newton stalled; finished with quasi-Newton");
    }
    if !converged {
        ws.note(format!("balance residual {:.3e} after {iterations} iterations", norm(&residual)));
    }
    Ok(ws)
}

fn norm(v: &DVector<f64>) -> f64 {
    v.norm()
}

struct BalanceSystem<'a> {
    design: &'a DMatrix<f64>,
    controls: Vec<usize>,
    treated_total: DVector<f64>,
    n_treated: f64,
}

impl<'a> BalanceSystem<'a> {
    fn new(design: &'a DMatrix<f64>, treatment: &[u8]) -> Self {
        let k = design.ncols();
        let mut treated_total = DVector::zeros(k);
        let mut controls = Vec::new();
        let mut n_treated = 0.0;
        for (i, &t) in treatment.iter().enumerate() {
            if t == 1 {
                n_treated += 1.0;
                for j in 0..k {
                    treated_total[j] += design[(i, j)];
                }
            } else {
                controls.push(i);
            }
        }
        BalanceSystem {
            design,
            controls,
            treated_total,
            n_treated,
        }
    }

    fn eta(&self, theta: &DVector<f64>, i: usize) -> f64 {
        self.design.row(i).iter().zip(theta.iter()).map(|(a, b)| a * b).sum()
    }

    fn odds(&self, theta: &DVector<f64>, i: usize) -> f64 {
        self.eta(theta, i).exp()
    }

    fn residual(&self, theta: &DVector<f64>) -> DVector<f64> {
        let k = self.design.ncols();
        let mut r = self.treated_total.clone();
        for &i in &self.controls {
            let eta = self.eta(theta, i);
            if eta > MAX_EXPONENT {
                return DVector::from_element(k, f64::INFINITY);
            }
            let w = eta.exp();
            for j in 0..k {
                r[j] -= w * self.design[(i, j)];
            }
        }
        r / self.n_treated
    }

    /// `−∂g/∂θ = (1/n_t) Σ_control w_i z̃_i z̃_iᵀ`, symmetric positive semidefinite.
    fn neg_jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let k = self.design.ncols();
        let mut h = DMatrix::zeros(k, k);
        for &i in &self.controls {
            let w = self.odds(theta, i) / self.n_treated;
            for a in 0..k {
                let wa = w * self.design[(i, a)];
                for b in 0..=a {
                    h[(a, b)] += wa * self.design[(i, b)];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        h
    }
}

/// BFGS on `½‖g(θ)‖²`, used when Newton's line search fails.
fn bfgs_fallback(
    system: &BalanceSystem<'_>,
    mut theta: DVector<f64>,
    cfg: &CbpsConfig,
    budget: usize,
) -> (DVector<f64>, DVector<f64>, usize) {
    let k = theta.len();
    let objective = |r: &DVector<f64>| 0.5 * r.norm_squared();
    // ∇(½‖g‖²) = Jᵀ g = −(neg_jacobian) g
    let gradient = |theta: &DVector<f64>, r: &DVector<f64>| -(system.neg_jacobian(theta) * r);

    let mut residual = system.residual(&theta);
    let mut grad = gradient(&theta, &residual);
    let mut inv_h = DMatrix::<f64>::identity(k, k);
    let mut iterations = 0;
    while iterations < budget && residual.norm() >= cfg.residual_tolerance {
        iterations += 1;
        let mut dir = -(&inv_h * &grad);
        if dir.dot(&grad) >= 0.0 {
            inv_h = DMatrix::identity(k, k);
            dir = -grad.clone();
        }
        let f0 = objective(&residual);
        let slope = dir.dot(&grad);
        let mut t = 1.0;
        let mut next = None;
        while t > 1e-12 {
            let trial = &theta + &dir * t;
            let r = system.residual(&trial);
            let f = objective(&r);
            if f.is_finite() && f <= f0 + 1e-4 * t * slope {
                next = Some((trial, r));
                break;
            }
            t *= 0.5;
        }
        let Some((new_theta, new_residual)) = next else {
            break;
        };
        let new_grad = gradient(&new_theta, &new_residual);
        let s = &new_theta - &theta;
        let y = &new_grad - &grad;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(k, k);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            inv_h = &left * &inv_h * &right + &s * s.transpose() * rho;
        }
        theta = new_theta;
        residual = new_residual;
        grad = new_grad;
    }
    (theta, residual, iterations)
}
