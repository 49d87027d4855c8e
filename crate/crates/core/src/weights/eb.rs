//! Entropy balancing: control weights `w_i ∝ b_i exp(λᵀ z_i)` with `λ`
//! minimizing the convex dual `log Σ b_i exp(λᵀ(z_i − z̄_t))`, whose
//! gradient is the weighted-control minus treated moment gap.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::types::{EstimatorId, WeightSet};
use crate::weights::moments::{expand_moments, MomentExpansionConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EbConfig {
    pub m: usize,
    /// One positive base weight per control unit (in data order); uniform
    /// when `None`.
    pub base_weights: Option<Vec<f64>>,
    pub constraint_tolerance: f64,
    pub max_iterations: usize,
}

impl EbConfig {
    pub fn new(m: usize) -> Self {
        EbConfig {
            m,
            base_weights: None,
            constraint_tolerance: 1e-10,
            max_iterations: 200,
        }
    }
}

/// Control weights below this fraction of the mean are reported in notes.
const TINY_WEIGHT: f64 = 1e-12;

pub fn fit_eb(x: &DMatrix<f64>, treatment: &[u8], cfg: &EbConfig) -> Result<WeightSet> {
    let z = expand_moments(x, &MomentExpansionConfig::detect(x, cfg.m))?;
    let mut ws = balance_features(&z, treatment, cfg)?;
    ws.estimator = match cfg.m {
        1 => EstimatorId::Eb1,
        2 => EstimatorId::Eb2,
        _ => EstimatorId::Eb3,
    };
    Ok(ws)
}

/// Entropy-balances the control rows of `z` to the treated means of `z`
/// directly (no moment expansion).
pub fn balance_features(z: &DMatrix<f64>, treatment: &[u8], cfg: &EbConfig) -> Result<WeightSet> {
    let n = z.nrows();
    let k = z.ncols();
    if treatment.len() != n {
        return Err(Error::InvalidInput("treatment length differs from n".into()));
    }
    let treated: Vec<usize> = (0..n).filter(|&i| treatment[i] == 1).collect();
    let controls: Vec<usize> = (0..n).filter(|&i| treatment[i] == 0).collect();
    if treated.is_empty() || controls.is_empty() {
        return Err(Error::InvalidInput("need at least one treated and one control unit".into()));
    }
    let nc = controls.len();

    let base: Vec<f64> = match &cfg.base_weights {
        Some(b) => {
            if b.len() != nc || b.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Config("base weights must be positive, finite, one per control".into()));
            }
            let s: f64 = b.iter().sum();
            b.iter().map(|v| v / s).collect()
        }
        None => vec![1.0 / nc as f64; nc],
    };
    let log_base: Vec<f64> = base.iter().map(|b| b.ln()).collect();
    // Any feasible target has dual optimum >= log(min base weight).
    let dual_floor = log_base.iter().fold(f64::INFINITY, |m, v| m.min(*v));

    let mut target = DVector::zeros(k);
    for &i in &treated {
        for j in 0..k {
            target[j] += z[(i, j)];
        }
    }
    target /= treated.len() as f64;
    let c = DMatrix::from_fn(nc, k, |r, j| z[(controls[r], j)] - target[j]);

    let mut lambda = DVector::zeros(k);
    let mut state = DualState::evaluate(&c, &log_base, &lambda);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        if state.gradient.amax() < cfg.constraint_tolerance {
            converged = true;
            break;
        }
        if state.value < dual_floor - 1e-9 {
            return Err(Error::Infeasible(
                "treated moments lie outside the convex hull of the controls".into(),
            ));
        }
        if iterations >= cfg.max_iterations {
            break;
        }
        iterations += 1;
        let hessian = state.hessian(&c);
        let Some(step) = solve_spd(&hessian, &state.gradient) else {
            break;
        };
        let slope = -state.gradient.dot(&step);
        // Near the optimum the predicted decrease drops below the resolution
        // of the dual value; fall back to requiring a smaller gradient.
        let flat = slope.abs() <= 1e-12 * state.value.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let trial = &lambda - &step * t;
            let next = DualState::evaluate(&c, &log_base, &trial);
            let decreased = next.value <= state.value + 1e-4 * t * slope
                || (flat && next.gradient.amax() < state.gradient.amax());
            if next.value.is_finite() && decreased {
                accepted = Some((trial, next));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((l, s)) => {
                lambda = l;
                state = s;
            }
            // No decrease is possible at machine precision; the gradient
            // test decides convergence on the next pass.
            None => {
                if state.gradient.amax() < cfg.constraint_tolerance {
                    converged = true;
                }
                break;
            }
        }
    }

    let mut weights = vec![1.0; n];
    for (r, &i) in controls.iter().enumerate() {
        weights[i] = state.probs[r] * nc as f64;
    }
    let mut ws = WeightSet::new(weights, EstimatorId::Eb1);
    ws.converged = converged;
    ws.iterations = iterations;
    let tiny = state.probs.iter().filter(|&&p| p * (nc as f64) < TINY_WEIGHT).count();
    if tiny > 0 {
        ws.note(format!("{tiny} control weights below {TINY_WEIGHT:e} of the mean"));
    }
    if !converged {
        ws.note(format!(
            "max moment violation {:.3e} after {iterations} iterations",
            state.gradient.amax()
        ));
    }
    Ok(ws)
}

/// Dual objective, normalized weights and gradient at one `λ`.
struct DualState {
    value: f64,
    probs: Vec<f64>,
    gradient: DVector<f64>,
}

impl DualState {
    fn evaluate(c: &DMatrix<f64>, log_base: &[f64], lambda: &DVector<f64>) -> Self {
        let eta: Vec<f64> = (c * lambda)
            .iter()
            .zip(log_base)
            .map(|(e, lb)| e + lb)
            .collect();
        let max = eta.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let mut probs: Vec<f64> = eta.iter().map(|e| (e - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        let value = max + total.ln();
        let gradient = c.tr_mul(&DVector::from_column_slice(&probs));
        DualState { value, probs, gradient }
    }

    fn hessian(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let k = c.ncols();
        let mut h = DMatrix::zeros(k, k);
        for (r, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for a in 0..k {
                let pa = p * c[(r, a)];
                for b in 0..=a {
                    h[(a, b)] += pa * c[(r, b)];
                }
            }
        }
        for a in 0..k {
            for b in 0..=a {
                let v = h[(a, b)] - self.gradient[a] * self.gradient[b];
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        h
    }
}
