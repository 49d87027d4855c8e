//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weighted ECDF of one group evaluated at `v` by direct summation.
fn ecdf(x: &[f64], t: &[u8], w: &[f64], group: u8, v: f64) -> f64 {
    let (mut below, mut total) = (0.0, 0.0);
    for i in 0..x.len() {
        if t[i] == group {
            total += w[i];
            if x[i] <= v {
                below += w[i];
            }
        }
    }
    below / total
}

pub fn brute_ks(x: &[f64], t: &[u8], w: &[f64]) -> f64 {
    x.iter()
        .map(|&v| (ecdf(x, t, w, 1, v) - ecdf(x, t, w, 0, v)).abs())
        .fold(0.0, f64::max)
}

pub fn brute_smd(x: &[f64], t: &[u8], w: &[f64]) -> Option<f64> {
    let mean = |g: u8| {
        let num: f64 = (0..x.len()).filter(|&i| t[i] == g).map(|i| w[i] * x[i]).sum();
        let den: f64 = (0..x.len()).filter(|&i| t[i] == g).map(|i| w[i]).sum();
        num / den
    };
    let treated: Vec<f64> = (0..x.len()).filter(|&i| t[i] == 1).map(|i| x[i]).collect();
    if treated.len() < 2 {
        return None;
    }
    let m = treated.iter().sum::<f64>() / treated.len() as f64;
    let sd = (treated.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (treated.len() - 1) as f64).sqrt();
    if sd == 0.0 {
        return None;
    }
    Some((mean(1) - mean(0)).abs() / sd)
}

/// Small random instance with both groups present and positive weights.
/// Values come from a short grid so ties are common.
pub fn tiny_instance(r: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>, Vec<f64>) {
    loop {
        let n = r.random_range(2..=12);
        let x: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..6)) * 0.5).collect();
        let t: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.05..4.0)).collect();
        if t.contains(&0) && t.contains(&1) {
            return (x, t, w);
        }
    }
}

/// Weighted log-likelihood of an intercept + slope logistic model.
pub fn loglik(beta0: f64, beta1: f64, x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let mut ll = 0.0;
    for i in 0..x.len() {
        let eta = beta0 + beta1 * x[i];
        let log1p = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
        ll += w[i] * (y[i] * eta - log1p);
    }
    ll
}

/// Coarse-to-fine grid maximizer over `[-20, 20]²`, refined to a spacing of
/// about 1e-5.
pub fn grid_logistic(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let (mut c0, mut c1, mut half) = (0.0, 0.0, 20.0);
    let steps = 40;
    while half > 1e-5 {
        let mut best = (f64::NEG_INFINITY, c0, c1);
        for a in 0..=steps {
            for b in 0..=steps {
                let b0 = c0 - half + 2.0 * half * a as f64 / steps as f64;
                let b1 = c1 - half + 2.0 * half * b as f64 / steps as f64;
                let ll = loglik(b0, b1, x, y, w);
                if ll > best.0 {
                    best = (ll, b0, b1);
                }
            }
        }
        c0 = best.1;
        c1 = best.2;
        half *= 0.25;
    }
    (c0, c1)
}

/// Minimizes `Σ w log(w / b)` subject to `Σ w = 1` and `Cᵀw = 0` directly in
/// the primal with an infeasible-start primal-dual Newton method, starting
/// from `w = b`. Returns `None` if the KKT system becomes singular or the
/// residual does not vanish.
pub fn primal_entropy_oracle(c: &DMatrix<f64>, base: &[f64]) -> Option<Vec<f64>> {
    let n = c.nrows();
    let k = c.ncols();
    let mut a = DMatrix::zeros(k + 1, n);
    for i in 0..n {
        a[(0, i)] = 1.0;
        for j in 0..k {
            a[(j + 1, i)] = c[(i, j)];
        }
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[0] = 1.0;
    let residual = |w: &DVector<f64>, nu: &DVector<f64>| {
        let g = DVector::from_fn(n, |i, _| (w[i] / base[i]).ln() + 1.0);
        let dual = g + a.transpose() * nu;
        let primal = &a * w - &rhs;
        (dual.norm_squared() + primal.norm_squared()).sqrt()
    };
    let mut w = DVector::from_column_slice(base);
    let mut nu = DVector::zeros(k + 1);
    for _ in 0..500 {
        let r0 = residual(&w, &nu);
        if r0 < 1e-13 {
            return Some(w.iter().copied().collect());
        }
        let g = DVector::from_fn(n, |i, _| (w[i] / base[i]).ln() + 1.0);
        // H = diag(1/w); d = −H⁻¹(g + Aᵀν⁺), A d = −(Aw − rhs)
        let ah = DMatrix::from_fn(k + 1, n, |r, i| a[(r, i)] * w[i]);
        let m = &ah * a.transpose();
        let primal = &a * &w - &rhs;
        let nu_next = m.lu().solve(&(primal - &ah * &g))?;
        let d = -(&g + a.transpose() * &nu_next).component_mul(&w);
        let dnu = nu_next - &nu;
        let mut step = 1.0;
        loop {
            let trial = &w + &d * step;
            if trial.iter().all(|&v| v > 0.0) {
                let nt = &nu + &dnu * step;
                if residual(&trial, &nt) <= (1.0 - 0.01 * step) * r0 {
                    w = trial;
                    nu = nt;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-14 {
                return (r0 < 1e-9).then(|| w.iter().copied().collect());
            }
        }
    }
    None
}

/// Solves a small dense system by Cramer's rule.
pub fn cramer(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let det = a.determinant();
    (0..a.ncols())
        .map(|j| {
            let mut aj = a.clone();
            for i in 0..a.nrows() {
                aj[(i, j)] = b[i];
            }
            aj.determinant() / det
        })
        .collect()
}

/// Ranks by direct counting: `#{x_j < x_i} + (#{x_j = x_i} + 1) / 2`.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}
