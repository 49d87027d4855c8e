//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Solves `a x = b` for symmetric positive definite `a`, adding diagonal
/// jitter when the factorization fails. Returns `None` if even the largest
/// jitter does not make `a` factorizable.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = cholesky_checked(a) {
        return Some(ch.solve(b));
    }
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut jitter = scale * 1e-12;
    while jitter <= scale * 1e-2 {
        let mut shifted = a.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(ch) = cholesky_checked(&shifted) {
            return Some(ch.solve(b));
        }
        jitter *= 100.0;
    }
    None
}

/// Cholesky factorization that also rejects numerically singular matrices
/// (pivot ratio below `1e-7`, i.e. condition number above roughly `1e14`).
pub fn cholesky_checked(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let ch = a.clone().cholesky()?;
    let diag = ch.l_dirty().diagonal();
    let max = diag.iter().fold(0.0f64, |m, v| m.max(*v));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    (min > 1e-7 * max).then_some(ch)
}

/// Result of a weighted least-squares fit with collinear columns removed.
#[derive(Debug, Clone)]
pub struct LstsqFit {
    /// Coefficients for the kept columns, in their original order.
    pub coefficients: Vec<f64>,
    /// Indices of the design columns that were kept.
    pub kept: Vec<usize>,
}

impl LstsqFit {
    /// Coefficient of design column `col`, if that column was kept.
    pub fn coefficient(&self, col: usize) -> Option<f64> {
        self.kept.iter().position(|&k| k == col).map(|p| self.coefficients[p])
    }
}

/// Weighted least squares by modified Gram–Schmidt QR with
/// reorthogonalization. Columns whose residual norm after projection on the
/// previously kept columns falls below `1e-10` of their own norm are dropped.
pub fn weighted_lstsq(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> LstsqFit {
    let n = x.nrows();
    let sw: Vec<f64> = w.iter().map(|v| v.max(0.0).sqrt()).collect();
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut r: Vec<Vec<f64>> = Vec::new(); // r[k][j]: coefficient of q_j in kept column k
    let mut kept = Vec::new();

    for c in 0..x.ncols() {
        let mut v: Vec<f64> = (0..n).map(|i| x[(i, c)] * sw[i]).collect();
        let norm0 = dot(&v, &v).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut coeffs = vec![0.0; q.len()];
        for _ in 0..2 {
            for (j, qj) in q.iter().enumerate() {
                let p = dot(qj, &v);
                coeffs[j] += p;
                axpy(-p, qj, &mut v);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm <= 1e-10 * norm0 {
            continue;
        }
        v.iter_mut().for_each(|e| *e /= norm);
        coeffs.push(norm);
        q.push(v);
        r.push(coeffs);
        kept.push(c);
    }

    let yw: Vec<f64> = y.iter().zip(&sw).map(|(a, b)| a * b).collect();
    let qty: Vec<f64> = q.iter().map(|qj| dot(qj, &yw)).collect();
    let k = q.len();
    // R is upper triangular with R[j][col] = r[col][j].
    let mut beta = vec![0.0; k];
    for row in (0..k).rev() {
        let mut s = qty[row];
        for col in row + 1..k {
            s -= r[col][row] * beta[col];
        }
        beta[row] = s / r[row][row];
    }
    LstsqFit {
        coefficients: beta,
        kept,
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Numerically stable logistic function.
pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_recovers_exact_fit() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = [1.0, 3.0, 5.0, 7.0];
        let fit = weighted_lstsq(&x, &y, &[1.0, 2.0, 0.5, 1.0]);
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lstsq_drops_collinear_column() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 2.0, 1.0, 2.0, 4.0, 1.0, 3.0, 6.0]);
        let fit = weighted_lstsq(&x, &[1.0, 2.0, 3.0], &[1.0; 3]);
        assert_eq!(fit.kept, vec![0, 1]);
        assert!(fit.coefficient(2).is_none());
        assert!((fit.coefficient(1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spd_solve_with_singular_matrix_uses_jitter() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 2.0]);
        let x = solve_spd(&a, &b).unwrap();
        assert!(((&a * &x) - &b).norm() < 1e-6);
    }

    #[test]
    fn expit_is_stable() {
        assert_eq!(expit(0.0), 0.5);
        assert!(expit(-800.0) >= 0.0 && expit(800.0) <= 1.0);
        assert!((log1p_exp(1000.0) - 1000.0).abs() < 1e-12);
        assert!((log1p_exp(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
