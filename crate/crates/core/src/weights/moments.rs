//! Moment expansion: each continuous column becomes `m` sample-orthonormal
//! polynomial columns of degree `1..=m`; binary columns pass through.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MomentExpansionConfig {
    /// Highest polynomial degree, 1 to 3.
    pub m: usize,
    /// Positions (0-based, within the matrix being expanded) of the columns
    /// to expand. All other columns are copied unchanged.
    pub continuous_columns: Vec<usize>,
}

impl MomentExpansionConfig {
    /// Expands every column that is not binary-valued.
    pub fn detect(x: &DMatrix<f64>, m: usize) -> Self {
        let continuous_columns = (0..x.ncols())
            .filter(|&c| !is_binary(x.column(c).iter().copied()))
            .collect();
        MomentExpansionConfig { m, continuous_columns }
    }
}

/// True when every value is exactly 0 or 1.
pub fn is_binary(values: impl IntoIterator<Item = f64>) -> bool {
    values.into_iter().all(|v| v == 0.0 || v == 1.0)
}

pub fn expand_moments(x: &DMatrix<f64>, cfg: &MomentExpansionConfig) -> Result<DMatrix<f64>> {
    if !(1..=3).contains(&cfg.m) {
        return Err(Error::Config(format!("moment order {} outside 1..=3", cfg.m)));
    }
    if let Some(&c) = cfg.continuous_columns.iter().find(|&&c| c >= x.ncols()) {
        return Err(Error::Config(format!("continuous column {c} out of range")));
    }
    let n = x.nrows();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for c in 0..x.ncols() {
        let values: Vec<f64> = x.column(c).iter().copied().collect();
        if cfg.continuous_columns.contains(&c) {
            columns.extend(orthonormal_polynomials(&values, cfg.m).ok_or(Error::DegenerateColumn(c))?);
        } else {
            columns.push(values);
        }
    }
    Ok(DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]))
}

/// Degree `1..=m` polynomials of `values`, orthogonal to the constant and to
/// each other under the sample inner product, each scaled to unit sample
/// variance (denominator n - 1). `None` if a degree is linearly dependent on
/// lower ones (e.g. a constant column).
fn orthonormal_polynomials(values: &[f64], m: usize) -> Option<Vec<Vec<f64>>> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if !(sd > 0.0) {
        return None;
    }
    let s: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    let scale = ((n - 1) as f64).sqrt();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    for degree in 1..=m {
        let mut v: Vec<f64> = s.iter().map(|x| x.powi(degree as i32)).collect();
        let initial = norm(&v);
        for _ in 0..2 {
            let mu = v.iter().sum::<f64>() / n as f64;
            v.iter_mut().for_each(|e| *e -= mu);
            for q in &basis {
                let proj = dot(q, &v) / dot(q, q);
                v.iter_mut().zip(q).for_each(|(e, qi)| *e -= proj * qi);
            }
        }
        let len = norm(&v);
        if !(len > 1e-8 * initial) {
            return None;
        }
        v.iter_mut().for_each(|e| *e *= scale / len);
        basis.push(v);
    }
    Some(basis)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
