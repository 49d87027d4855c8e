//! ATT estimation from weights: the weighted mean difference (IPW) and
//! weighted outcome regressions (doubly robust), plus per-replicate error
//! metrics against a known effect.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::weighted_lstsq;
use crate::types::{confounder_columns, ConfounderSetId, Dataset, WeightSet, NUM_COVARIATES};
use crate::weights::logistic::{fit_logistic_weighted, DEFAULT_RIDGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttMethod {
    Ipw,
    DoublyRobust,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttEstimate {
    /// Effect estimate; a log odds ratio for binary outcomes under DR.
    pub value: f64,
    pub method: AttMethod,
    pub converged: bool,
    pub notes: String,
}

/// Weighted treated mean minus weighted control mean.
pub fn att_ipw(dataset: &Dataset, weights: &WeightSet) -> Result<AttEstimate> {
    weights.validate(&dataset.treatment)?;
    let (mut st, mut wt, mut sc, mut wc) = (0.0, 0.0, 0.0, 0.0);
    for ((&t, &y), &w) in dataset.treatment.iter().zip(&dataset.outcome).zip(&weights.weights) {
        if t == 1 {
            st += w * y;
            wt += w;
        } else {
            sc += w * y;
            wc += w;
        }
    }
    Ok(AttEstimate {
        value: st / wt - sc / wc,
        method: AttMethod::Ipw,
        converged: true,
        notes: String::new(),
    })
}

/// Design `[1, T, X_columns...]`.
fn outcome_design(dataset: &Dataset, columns: &[usize]) -> DMatrix<f64> {
    let n = dataset.n();
    DMatrix::from_fn(n, 2 + columns.len(), |i, c| match c {
        0 => 1.0,
        1 => f64::from(dataset.treatment[i]),
        _ => dataset.covariates[(i, columns[c - 2] - 1)],
    })
}

/// Weighted linear regression of Y on intercept, T and the main effects of
/// the confounder-set columns; returns the T coefficient.
pub fn att_dr_continuous(dataset: &Dataset, weights: &WeightSet, set: ConfounderSetId) -> Result<AttEstimate> {
    att_dr_continuous_on(dataset, weights, &confounder_columns(set))
}

pub fn att_dr_continuous_on(dataset: &Dataset, weights: &WeightSet, columns: &[usize]) -> Result<AttEstimate> {
    weights.validate(&dataset.treatment)?;
    let design = outcome_design(dataset, columns);
    let fit = weighted_lstsq(&design, &dataset.outcome, &weights.weights);
    let value = fit
        .coefficient(1)
        .ok_or_else(|| Error::Solver("treatment indicator is collinear with the covariates".into()))?;
    let dropped: Vec<String> = (2..design.ncols())
        .filter(|c| !fit.kept.contains(c))
        .map(|c| format!("x{}", columns[c - 2]))
        .collect();
    let notes = if dropped.is_empty() {
        String::new()
    } else {
        format!("dropped collinear columns: {}", dropped.join(","))
    };
    Ok(AttEstimate {
        value,
        method: AttMethod::DoublyRobust,
        converged: true,
        notes,
    })
}

/// Weighted logistic regression of a binary Y on intercept, T and main
/// effects; returns the T coefficient (conditional log odds ratio).
pub fn att_dr_binary(dataset: &Dataset, weights: &WeightSet, set: ConfounderSetId) -> Result<AttEstimate> {
    att_dr_binary_on(dataset, weights, &confounder_columns(set))
}

pub fn att_dr_binary_on(dataset: &Dataset, weights: &WeightSet, columns: &[usize]) -> Result<AttEstimate> {
    weights.validate(&dataset.treatment)?;
    if dataset.outcome.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidInput("binary outcome must be 0 or 1".into()));
    }
    let design = outcome_design(dataset, columns);
    let fit = match fit_logistic_weighted(&design, &dataset.outcome, &weights.weights, DEFAULT_RIDGE) {
        Err(Error::DegenerateLabels) => return Err(Error::DegenerateOutcome),
        other => other?,
    };
    Ok(AttEstimate {
        value: fit.coefficients[1],
        method: AttMethod::DoublyRobust,
        converged: fit.converged,
        notes: if fit.ridge > DEFAULT_RIDGE {
            format!("ridge escalated to {:e}", fit.ridge)
        } else {
            String::new()
        },
    })
}

/// Doubly robust estimate on the dataset's natural scale: logistic for the
/// binary outcome model, linear otherwise.
pub fn att_dr(dataset: &Dataset, weights: &WeightSet, columns: &[usize]) -> Result<AttEstimate> {
    if dataset.outcome_model.is_binary() {
        att_dr_binary_on(dataset, weights, columns)
    } else {
        att_dr_continuous_on(dataset, weights, columns)
    }
}

/// Outcome-regression columns: the weighting columns plus any `extra`
/// covariates, ascending and without repeats.
pub fn regression_columns(columns: &[usize], extra: &[usize]) -> Result<Vec<usize>> {
    if let Some(&bad) = extra.iter().find(|&&c| c == 0 || c > NUM_COVARIATES) {
        return Err(Error::Config(format!("covariate column {bad} outside 1..={NUM_COVARIATES}")));
    }
    let mut all: Vec<usize> = columns.iter().chain(extra).copied().collect();
    all.sort_unstable();
    all.dedup();
    Ok(all)
}

/// `(|estimate − truth| / |truth|, (estimate − truth)²)`.
pub fn replicate_metrics(estimate: f64, truth: f64) -> Result<(f64, f64)> {
    if truth == 0.0 {
        return Err(Error::InvalidInput("true effect must be nonzero for relative bias".into()));
    }
    let err = estimate - truth;
    Ok((err.abs() / truth.abs(), err * err))
}
