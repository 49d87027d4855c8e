//! Weighted balance diagnostics: absolute standardized mean difference,
//! weighted Kolmogorov–Smirnov distance, effective sample size, and
//! Spearman screening of covariates against treatment and outcome.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::types::{confounder_columns, BalanceSummary, ConfounderSetId, Dataset, WeightSet};

/// Denominator of the standardized mean difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SmdStandardizer {
    /// Unweighted treated-group sample SD (n_t − 1).
    #[default]
    TreatedSd,
    /// `sqrt((s_t² + s_c²) / 2)` with unweighted group variances.
    PooledSd,
}

fn weighted_group_mean(x: &[f64], treatment: &[u8], weights: &[f64], group: u8) -> Option<f64> {
    let (mut s, mut w) = (0.0, 0.0);
    for ((&v, &t), &wi) in x.iter().zip(treatment).zip(weights) {
        if t == group {
            s += wi * v;
            w += wi;
        }
    }
    (w > 0.0).then(|| s / w)
}

fn group_variance(x: &[f64], treatment: &[u8], group: u8) -> Option<f64> {
    let vals: Vec<f64> = x.iter().zip(treatment).filter(|(_, &t)| t == group).map(|(v, _)| *v).collect();
    if vals.len() < 2 {
        return None;
    }
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    Some(vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64)
}

/// Absolute SMD. `None` when the standardizer is zero or undefined, in
/// which case the covariate is excluded from aggregates.
pub fn smd(x: &[f64], treatment: &[u8], weights: &[f64]) -> Option<f64> {
    smd_with(x, treatment, weights, SmdStandardizer::TreatedSd)
}

pub fn smd_with(x: &[f64], treatment: &[u8], weights: &[f64], standardizer: SmdStandardizer) -> Option<f64> {
    let mt = weighted_group_mean(x, treatment, weights, 1)?;
    let mc = weighted_group_mean(x, treatment, weights, 0)?;
    let var = match standardizer {
        SmdStandardizer::TreatedSd => group_variance(x, treatment, 1)?,
        SmdStandardizer::PooledSd => {
            0.5 * (group_variance(x, treatment, 1)? + group_variance(x, treatment, 0)?)
        }
    };
    let sd = var.sqrt();
    (sd > 0.0).then(|| (mt - mc).abs() / sd)
}

/// Maximum distance between the within-group normalized weighted ECDFs,
/// evaluated at every pooled sample value.
pub fn ks(x: &[f64], treatment: &[u8], weights: &[f64]) -> f64 {
    ks_with_order(x, &sort_order(x), treatment, weights)
}

/// Indices of `x` in ascending order of value.
pub(crate) fn sort_order(x: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(Ordering::Equal));
    order
}

/// KS distance given a precomputed ascending `order` of `x`.
pub(crate) fn ks_with_order(x: &[f64], order: &[usize], treatment: &[u8], weights: &[f64]) -> f64 {
    let (mut tot_t, mut tot_c) = (0.0, 0.0);
    for (&t, &w) in treatment.iter().zip(weights) {
        if t == 1 {
            tot_t += w;
        } else {
            tot_c += w;
        }
    }
    if !(tot_t > 0.0 && tot_c > 0.0) {
        return 0.0;
    }
    let (mut ft, mut fc) = (0.0, 0.0);
    let mut best: f64 = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        if treatment[i] == 1 {
            ft += weights[i];
        } else {
            fc += weights[i];
        }
        let last_of_value = order.get(pos + 1).map_or(true, |&j| x[j] != x[i]);
        if last_of_value {
            best = best.max((ft / tot_t - fc / tot_c).abs());
        }
    }
    best.clamp(0.0, 1.0)
}

/// Effective sample size `(Σw)² / Σw²`.
pub fn ess(weights: &[f64]) -> Result<f64> {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if !(s2 > 0.0) {
        return Err(Error::ZeroWeights);
    }
    Ok(s * s / s2)
}

/// Balance statistics over the columns of a confounder set.
pub fn balance_table(dataset: &Dataset, weights: &WeightSet, set: ConfounderSetId) -> Result<BalanceSummary> {
    balance_over(dataset, &weights.weights, &confounder_columns(set))
}

/// Balance statistics over arbitrary 1-based covariate columns.
pub fn balance_over(dataset: &Dataset, weights: &[f64], columns: &[usize]) -> Result<BalanceSummary> {
    let t = &dataset.treatment;
    if weights.len() != t.len() {
        return Err(Error::InvalidInput("weights do not match the dataset".into()));
    }
    let cols: Vec<(usize, &[f64])> = columns.iter().map(|&c| (c, dataset.covariate(c))).collect();
    summarize(&cols, t, weights)
}

pub(crate) fn summarize(columns: &[(usize, &[f64])], treatment: &[u8], weights: &[f64]) -> Result<BalanceSummary> {
    let mut smd_map = BTreeMap::new();
    let mut ks_map = BTreeMap::new();
    let mut flagged = Vec::new();
    for &(label, x) in columns {
        match smd(x, treatment, weights) {
            Some(v) => {
                smd_map.insert(label, v);
            }
            None => flagged.push(label),
        }
        ks_map.insert(label, ks(x, treatment, weights));
    }
    let control: Vec<f64> = treatment
        .iter()
        .zip(weights)
        .filter(|(&g, _)| g == 0)
        .map(|(_, &w)| w)
        .collect();
    let (mean_smd, max_smd) = mean_max(smd_map.values());
    let (mean_ks, max_ks) = mean_max(ks_map.values());
    Ok(BalanceSummary {
        smd_per_covariate: smd_map,
        ks_per_covariate: ks_map,
        smd_flagged: flagged,
        mean_smd,
        max_smd,
        mean_ks,
        max_ks,
        ess_control: ess(&control)?,
    })
}

fn mean_max<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (mut sum, mut max, mut count) = (0.0, 0.0f64, 0usize);
    for &v in values {
        sum += v;
        max = max.max(v);
        count += 1;
    }
    if count == 0 {
        (0.0, 0.0)
    } else {
        (sum / count as f64, max)
    }
}

/// Spearman correlations of each covariate with treatment and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningReport {
    pub with_treatment: BTreeMap<usize, f64>,
    pub with_outcome: BTreeMap<usize, f64>,
    /// Covariates reported as 0 because they (or the other variable) are constant.
    pub flagged: Vec<usize>,
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let order = sort_order(x);
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation; `None` if either variable is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman_screen(dataset: &Dataset) -> Result<ScreeningReport> {
    let n = dataset.n();
    if n < 3 {
        return Err(Error::InvalidInput("spearman screening needs n >= 3".into()));
    }
    let t: Vec<f64> = dataset.treatment.iter().map(|&v| f64::from(v)).collect();
    let mut report = ScreeningReport {
        with_treatment: BTreeMap::new(),
        with_outcome: BTreeMap::new(),
        flagged: Vec::new(),
    };
    for j in 1..=dataset.covariates.ncols() {
        let x = dataset.covariate(j);
        let rt = spearman(x, &t);
        let ry = spearman(x, &dataset.outcome);
        if rt.is_none() || ry.is_none() {
            report.flagged.push(j);
        }
        report.with_treatment.insert(j, rt.unwrap_or(0.0));
        report.with_outcome.insert(j, ry.unwrap_or(0.0));
    }
    Ok(report)
}
