//! The nine ATT weight estimators and the dispatcher that applies them to a
//! dataset restricted to a confounder set.

pub mod cbps;
pub mod eb;
pub mod gbm;
pub mod logistic;
pub mod moments;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{confounder_columns, ConfounderSetId, Dataset, EstimatorId, WeightSet};

pub use cbps::{fit_cbps, CbpsConfig};
pub use eb::{fit_eb, EbConfig};
pub use gbm::{fit_gbm, GbmConfig, GbmCriterion, GbmFit};
pub use logistic::{fit_logistic, fit_logistic_weighted, with_intercept, LogisticFit};
pub use moments::{expand_moments, MomentExpansionConfig};

/// Clipping kicks in when the largest control weight exceeds this multiple
/// of the median control weight.
pub const CLIP_RATIO: f64 = 1000.0;
pub const CLIP_QUANTILE: f64 = 0.99;

/// Odds weights for the ATT: 1 for treated, `ps / (1 − ps)` for controls.
/// With `clip`, control weights are capped at their 99th percentile when
/// the max/median ratio exceeds [`CLIP_RATIO`].
pub fn ps_to_att_weights(ps: &[f64], treatment: &[u8], clip: bool) -> Result<WeightSet> {
    if ps.len() != treatment.len() {
        return Err(Error::InvalidInput("propensity and treatment lengths differ".into()));
    }
    if let Some(&p) = ps.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::Positivity(p));
    }
    let mut weights: Vec<f64> = ps
        .iter()
        .zip(treatment)
        .map(|(&p, &t)| if t == 1 { 1.0 } else { p / (1.0 - p) })
        .collect();
    let mut ws_notes = None;
    if clip {
        let mut control: Vec<f64> =
            weights.iter().zip(treatment).filter(|(_, &t)| t == 0).map(|(w, _)| *w).collect();
        if !control.is_empty() {
            control.sort_by(|a, b| a.total_cmp(b));
            let median = quantile_sorted(&control, 0.5);
            let max = *control.last().unwrap();
            if median > 0.0 && max / median > CLIP_RATIO {
                let cap = quantile_sorted(&control, CLIP_QUANTILE);
                let mut clipped = 0;
                for (w, &t) in weights.iter_mut().zip(treatment) {
                    if t == 0 && *w > cap {
                        *w = cap;
                        clipped += 1;
                    }
                }
                ws_notes = Some(format!("clipped {clipped} control weights at {cap:.6e}"));
            }
        }
    }
    let mut ws = WeightSet::new(weights, EstimatorId::Lr);
    if let Some(note) = ws_notes {
        ws.note(note);
    }
    Ok(ws)
}

/// Linearly interpolated quantile of ascending `sorted` values.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Hyperparameters shared by all estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSettings {
    pub ridge: f64,
    pub clip_weights: bool,
    pub gbm: GbmConfig,
    pub eb_constraint_tolerance: f64,
    pub eb_max_iterations: usize,
    pub cbps_residual_tolerance: f64,
    pub cbps_max_iterations: usize,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        let eb = EbConfig::new(1);
        let cbps = CbpsConfig::default();
        EstimatorSettings {
            ridge: logistic::DEFAULT_RIDGE,
            clip_weights: true,
            gbm: GbmConfig::default(),
            eb_constraint_tolerance: eb.constraint_tolerance,
            eb_max_iterations: eb.max_iterations,
            cbps_residual_tolerance: cbps.residual_tolerance,
            cbps_max_iterations: cbps.max_iterations,
        }
    }
}

pub fn estimate_weights(dataset: &Dataset, set: ConfounderSetId, estimator: EstimatorId) -> Result<WeightSet> {
    estimate_weights_with(dataset, set, estimator, &EstimatorSettings::default())
}

pub fn estimate_weights_with(
    dataset: &Dataset,
    set: ConfounderSetId,
    estimator: EstimatorId,
    settings: &EstimatorSettings,
) -> Result<WeightSet> {
    estimate_weights_on(dataset, &confounder_columns(set), estimator, settings)
}

/// Same as [`estimate_weights_with`] for an explicit list of 1-based columns.
pub fn estimate_weights_on(
    dataset: &Dataset,
    columns: &[usize],
    estimator: EstimatorId,
    settings: &EstimatorSettings,
) -> Result<WeightSet> {
    let x = dataset.select(columns);
    let t = &dataset.treatment;
    let ws = match estimator {
        EstimatorId::Lr => {
            let design = with_intercept(&x);
            let fit = fit_logistic(&design, t, settings.ridge)?;
            let mut ws = ps_to_att_weights(&fit.predict(&design), t, settings.clip_weights)?;
            ws.converged = fit.converged;
            ws.iterations = fit.iterations;
            ws
        }
        EstimatorId::Cbps1 | EstimatorId::Cbps2 | EstimatorId::Cbps3 => {
            let cfg = CbpsConfig {
                residual_tolerance: settings.cbps_residual_tolerance,
                max_iterations: settings.cbps_max_iterations,
            };
            fit_cbps(&x, t, estimator.moments().unwrap_or(1), &cfg)?
        }
        EstimatorId::Eb1 | EstimatorId::Eb2 | EstimatorId::Eb3 => {
            let cfg = EbConfig {
                m: estimator.moments().unwrap_or(1),
                base_weights: None,
                constraint_tolerance: settings.eb_constraint_tolerance,
                max_iterations: settings.eb_max_iterations,
            };
            fit_eb(&x, t, &cfg)?
        }
        EstimatorId::GbmEs | EstimatorId::GbmKs => {
            let criterion = if estimator == EstimatorId::GbmEs {
                GbmCriterion::MeanSmd
            } else {
                GbmCriterion::MaxKs
            };
            let cfg = GbmConfig {
                criterion,
                clip_weights: settings.clip_weights,
                ..settings.gbm.clone()
            };
            fit_gbm(&x, t, &cfg)?.weights
        }
    };
    Ok(WeightSet { estimator, ..ws })
}
