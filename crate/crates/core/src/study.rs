//! Factorial Monte-Carlo study: sample sizes × outcome models × confounder
//! sets × estimators × replicates.
//!
//! Each replicate draws its own dataset from a seed mixed out of
//! `(base_seed, scenario, replicate index)`, so results do not depend on
//! execution order or worker count.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::balance_over;
use crate::csvio::{fmt_g17, fmt_opt};
use crate::datagen::{simulate_dataset_with, SimulationOptions};
use crate::error::{Error, Result};
use crate::estimate::{att_dr, regression_columns, replicate_metrics};
use crate::types::{confounder_columns, ConfounderSetId, EstimatorId, OutcomeModelId};
use crate::weights::{estimate_weights_on, EstimatorSettings};

/// Sample sizes of the full design.
pub const DEFAULT_SAMPLE_SIZES: [usize; 12] = [40, 80, 100, 200, 300, 400, 500, 600, 800, 1000, 1500, 2000];

/// Replicates per scenario at desk scale.
pub const DEFAULT_REPLICATES: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub outcome: OutcomeModelId,
    pub confounder_set: ConfounderSetId,
    pub estimator: EstimatorId,
    pub replicates: usize,
    pub base_seed: u64,
}

impl ScenarioConfig {
    /// Stable 64-bit identifier of the scenario cell (FNV-1a of its fields).
    pub fn scenario_hash(&self) -> u64 {
        let key = format!("{}|{}|{}|{}", self.n, self.outcome, self.confounder_set, self.estimator);
        key.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    pub fn replicate_seed(&self, index: usize) -> u64 {
        mix_seed(self.base_seed, self.scenario_hash(), index as u64)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Avalanche mix of the three seed components.
pub fn mix_seed(base_seed: u64, scenario_hash: u64, index: u64) -> u64 {
    let s = splitmix64(base_seed);
    let s = splitmix64(s ^ scenario_hash);
    splitmix64(s ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Settings shared by every cell of a study.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySettings {
    pub estimators: EstimatorSettings,
    pub simulation: SimulationOptions,
    /// Covariates added to every outcome regression on top of the
    /// confounder set (1-based).
    pub dr_extra_columns: Vec<usize>,
}

impl StudySettings {
    pub fn truth(&self) -> f64 {
        self.simulation.outcome.gamma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub outcome: OutcomeModelId,
    pub confounder_set: ConfounderSetId,
    pub estimator: EstimatorId,
    pub n: usize,
    pub replicate_index: usize,
    pub seed: u64,
    pub estimate: Option<f64>,
    pub abs_rel_bias: Option<f64>,
    pub squared_error: Option<f64>,
    pub mean_smd: Option<f64>,
    pub max_smd: Option<f64>,
    pub mean_ks: Option<f64>,
    pub max_ks: Option<f64>,
    pub ess_control: Option<f64>,
    pub converged: bool,
    pub redraws: u32,
    /// Failure or diagnostic message, empty when clean.
    pub notes: String,
}

impl ReplicateRecord {
    /// True when the replicate contributes to aggregate metrics.
    pub fn usable(&self) -> bool {
        self.converged && self.estimate.is_some()
    }
}

/// Simulates, weights, diagnoses and estimates one replicate. Estimator or
/// estimation failures are recorded in the returned record.
pub fn run_replicate(cfg: &ScenarioConfig, index: usize, settings: &StudySettings) -> Result<ReplicateRecord> {
    let seed = cfg.replicate_seed(index);
    let dataset = simulate_dataset_with(cfg.n, cfg.outcome, seed, &settings.simulation)?;
    let columns = confounder_columns(cfg.confounder_set);
    let mut record = ReplicateRecord {
        outcome: cfg.outcome,
        confounder_set: cfg.confounder_set,
        estimator: cfg.estimator,
        n: cfg.n,
        replicate_index: index,
        seed,
        estimate: None,
        abs_rel_bias: None,
        squared_error: None,
        mean_smd: None,
        max_smd: None,
        mean_ks: None,
        max_ks: None,
        ess_control: None,
        converged: false,
        redraws: dataset.redraws,
        notes: String::new(),
    };

    let weights = match estimate_weights_on(&dataset, &columns, cfg.estimator, &settings.estimators) {
        Ok(w) => w,
        Err(e) => {
            record.notes = format!("weights: {e}");
            return Ok(record);
        }
    };
    record.converged = weights.converged;
    record.notes = weights.notes.clone();

    match balance_over(&dataset, &weights.weights, &columns) {
        Ok(b) => {
            record.mean_smd = Some(b.mean_smd);
            record.max_smd = Some(b.max_smd);
            record.mean_ks = Some(b.mean_ks);
            record.max_ks = Some(b.max_ks);
            record.ess_control = Some(b.ess_control);
        }
        Err(e) => {
            record.converged = false;
            record.notes = format!("balance: {e}");
            return Ok(record);
        }
    }

    match regression_columns(&columns, &settings.dr_extra_columns).and_then(|c| att_dr(&dataset, &weights, &c)) {
        Ok(est) if est.value.is_finite() => {
            let (bias, se) = replicate_metrics(est.value, settings.truth())?;
            record.estimate = Some(est.value);
            record.abs_rel_bias = Some(bias);
            record.squared_error = Some(se);
            record.converged &= est.converged;
        }
        Ok(_) => {
            record.converged = false;
            record.notes = "estimate: non-finite".into();
        }
        Err(e) => {
            record.converged = false;
            record.notes = format!("estimate: {e}");
        }
    }
    Ok(record)
}

/// Runs every `(scenario, replicate)` cell on a pool of `parallelism`
/// workers. Output is ordered by scenario, then replicate index.
pub fn run_study(grid: &[ScenarioConfig], parallelism: usize, settings: &StudySettings) -> Result<Vec<ReplicateRecord>> {
    if grid.is_empty() {
        return Err(Error::Config("study grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|c| c.replicates == 0) {
        return Err(Error::Config(format!("scenario with n = {} has zero replicates", bad.n)));
    }
    let cells: Vec<(usize, usize)> = grid
        .iter()
        .enumerate()
        .flat_map(|(s, c)| (0..c.replicates).map(move |r| (s, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|&(s, r)| run_replicate(&grid[s], r, settings))
            .collect::<Result<Vec<_>>>()
    })
}

/// The full factorial grid for one outcome model.
pub fn full_grid(outcome: OutcomeModelId, replicates: usize, base_seed: u64) -> Vec<ScenarioConfig> {
    let mut grid = Vec::new();
    for &confounder_set in ConfounderSetId::ALL {
        for &estimator in EstimatorId::ALL {
            for &n in &DEFAULT_SAMPLE_SIZES {
                grid.push(ScenarioConfig {
                    n,
                    outcome,
                    confounder_set,
                    estimator,
                    replicates,
                    base_seed,
                });
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub outcome: OutcomeModelId,
    pub confounder_set: ConfounderSetId,
    pub estimator: EstimatorId,
    pub n: usize,
    pub replicates: usize,
    pub convergence_rate: f64,
    pub mean_abs_rel_bias: Option<f64>,
    pub abs_rel_bias_of_mean: Option<f64>,
    pub mse: Option<f64>,
    pub mean_mean_smd: Option<f64>,
    pub mean_max_smd: Option<f64>,
    pub mean_mean_ks: Option<f64>,
    pub mean_max_ks: Option<f64>,
    pub mean_ess: Option<f64>,
    pub obs_per_confounder_per_group: f64,
}

/// Observations per confounder per treatment group, `n / (2 k)`.
pub fn obs_per_confounder_per_group(n: usize, set: ConfounderSetId) -> f64 {
    n as f64 / (2.0 * confounder_columns(set).len() as f64)
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut s, mut k) = (0.0, 0usize);
    for v in values.flatten() {
        s += v;
        k += 1;
    }
    (k > 0).then(|| s / k as f64)
}

/// One row per scenario (in order of first appearance). Metrics average the
/// usable replicates only; the convergence rate reports how many those are.
pub fn aggregate(records: &[ReplicateRecord], truth: f64) -> Result<Vec<AggregateRow>> {
    if truth == 0.0 {
        return Err(Error::InvalidInput("true effect must be nonzero".into()));
    }
    type Key = (OutcomeModelId, ConfounderSetId, EstimatorId, usize);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: HashMap<Key, Vec<&ReplicateRecord>> = HashMap::new();
    for r in records {
        let key = (r.outcome, r.confounder_set, r.estimator, r.n);
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let rows = &groups[&key];
            let ok: Vec<&&ReplicateRecord> = rows.iter().filter(|r| r.usable()).collect();
            let mean_estimate = mean_of(ok.iter().map(|r| r.estimate));
            AggregateRow {
                outcome: key.0,
                confounder_set: key.1,
                estimator: key.2,
                n: key.3,
                replicates: rows.len(),
                convergence_rate: ok.len() as f64 / rows.len() as f64,
                mean_abs_rel_bias: mean_of(ok.iter().map(|r| r.abs_rel_bias)),
                abs_rel_bias_of_mean: mean_estimate.map(|m| (m - truth).abs() / truth.abs()),
                mse: mean_of(ok.iter().map(|r| r.squared_error)),
                mean_mean_smd: mean_of(ok.iter().map(|r| r.mean_smd)),
                mean_max_smd: mean_of(ok.iter().map(|r| r.max_smd)),
                mean_mean_ks: mean_of(ok.iter().map(|r| r.mean_ks)),
                mean_max_ks: mean_of(ok.iter().map(|r| r.max_ks)),
                mean_ess: mean_of(ok.iter().map(|r| r.ess_control)),
                obs_per_confounder_per_group: obs_per_confounder_per_group(key.3, key.1),
            }
        })
        .collect())
}

pub const REPLICATE_COLUMNS: &str = "outcome,confounder_set,estimator,n,replicate_index,seed,estimate,\
abs_rel_bias,squared_error,mean_smd,max_smd,mean_ks,max_ks,ess_control,converged,redraws";

pub const AGGREGATE_COLUMNS: &str = "outcome,confounder_set,estimator,n,replicates,convergence_rate,\
mean_abs_rel_bias,abs_rel_bias_of_mean,mse,mean_mean_smd,mean_max_smd,mean_mean_ks,mean_max_ks,\
mean_ess,obs_per_confounder_per_group";

pub fn records_to_csv(records: &[ReplicateRecord]) -> String {
    let mut out = String::from(REPLICATE_COLUMNS);
    out.push('\n');
    for r in records {
        let fields = [
            r.outcome.to_string(),
            r.confounder_set.to_string(),
            r.estimator.to_string(),
            r.n.to_string(),
            r.replicate_index.to_string(),
            r.seed.to_string(),
            fmt_opt(r.estimate),
            fmt_opt(r.abs_rel_bias),
            fmt_opt(r.squared_error),
            fmt_opt(r.mean_smd),
            fmt_opt(r.max_smd),
            fmt_opt(r.mean_ks),
            fmt_opt(r.max_ks),
            fmt_opt(r.ess_control),
            r.converged.to_string(),
            r.redraws.to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn aggregate_to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_COLUMNS);
    out.push('\n');
    for r in rows {
        let fields = [
            r.outcome.to_string(),
            r.confounder_set.to_string(),
            r.estimator.to_string(),
            r.n.to_string(),
            r.replicates.to_string(),
            fmt_g17(r.convergence_rate),
            fmt_opt(r.mean_abs_rel_bias),
            fmt_opt(r.abs_rel_bias_of_mean),
            fmt_opt(r.mse),
            fmt_opt(r.mean_mean_smd),
            fmt_opt(r.mean_max_smd),
            fmt_opt(r.mean_mean_ks),
            fmt_opt(r.mean_max_ks),
            fmt_opt(r.mean_ess),
            fmt_g17(r.obs_per_confounder_per_group),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
