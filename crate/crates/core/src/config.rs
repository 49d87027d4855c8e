//! JSON study configuration.
//!
//! ```json
//! {
//!   "sample_sizes": [200, 2000],
//!   "outcomes": ["O2"],
//!   "confounder_sets": ["all_covariates"],
//!   "estimators": ["LR", "EB2"],
//!   "replicates": 200,
//!   "base_seed": 1,
//!   "parallelism": 4,
//!   "results_file": "replicates.csv",
//!   "aggregate_file": "aggregate.csv",
//!   "hyperparameters": { "ridge": 1e-8, "clip_weights": true, "gbm": { "max_trees": 3000 } }
//! }
//! ```
//!
//! Every field is optional; omitted fields take the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::SimulationOptions;
use crate::error::{Error, Result};
use crate::estimate::regression_columns;
use crate::study::{ScenarioConfig, StudySettings, DEFAULT_REPLICATES, DEFAULT_SAMPLE_SIZES};
use crate::types::{ConfounderSetId, EstimatorId, OutcomeModelId};
use crate::weights::EstimatorSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfigFile {
    pub sample_sizes: Vec<usize>,
    pub outcomes: Vec<OutcomeModelId>,
    pub confounder_sets: Vec<ConfounderSetId>,
    pub estimators: Vec<EstimatorId>,
    pub replicates: usize,
    pub base_seed: u64,
    pub parallelism: usize,
    /// Relative to the output directory.
    pub results_file: String,
    pub aggregate_file: String,
    pub hyperparameters: EstimatorSettings,
    pub simulation: SimulationOptions,
    /// Covariates (1-based) added to every outcome regression.
    pub dr_extra_columns: Vec<usize>,
}

impl Default for StudyConfigFile {
    fn default() -> Self {
        StudyConfigFile {
            sample_sizes: DEFAULT_SAMPLE_SIZES.to_vec(),
            outcomes: vec![OutcomeModelId::O2],
            confounder_sets: ConfounderSetId::ALL.to_vec(),
            estimators: EstimatorId::ALL.to_vec(),
            replicates: DEFAULT_REPLICATES,
            base_seed: 1,
            parallelism: 1,
            results_file: "replicates.csv".into(),
            aggregate_file: "aggregate.csv".into(),
            hyperparameters: EstimatorSettings::default(),
            simulation: SimulationOptions::default(),
            dr_extra_columns: Vec::new(),
        }
    }
}

impl StudyConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfigFile = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |name: &str| Err(Error::Config(format!("{name} must not be empty")));
        if self.sample_sizes.is_empty() {
            return empty("sample_sizes");
        }
        if self.outcomes.is_empty() {
            return empty("outcomes");
        }
        if self.confounder_sets.is_empty() {
            return empty("confounder_sets");
        }
        if self.estimators.is_empty() {
            return empty("estimators");
        }
        if let Some(&n) = self.sample_sizes.iter().find(|&&n| n < 4) {
            return Err(Error::Config(format!("sample size {n} is below the minimum of 4")));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if self.results_file.is_empty() || self.aggregate_file.is_empty() || self.results_file == self.aggregate_file {
            return Err(Error::Config("results_file and aggregate_file must be distinct non-empty names".into()));
        }
        let h = &self.hyperparameters;
        if !(h.ridge >= 0.0 && h.ridge.is_finite()) {
            return Err(Error::Config("ridge must be finite and nonnegative".into()));
        }
        if !(h.eb_constraint_tolerance > 0.0) || !(h.cbps_residual_tolerance > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if h.eb_max_iterations == 0 || h.cbps_max_iterations == 0 {
            return Err(Error::Config("solver iteration limits must be positive".into()));
        }
        h.gbm.validate()?;
        regression_columns(&[], &self.dr_extra_columns)?;
        self.simulation.correlation.cholesky_factor()?;
        Ok(())
    }

    /// Scenarios ordered by outcome, confounder set, estimator, then n.
    pub fn grid(&self) -> Vec<ScenarioConfig> {
        let mut grid = Vec::new();
        for &outcome in &self.outcomes {
            for &confounder_set in &self.confounder_sets {
                for &estimator in &self.estimators {
                    for &n in &self.sample_sizes {
                        grid.push(ScenarioConfig {
                            n,
                            outcome,
                            confounder_set,
                            estimator,
                            replicates: self.replicates,
                            base_seed: self.base_seed,
                        });
                    }
                }
            }
        }
        grid
    }

    pub fn settings(&self) -> StudySettings {
        StudySettings {
            estimators: self.hyperparameters.clone(),
            simulation: self.simulation.clone(),
            dr_extra_columns: self.dr_extra_columns.clone(),
        }
    }
}
