//! Shared domain types: datasets, weight sets, and the identifiers for
//! estimators, confounder sets and outcome models.
//!
//! Covariate indices are 1-based everywhere (`1..=10` for `X_1..X_10`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of covariates in a simulated dataset.
pub const NUM_COVARIATES: usize = 10;

/// Columns (1-based) that the data generator dichotomizes.
pub const BINARY_COLUMNS: [usize; 6] = [1, 3, 5, 6, 8, 9];

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} '{}'; expected one of: {}",
                        stringify!($name),
                        other,
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

string_enum! {
    /// The nine weight estimators.
    EstimatorId {
        Lr => "LR",
        Cbps1 => "CBPS1",
        Cbps2 => "CBPS2",
        Cbps3 => "CBPS3",
        Eb1 => "EB1",
        Eb2 => "EB2",
        Eb3 => "EB3",
        GbmEs => "GBM_ES",
        GbmKs => "GBM_KS",
    }
}

string_enum! {
    /// Which covariates are treated as confounders when weighting.
    ConfounderSetId {
        TrueConfounders => "true_confounders",
        TreatmentAll => "treatment_all",
        AllCovariates => "all_covariates",
        OutcomeAll => "outcome_all",
        TrueSubset => "true_subset",
        TreatmentOnly => "treatment_only",
        OutcomeOnly => "outcome_only",
    }
}

string_enum! {
    /// Outcome-generating model. `O1` is binary; the rest are continuous.
    OutcomeModelId {
        O1 => "O1",
        O2 => "O2",
        O3 => "O3",
        O4 => "O4",
    }
}

impl EstimatorId {
    /// Number of moments balanced by the CBPS / EB variants.
    pub fn moments(self) -> Option<usize> {
        match self {
            EstimatorId::Cbps1 | EstimatorId::Eb1 => Some(1),
            EstimatorId::Cbps2 | EstimatorId::Eb2 => Some(2),
            EstimatorId::Cbps3 | EstimatorId::Eb3 => Some(3),
            _ => None,
        }
    }
}

impl OutcomeModelId {
    pub fn is_binary(self) -> bool {
        self == OutcomeModelId::O1
    }
}

/// Covariate columns (1-based, ascending) belonging to a confounder set.
pub fn confounder_columns(id: ConfounderSetId) -> Vec<usize> {
    match id {
        ConfounderSetId::TrueConfounders => vec![1, 2, 3, 4],
        ConfounderSetId::TreatmentAll => vec![1, 2, 3, 4, 5, 6, 7],
        ConfounderSetId::AllCovariates => (1..=10).collect(),
        ConfounderSetId::OutcomeAll => vec![1, 2, 3, 4, 8, 9, 10],
        ConfounderSetId::TrueSubset => vec![1, 2],
        ConfounderSetId::TreatmentOnly => vec![5, 6, 7],
        ConfounderSetId::OutcomeOnly => vec![8, 9, 10],
    }
}

/// One simulated (or loaded) sample: covariates, treatment, outcome and,
/// for synthetic data, the true propensity score.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// n x 10, column `j - 1` holds `X_j`.
    pub covariates: DMatrix<f64>,
    pub treatment: Vec<u8>,
    pub outcome: Vec<f64>,
    pub true_ps: Option<Vec<f64>>,
    pub outcome_model: OutcomeModelId,
    pub seed: u64,
    /// How many times generation was restarted because a group was too small.
    pub redraws: u32,
}

impl Dataset {
    /// Builds a dataset after checking the shape and value invariants.
    pub fn new(
        covariates: DMatrix<f64>,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        true_ps: Option<Vec<f64>>,
        outcome_model: OutcomeModelId,
        seed: u64,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if covariates.ncols() != NUM_COVARIATES {
            return Err(Error::InvalidInput(format!(
                "expected {NUM_COVARIATES} covariate columns, got {}",
                covariates.ncols()
            )));
        }
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::InvalidInput("per-unit sequences differ in length".into()));
        }
        if treatment.iter().any(|&t| t > 1) {
            return Err(Error::InvalidInput("treatment must be 0 or 1".into()));
        }
        if let Some(ps) = &true_ps {
            if ps.len() != n {
                return Err(Error::InvalidInput("true_ps length differs from n".into()));
            }
            if let Some(&p) = ps.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
                return Err(Error::Positivity(p));
            }
        }
        Ok(Dataset {
            covariates,
            treatment,
            outcome,
            true_ps,
            outcome_model,
            seed,
            redraws: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    /// Values of covariate `X_j` (1-based).
    pub fn covariate(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.covariates.as_slice()[(j - 1) * n..j * n]
    }

    /// The n x k matrix of the given 1-based covariate columns.
    pub fn select(&self, columns: &[usize]) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, columns.len(), |i, c| self.covariates[(i, columns[c] - 1)])
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&t| t == 1).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }
}

/// Per-unit ATT weights. Treated units carry weight 1; controls are
/// stored unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub weights: Vec<f64>,
    pub estimator: EstimatorId,
    pub converged: bool,
    pub iterations: usize,
    pub notes: String,
}

impl WeightSet {
    pub fn new(weights: Vec<f64>, estimator: EstimatorId) -> Self {
        WeightSet {
            weights,
            estimator,
            converged: true,
            iterations: 0,
            notes: String::new(),
        }
    }

    pub(crate) fn note(&mut self, text: impl AsRef<str>) {
        if !self.notes.is_empty() {
            self.notes.push_str("; ");
        }
        self.notes.push_str(text.as_ref());
    }

    /// Checks nonnegativity and that both groups carry positive weight.
    pub fn validate(&self, treatment: &[u8]) -> Result<()> {
        if self.weights.len() != treatment.len() {
            return Err(Error::InvalidInput(format!(
                "{} weights for {} units",
                self.weights.len(),
                treatment.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidInput(format!("weight {w} is not a finite nonnegative value")));
        }
        let positive = |group: u8| {
            treatment
                .iter()
                .zip(&self.weights)
                .any(|(&t, &w)| t == group && w > 0.0)
        };
        if !positive(1) {
            return Err(Error::ZeroGroupWeight("treated"));
        }
        if !positive(0) {
            return Err(Error::ZeroGroupWeight("control"));
        }
        Ok(())
    }
}

/// Balance of one weighted sample over a confounder set.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceSummary {
    pub smd_per_covariate: BTreeMap<usize, f64>,
    pub ks_per_covariate: BTreeMap<usize, f64>,
    /// Covariates whose SMD was undefined (zero treated variance).
    pub smd_flagged: Vec<usize>,
    pub mean_smd: f64,
    pub max_smd: f64,
    pub mean_ks: f64,
    pub max_ks: f64,
    pub ess_control: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn set(id: ConfounderSetId) -> BTreeSet<usize> {
        confounder_columns(id).into_iter().collect()
    }

    #[test]
    fn confounder_sets_match_design() {
        assert_eq!(confounder_columns(ConfounderSetId::TrueConfounders), vec![1, 2, 3, 4]);
        assert_eq!(confounder_columns(ConfounderSetId::TreatmentOnly), vec![5, 6, 7]);
        assert_eq!(
            confounder_columns(ConfounderSetId::AllCovariates),
            (1..=10).collect::<Vec<_>>()
        );
        assert_eq!(confounder_columns(ConfounderSetId::TrueSubset), vec![1, 2]);
        for &id in ConfounderSetId::ALL {
            let cols = confounder_columns(id);
            assert!(cols.windows(2).all(|w| w[0] < w[1]), "{id} not ascending");
        }
    }

    #[test]
    fn confounder_sets_nest() {
        use ConfounderSetId::*;
        let strict = |a: &BTreeSet<usize>, b: &BTreeSet<usize>| a.is_subset(b) && a != b;
        assert!(strict(&set(TrueSubset), &set(TrueConfounders)));
        assert!(strict(&set(TrueConfounders), &set(TreatmentAll)));
        assert!(strict(&set(TreatmentAll), &set(AllCovariates)));
        assert!(strict(&set(TrueConfounders), &set(OutcomeAll)));
        assert!(strict(&set(OutcomeAll), &set(AllCovariates)));
        assert!(set(TreatmentOnly).is_disjoint(&set(OutcomeOnly)));
    }

    #[test]
    fn enum_counts_and_names() {
        assert_eq!(EstimatorId::ALL.len(), 9);
        assert_eq!(ConfounderSetId::ALL.len(), 7);
        assert_eq!(OutcomeModelId::ALL.len(), 4);
        for &e in EstimatorId::ALL {
            assert_eq!(e.as_str().parse::<EstimatorId>().unwrap(), e);
        }
        assert!("BOGUS".parse::<EstimatorId>().is_err());
        assert_eq!(serde_json::to_string(&EstimatorId::GbmKs).unwrap(), "\"GBM_KS\"");
    }

    #[test]
    fn weightset_validation() {
        let t = [1, 0, 0];
        assert!(WeightSet::new(vec![1.0, 0.0, 2.0], EstimatorId::Lr).validate(&t).is_ok());
        assert!(WeightSet::new(vec![1.0, 0.0, 0.0], EstimatorId::Lr).validate(&t).is_err());
        assert!(WeightSet::new(vec![1.0, -1.0, 2.0], EstimatorId::Lr).validate(&t).is_err());
    }
}
