//! Propensity-score and balancing-weight estimators for the ATT, balance
//! diagnostics, a simulation design with known effect, and a Monte-Carlo
//! study harness.

pub mod balance;
pub mod config;
pub mod csvio;
pub mod datagen;
pub mod error;
pub mod estimate;
pub mod linalg;
pub mod plot;
pub mod study;
pub mod types;
pub mod weights;

pub use error::{Error, Result};
pub use types::{
    confounder_columns, BalanceSummary, ConfounderSetId, Dataset, EstimatorId, OutcomeModelId, WeightSet,
    BINARY_COLUMNS, NUM_COVARIATES,
};
