//! Covariate balancing for binary-treatment observational data: overlap
//! diagnostics and trimming, propensity-score and balancing-weight
//! estimators, balance evaluation, effect estimation and sensitivity to an
//! omitted confounder.

pub mod balance;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod job;
mod linalg;
pub mod outcome;
pub mod sensitivity;
pub mod stats;
pub mod synth;
pub mod weights;

pub use balance::{
    balance_table, recommend_method, BalanceReport, BalanceSummary, Recommendation, SmdDenominator,
    BALANCE_THRESHOLD,
};
pub use dataset::{assign_roles, design_matrix, load_csv, Dataset, DesignMatrix, ParseOptions, RoleAssignment};
pub use error::{Error, Result};
pub use estimators::{fit_method, run_all, EstimatorConfig, MethodId, RunResult};
pub use job::Progress;
pub use outcome::{doubly_robust_effect, weighted_means_effect, EffectEstimate};
pub use sensitivity::{ov_analysis, SensitivityConfig, SensitivityResult};
pub use weights::{Estimand, PropensityScores, WeightSet};
