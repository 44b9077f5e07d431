//! Covariate-adjusted estimation of the risk difference in randomized trials.
//!
//! The crate fits a main-effects logistic regression of a binary outcome on
//! treatment and baseline covariates, standardizes the fitted model over the
//! whole sample (G-computation) to obtain the marginal risk difference, and
//! offers a family of variance estimators for that point estimate:
//!
//! | tag | estimator |
//! |-----|-----------|
//! | M1 | delta method, model-based coefficient covariance |
//! | M2 / M3 | delta method, HC2 / HC3 sandwich covariance |
//! | M4 | efficient influence function |
//! | M5 | semi-parametric (doubly robust representation) |
//! | M6 / M7 | delta method with HC2 / HC3 plus the between-covariate term |
//! | M8 / M9 | as M6 / M7 on the treatment-only model |
//!
//! The [`simulation`] module contains the Monte Carlo harness used to study
//! the operating characteristics of these estimators.

pub mod glm;
mod linalg;
pub mod inference;
pub mod simulation;
pub mod standardization;
pub mod trial_data;
pub mod variance;

pub use glm::{fit_irls, fit_with_fallback, FitConfig, FitError, LogisticFit, NonConvergenceReason};
pub use inference::{
    analyze_all, normal_quantile, summarize, wald_interval, InferenceError, InferenceSummary,
    MethodFailure, MethodOutcome, WaldInterval,
};
pub use standardization::{estimate_rd, predict_counterfactual, CounterfactualPredictions, RdEstimate};
pub use trial_data::{
    build_design, check_rank, load_csv, load_csv_with, read_csv, ColumnRole, CsvOptions, DataError,
    DesignMatrix, RankReport, TrialDataset, TrialRecord,
};
pub use variance::{
    CovarianceKind, HcType, Standardized, VarianceError, VarianceEstimate, VarianceMethod,
};
