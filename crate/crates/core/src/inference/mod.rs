//! Bayesian fitting of utility families to choice data.

pub mod diagnostics;
pub mod fit;
pub mod nuts;
pub mod posterior;
pub mod priors;
pub mod summary;

pub use diagnostics::{diagnostics, ess, rhat, Diagnostics};
pub use fit::{
    best_fit, evaluate, fit_all_families, fit_family, run_mcmc, write_accuracy_table, write_leaderboard_csv, Chains,
    FitResult, FitStatus, SamplerConfig,
};
pub use posterior::Posterior;
pub use priors::{FamilyPriors, Prior, PriorSpec};
pub use summary::{hdi, summarize, ParamSummary};
