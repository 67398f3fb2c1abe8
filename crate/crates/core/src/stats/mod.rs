//! Correlation-aware inference for intervention effects: hierarchical
//! bootstrap and linear mixed models.

pub mod bootstrap;
pub mod dataset;
pub mod lmm;
pub mod optim;

pub use bootstrap::{hierarchical_bootstrap, BootstrapCi};
pub use dataset::{mean_difference, mean_response, EffectDataset, EffectRow};
pub use lmm::{fit_lmm, fit_model, lrt_fixed_effect, LmmFit, LrtResult, ModelTerms, VarianceComponents};

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("empty dataset")]
    Empty,
    #[error("invalid row: {0}")]
    InvalidRow(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model is not identifiable: {0}")]
    NonIdentifiable(String),
    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),
    #[error("response: {0}")]
    Response(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
