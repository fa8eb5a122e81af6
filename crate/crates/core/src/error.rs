//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by simulation, estimation, and solver routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("diffusion coefficient is not positive (min sampled value {sigma_min})")]
    NonPositiveDiffusion { sigma_min: f64 },

    #[error("model declares no agents")]
    EmptyEnsemble,

    #[error("time grid mismatch: {n_steps} steps of dt = {dt} do not reproduce horizon {horizon}")]
    GridMismatch {
        horizon: f64,
        dt: f64,
        n_steps: usize,
    },

    #[error("state became non-finite at path {path}, agent {agent}, step {step}")]
    NumericOverflow {
        path: usize,
        agent: usize,
        step: usize,
    },

    #[error("path bundle was simulated without interaction; no records to reweight")]
    MissingInteractionRecord,

    #[error("cost evaluated non-finite at path {path}, step {step}")]
    NonFiniteCost { path: usize, step: usize },

    #[error("alpha = 0 is risk-neutral; use the plain mean estimator")]
    AlphaZero,

    #[error("bound variant requires a constant diffusion coefficient")]
    NonConstantSigma,

    #[error("bound variant requires model variant {expected}")]
    VariantMismatch { expected: &'static str },

    #[error("interaction form unsupported here: {reason}")]
    UnsupportedInteraction { reason: String },

    #[error("policy search simplex left the parameter box")]
    SearchDiverged,

    #[error("solver did not converge within {max_iter} iterations (residual {residual})")]
    NotConverged { max_iter: usize, residual: f64 },

    #[error("principal eigenfunction lost positivity (min value {min_value}); refine the grid")]
    NonPositiveEigenfunction { min_value: f64 },

    #[error("empty measure: no atoms")]
    EmptyMeasure,

    #[error("empty sample vector")]
    EmptySample,

    #[error("alpha rule violates the vanishing conditions: {reason}")]
    NonVanishingAlphaRule { reason: String },

    #[error("mean-field flow has not converged; rerun the fixed point solve")]
    FlowNotConverged,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
