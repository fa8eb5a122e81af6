//! Numerical library for interacting controlled diffusion ensembles.
//!
//! The crate simulates systems of coupled scalar diffusions under feedback
//! policies, computes path-measure reweighting quantities (log Radon-Nikodym
//! derivatives, relative entropy, Novikov diagnostics), evaluates risk-neutral
//! and risk-sensitive cost estimates, and assembles Monte Carlo certificates
//! for robustness bounds that compare the coupled (true) model against a
//! risk-sensitive treatment of the decoupled (nominal) model.
//!
//! Module map:
//! - [`sde`] — model definitions and Euler-Maruyama path ensembles
//! - [`measure`] — Girsanov log-weights, KL divergence, Novikov diagnostics
//! - [`cost`] — cost functionals, risk-neutral / risk-sensitive / tilted
//!   estimators, and the variational-gap check
//! - [`bounds`] — robustness-bound certificates and policy search
//! - [`alpha`] — risk-sensitivity parameter optimization and the
//!   small-interaction stability sweep
//! - [`meanfield`] — empirical measures, 1D Wasserstein distances,
//!   McKean-Vlasov fixed points, and the concentration probe
//! - [`hjb`] — ergodic risk-sensitive principal-eigenvalue solver
//! - [`rng`] — counter-based random streams for reproducible parallel runs
//! - [`stats`] — shared estimators (log-mean-exp, effective sample size)
//!
//! All randomness is derived from explicit 64-bit seeds through counter-based
//! streams, so every result is bit-reproducible regardless of thread count.

pub mod alpha;
pub mod bounds;
pub mod cost;
pub mod error;
pub mod hjb;
pub mod meanfield;
pub mod measure;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
