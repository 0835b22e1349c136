//! Regime-switching factor-copula credit portfolio simulator.
//!
//! The library is organised as a pipeline:
//!
//! 1. [`estimation`] — fit a two-regime normal mixture to common-factor
//!    returns by EM, and estimate per-obligor factor loadings
//!    (unconditional, plus regime-conditional via posterior weighting).
//! 2. [`stats`] — distribution primitives: tail-accurate normal CDF /
//!    quantile, the mixture posterior, reproducible substreamed draws.
//! 3. [`factor`] — the one-factor latent-variable model with
//!    regime-dependent loadings: conditional default probabilities,
//!    default times, and implied pairwise asset correlations.
//! 4. [`recovery`] — state-dependent recovery: loss-given-default as a
//!    function of the common factor, calibrated to preserve expected loss.
//! 5. [`engine`] — scenario generation and portfolio loss evaluation for
//!    the four model variants, with factor-contribution diagnostics.
//! 6. [`io`] — run configuration, CSV/JSON artifact formats, and the
//!    dataset loaders shared by the command-line pipeline.

// Rational-approximation coefficients and frozen reference values are kept
// at full printed precision even where a shorter literal parses to the same
// f64.
#![allow(clippy::excessive_precision)]

pub mod engine;
pub mod estimation;
pub mod factor;
pub mod io;
pub mod recovery;
pub mod stats;

pub use engine::{
    evaluate_models, generate_scenarios, relative_contribution, EngineConfig, EvaluationReport,
    ModelReport, ModelVariant, Obligor, Portfolio, RegimeWeight, Scenario, ScenarioSet,
};
pub use estimation::{
    fit_conditional_loadings, fit_mixture_em, EmOptions, LoadingSet, MixtureFit, ReturnSeries,
};
pub use factor::{LatentSpec, Regime};
pub use recovery::RecoverySpec;
pub use stats::{MixtureParams, NormalParams, RngStream};
