//! Black-box variational inference for finite Gaussian mixtures, driven by
//! score-function gradient estimates with optional variance reduction.
//!
//! The model: `K` component means with independent `N(0, tau2 * I)` priors,
//! uniform component assignments, and isotropic `N(mu_z, sigma2 * I)`
//! observation noise. The approximating family is fully factorized: one
//! independent normal (mean and log-scale) per component coordinate and one
//! independent categorical (logits) per observation. Fitting maximizes the
//! ELBO by stochastic ascent; no derivatives of the model are required —
//! every gradient comes from the score-function identity, so the same
//! machinery would apply to any model that exposes a log-joint.
//!
//! Module map:
//!
//! * [`dists`] — normal and categorical building blocks: log-densities,
//!   scores with respect to the variational parameters, and sampling.
//! * [`model`] — the mixture model, the factorized approximation, latent
//!   draws, and Markov-blanket log-density differences.
//! * [`estimators`] — the four gradient estimators (plain, James-Stein
//!   shrinkage, Rao-Blackwellized, and both combined).
//! * [`optimizer`] — RMSProp/AdaGrad ascent with a relative-change stopping
//!   rule and divergence detection.
//! * [`metrics`] — ELBO, predictive log-likelihood, DIC, and the
//!   serializable fit report.
//! * [`experiments`] — the paired-bootstrap variance study and the
//!   benchmark harness, plus CSV dataset loading.
//!
//! Reproducibility: every randomized operation takes either an explicit
//! generator or a seed, generators are counter-based (`ChaCha8`), and
//! multi-stage experiments split one root seed into per-stage sub-seeds. Two
//! runs with the same inputs and seeds produce byte-identical results, wall
//! clock aside.

pub mod dists;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod optimizer;

pub use error::{Error, Result};
pub use estimators::{EstimatorKind, GradientEstimate, GradientSample};
pub use experiments::{
    BenchmarkDataset, BenchmarkRow, BenchmarkRunConfig, VarianceStudyConfig, VarianceStudyRow,
};
pub use metrics::{FitReport, TraceRow};
pub use model::{Dataset, GmmSpec, LatentDraw, Provenance, VariationalParams};
pub use optimizer::{FitRun, OptimizerConfig, Schedule};
