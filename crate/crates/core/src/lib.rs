//! Confounder-adjusted mediation analysis for the internal units of a model.
//!
//! Given query embeddings, per-unit activations, topic vectors and a binary
//! outcome for each query, the crate estimates the average indirect effect
//! (AIE) that each unit carries from the query to the outcome. Confounding
//! by topic is removed with stabilized propensity ratios obtained from
//! entropy balancing (or, alternatively, from a parametric Gaussian model).
//!
//! Module map:
//! - [`ingest`]: `MAT1` matrices, JSON manifests, reports
//! - [`preprocess`]: centering, PCA, k-means topics
//! - [`balancing`]: entropy-balancing dual solver
//! - [`propensity`]: stabilized weight ratios, parametric and nonparametric
//! - [`mediation`]: AIE estimators and localization metrics
//! - [`synthetic`]: confounded data generator with ground-truth oracles
//! - [`cli`]: the `mediaite` command-line front end

pub mod balancing;
pub mod cli;
pub mod error;
pub mod exec;
pub mod ingest;
pub mod mediation;
pub mod preprocess;
pub mod propensity;
pub mod synthetic;

pub use error::{Error, Result};
pub use exec::Execution;
