//! Joint community detection and edge-anomaly detection for networks.
//!
//! Regular edges follow a mixed-membership Poisson model with an assortative
//! (diagonal) affinity; anomalous edges follow a single global Poisson rate.
//! Every unordered pair carries a latent anomaly indicator, and an EM
//! procedure infers memberships together with the posterior probability that
//! each pair is anomalous.
//!
//! Modules:
//! - [`graph`]: network container, edge-list I/O and the mutations used by the
//!   experiment pipelines.
//! - [`model`]: parameters and the Poisson likelihood kernel.
//! - [`em`]: E/M steps, the log-posterior, restarts, the plain community
//!   detection baseline and anomaly classification.
//! - [`sampler`]: planted-partition generator with anomaly-ratio calibration.
//! - [`metrics`]: confusion scores, matched cosine similarity, ranking AUC.
//! - [`pipelines`]: injection, removal, addition, cross-validation and
//!   synthetic sweeps.

pub mod em;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod par;
pub mod pipelines;
pub mod sampler;

pub use error::{AcdError, Result};
pub use par::Execution;
