//! Interpretable style TSK fuzzy clustering.
//!
//! Samples are clustered by fuzzy inference on TSK rules: the IF-parts map
//! inputs into an antecedent feature space, each cluster owns a unit-norm
//! consequent vector defining a decision plane there, and a per-cluster style
//! matrix (regularized toward the identity) adapts the space to that
//! cluster's samples. Assignment minimizes the absolute plane residual, and
//! plane/style/assignment updates alternate until the assignment repeats.
//!
//! The crate also contains the supporting machinery a benchmark harness
//! needs: a CSV dataset loader, fuzzy c-means (antecedent estimation,
//! initialization, and baseline), clustering metrics with optimal label
//! matching, the Friedman/Bonferroni-Dunn comparison test, and a grid-search
//! experiment runner with CSV/JSON exports. See the `examples/` directory for
//! runnable entry points per capability.

pub mod antecedent;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod fcm;
pub mod metrics;
pub mod solver;

pub use antecedent::{AntecedentMatrix, AntecedentModel, Order};
pub use dataset::{Dataset, LabelColumn, Standardization};
pub use engine::{RunConfig, RunReport, Termination};
pub use error::{Error, Result};
pub use fcm::FcmResult;
pub use metrics::{EvalResult, FriedmanResult};
pub use solver::ClusterModel;
