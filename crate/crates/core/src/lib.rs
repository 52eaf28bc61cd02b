//! Multicollinearity auditing and attribution-fragility tooling.
//!
//! The crate is organised as a pipeline:
//!
//! - [`data`]: CSV ingestion, one-hot encoding, standardisation, splits and
//!   bootstrap index plans.
//! - [`audit`]: Pearson correlations, greedy correlation clusters, VIF and
//!   audit-driven pruning.
//! - [`models`]: closed-form OLS, logistic regression and a small tanh MLP
//!   trained with seeded mini-batch gradient descent.
//! - [`attribution`]: exact linear SHAP, first-order Taylor attributions,
//!   kernel SHAP and an exhaustive Shapley oracle.
//! - [`fragility`]: bootstrap attribution variance, fragility scores and
//!   Kendall's tau rank stability.
//! - [`caa`]: the collinearity-aware attribution filter.
//! - [`sharp`]: fragility-regularised training and the lambda ablation.
//! - [`theorem`]: synthetic-data checks of the VIF / attribution-variance link.
//! - [`pipeline`]: control vs pruned comparison used by the CLI.

pub mod attribution;
pub mod audit;
pub mod caa;
pub mod data;
pub mod error;
pub mod fragility;
pub mod linalg;
pub mod models;
pub(crate) mod network;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod sharp;
pub mod theorem;

pub use error::{Error, Result};

pub use attribution::{AttributionMatrix, AttributionMethod, KernelConfig, OutputScale};
pub use audit::{AuditConfig, AuditReport, CorrelationMatrix, VifStatus, VifTable};
pub use caa::{Aggregation, ClusterMapping, FilteredAttributionMatrix};
pub use data::{BootstrapPlan, DatasetSchema, FeatureMatrix, LabelVector};
pub use fragility::{FragilityReport, StabilityReport};
pub use models::{MetricSet, ModelKind, ModelParams, ModelSpec, TrainConfig};
pub use sharp::{AblationResult, SharpConfig};
pub use theorem::{SyntheticSpec, TheoremCheckReport};
