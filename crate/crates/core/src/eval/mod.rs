//! Metrics, statistical tests and the experimental protocols.

pub mod metrics;
pub mod protocols;
pub mod wilcoxon;

pub use metrics::{metrics, MetricsReport};
pub use protocols::*;
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};
