//! Federated-learning simulator for IoT intrusion detection.
//!
//! The crate covers the whole pipeline: flow ingestion ([`ingest`]),
//! entropy-characterized partitioning into parties ([`partition`]),
//! multinomial logistic regression ([`model`]), FedAvg and Fed+ aggregation
//! ([`aggregate`]), round orchestration ([`runtime`]), detection metrics
//! ([`metrics`]) and seeded synthetic workloads ([`synthetic`]).
//!
//! ```
//! use fedids::partition::{shannon_entropy, ClassHistogram};
//!
//! let h = ClassHistogram::new(vec![10, 10, 0]);
//! let e = shannon_entropy(&h, 3).unwrap();
//! assert!((e - 2f64.ln() / 3f64.ln()).abs() < 1e-12);
//! ```

pub mod aggregate;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod runtime;
pub mod seed;
pub mod synthetic;

pub use error::{Error, Result};
pub use ingest::{FlowRecord, FlowTable};
pub use model::ModelParams;
pub use partition::ScenarioPartition;

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Chapters of the guide under `book/`, compiled so their snippets run as
/// doc tests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/partitioning.md")]
    pub mod partitioning {}
    #[doc = include_str!("../../../book/src/classifier.md")]
    pub mod classifier {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    pub mod aggregation {}
    #[doc = include_str!("../../../book/src/runtime.md")]
    pub mod runtime {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
