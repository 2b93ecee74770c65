//! Data-readiness assessment for federated clients: metrics, threshold
//! rules and remedies bound into modules, a local readiness loop, report
//! generation with a privacy-preserving combined PCA view, and a small
//! client/server protocol that collects the reports.

pub mod args;
pub mod config;
pub mod error;
pub mod federation;
pub mod io;
pub mod metrics;
pub mod pollution;
pub mod readiness;
pub mod remedies;
pub mod report;
pub mod rules;
pub mod seed;
pub mod stats;
pub mod table;

pub use error::{Error, Result};
pub use metrics::{MetricKind, MetricSpec, MetricValue};
pub use remedies::{RemedyKind, RemedyResult, RemedySpec};
pub use rules::{parse_rule, Comparator, Rule, RuleVerdict};
pub use table::{column_stats, Column, ColumnKind, DataTable, DatasetMeta, Precision};
