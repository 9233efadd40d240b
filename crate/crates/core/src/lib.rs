//! Core library for offline robot detection in web access logs.
//!
//! The pipeline stages live in their own modules: [`log_ingest`] parses
//! combined-format logs, [`sessionize`] groups requests into sessions,
//! [`simple_features`] and [`semantic_features`] compute per-session
//! descriptors (the latter on top of a [`topic_model`]), [`labeling`]
//! assigns ground truth, and [`model`] trains and evaluates the
//! gradient-boosted classifier over [`dataset`] feature tables.

pub mod assets;
pub mod dataset;
pub mod labeling;
pub mod log_ingest;
pub mod model;
pub mod semantic_features;
pub mod sessionize;
pub mod simple_features;
pub mod synth;
pub mod topic_model;

pub use dataset::{FeatureRow, FeatureSet, LabeledDataset, FEATURE_NAMES};
pub use labeling::{LabelStage, SessionLabel, UAClass, Verdict};
pub use log_ingest::{LogDialect, LogEntry, ResourceClass, ResourceKind, ResourceRuleSet};
pub use model::{GBDTModel, GbdtParams, Metrics};
pub use semantic_features::SemanticFeatures;
pub use sessionize::{Session, UserKey};
pub use simple_features::SimpleFeatures;
pub use topic_model::{SparseTopicVector, TopicModel};
