//! Grouped lifelong behavior modeling for click-through rate prediction.
//!
//! A user's lifelong behaviors are partitioned into interest groups keyed by
//! item or category. The Group Module summarizes every group with identity,
//! statistical and aggregated attributes and lets the candidate attend over
//! them; the Target Module refines the candidate's own group subsequence. Both
//! interests feed an MLP head.

pub mod attention;
pub mod config;
pub mod datamodel;
pub mod embedding;
pub mod error;
pub mod group_module;
pub mod model;
pub mod numerics;
pub mod serving;
pub mod store;
pub mod synthgen;
pub mod target_module;

pub use datamodel::{
    BehaviorEvent, BehaviorSequence, BehaviorType, CandidateItem, Context, Instance, KeyField, Timestamp, UserId,
};
pub use embedding::{Embedder, Schema, Vocab};
pub use error::{DginError, Result};
pub use model::{Dgin, MetricReport, ModelConfig, Prediction, Variant};
pub use numerics::{ParamSet, ValueGrid};
pub use store::{GroupedSequence, InterestGroup, StoreConfig, TwoLevelIndex};
