//! Instance-based active learning for monocular 3D detection.
//!
//! The crate ingests per-instance detector exports (predicted boxes, depths,
//! confidences and per-view feature vectors), ranks unlabeled instances with
//! diversity and uncertainty acquisition strategies, simulates labeling
//! campaigns against a ground-truth oracle, and scores the resulting learning
//! curves with a budget-normalized area metric (NAURC).
//!
//! Module map:
//! - [`model`]: domain types and the manifest / `ALF1` blob format
//! - [`geometry`]: IoU, labeling radius, oracle matching, duplicate suppression
//! - [`features`]: cosine and fused distances, PCA compression
//! - [`selection`]: Core-Set greedy selection and baseline strategies
//! - [`simulation`]: the campaign driver, training-side schedules, class mask
//! - [`metrics`]: NAURC and budget accounting
//! - [`cli`]: command-line entry points

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod features;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod selection;
pub mod simulation;

pub use error::{Error, Result};
