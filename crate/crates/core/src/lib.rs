//! Dual-stage ensemble pipeline for binary and multi-class image
//! classification over precomputed deep-feature sets.
//!
//! Stage one scores every feature extractor with nine classical classifiers
//! and keeps the best few from distinct architecture families. Stage two
//! concatenates the survivors' features, tunes the classifiers on the fused
//! representation, and combines the strongest ones by majority vote.

pub mod classifiers;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod hpo;
pub mod imgprep;
pub mod par;
pub mod transforms;

pub use error::{Error, Result};
