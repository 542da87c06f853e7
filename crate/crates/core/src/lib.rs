//! Hierarchical ICD-10 coding: a sentence tagger finds the sentences that
//! trigger a code, and a supervised-attention classifier assigns exactly
//! one code to each of them. The report's codeset is the union.

pub mod annotation;
pub mod baseline;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod numcore;
pub mod pipeline;
pub mod selftest;
pub mod synthetic;
pub mod tagger;
pub mod text;
pub mod training;

pub use error::{Error, Result};
