//! Hate speech and hate-target detection for text-embedded images.
//!
//! The pipeline extracts text with OCR, optionally augments the training
//! split by back-translation, trains or prompts several text classifiers,
//! fuses them by voting and reports macro/weighted F1 with confusion
//! matrices.

pub mod augment;
pub mod cache;
pub mod classify;
#[cfg(feature = "cloud")]
pub mod cloud;
pub mod config;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod evaluate;
pub mod ocr;
pub mod pipeline;
pub mod prediction;
pub mod prompt;
pub mod retry;
pub mod scheme;

pub use corpus::{Dataset, Instance, Origin, Split};
pub use error::{Error, Result};
pub use prediction::Prediction;
pub use scheme::{LabelScheme, TaskId};
