//! Auditing model-specific preference bias in generative-model judges.
//!
//! Scores from a panel of judges are arranged into a generator-by-evaluator
//! matrix, standardised column-wise then row-wise, and the diagonal read off
//! as each model's self-preference score. An ensemble of judges fitted with
//! forward selection and an elastic net serves as a less biased evaluator.

pub mod collector;
pub mod error;
pub mod matrix;
pub mod model;
pub mod pomms;
pub mod rank;
pub mod report;
pub mod simulator;

pub use error::{Error, Result};
pub use model::{CaptionRecord, HumanJudgmentRecord, ModelId, RunManifest, ScoreRecord, Setting};
