//! Acoustic prompt tuning at desk scale.
//!
//! The pipeline turns raw synthetic audio into a short sequence of soft
//! prompt vectors that a small frozen causal language model can read:
//!
//! ```text
//! waveform -> log-mel -> patch encoder -> instruction-conditioned aligner
//!          -> 32 acoustic prompt vectors -> interleaved with text -> frozen LM
//! ```
//!
//! Everything trains from scratch on synthesized sound: the aligner is
//! pretrained with three alignment objectives (matching, grounded text
//! generation, contrastive), then tuned through a three-stage task
//! curriculum while the language model stays frozen. The crate also ships
//! the task renderers (captioning, QA, event detection, few-shot
//! classification, audio reasoning over clip pairs), the evaluation suite,
//! checkpoint and manifest IO, and an ablation bench, all behind the `apt`
//! binary.

pub mod ablation;
pub mod audio;
pub mod curriculum;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod objectives;
pub mod pipeline;
pub mod run;
pub mod sequence;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
