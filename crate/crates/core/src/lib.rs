//! Fuzzy cognitive re-scoring and repair of per-frame action-detection streams.
//!
//! Each detected frame is scored for plausibility from its confidence, the
//! correlation between its action and the preceding one, and its position
//! inside its action run ([`fcm`]). Frames scoring below a threshold are
//! re-detected from the plausible frames around them and relabeled when the
//! re-detection is convincingly better ([`fcs`]).

pub mod error;
pub mod eval;
pub mod fcm;
pub mod fcs;
pub mod features;
pub mod fuzzy;
pub mod io;
pub mod pipeline;
pub mod rules;
pub mod synth;

pub use error::{Error, Result};
pub use fcm::{CognitionRecord, Fcm, FcmConfig, Level};
pub use fcs::{FcsConfig, UpdateOutcome};
pub use features::{CooccurrenceModel, FrameRecord};
pub use fuzzy::{Engine, Rule, RuleBase, Term};
pub use pipeline::{Pipeline, PipelineConfig, PipelineOutput};
