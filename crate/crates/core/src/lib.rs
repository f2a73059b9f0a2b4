//! Temporal action localization from single-frame supervision.
//!
//! A classification head scores every frame against `Nc` action classes plus
//! background; an actionness head scores how likely each frame lies inside any
//! action. Training sees one annotated frame per action instance, grows each
//! annotation into neighbouring frames, mines confident background frames
//! across the batch, and combines frame, video and actionness losses.
//! Inference thresholds the per-frame sum of class probability and actionness.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod inference;
pub mod mining;
pub mod model;
pub mod numeric;
pub mod objectives;
pub mod train;

pub use error::{Error, Result};
