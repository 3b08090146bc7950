//! Agent-centric augmentation of driving scene corpora.

pub mod config;
pub mod eligibility;
pub mod error;
pub mod geometry;
pub mod interaction;
pub mod io;
pub mod kinematics;
pub mod par;
pub mod pipeline;
pub mod sampler;
pub mod scenario;
pub mod stats;
pub mod synth;
pub mod transform;

pub use error::{Error, ErrorCategory, Result};
