//! Gauntlet: multi-agent pipelines for architecture research automation.
//!
//! Four pipelines share one agent-call abstraction and one run store:
//!
//! - [`ideation`]: clean-room problem extraction, mechanism generation,
//!   dual-axis validation, and recursive frontier expansion
//! - [`panel`]: a six-reviewer comprehension panel with a synthesized
//!   "Master Class" reading guide
//! - [`modelforge`]: three-phase construction of executable first-principles
//!   performance models with verify-repair loops and ensemble selection
//! - [`funnel`]: the tiered candidate-evaluation hierarchy with full ledger
//!   accounting and structured failure feedback
//!
//! Backends are pluggable: live OpenAI-compatible HTTP, a deterministic
//! scripted mock, and transcript replay.

pub mod backend;
pub mod cli;
pub mod error;
pub mod funnel;
pub mod ideation;
pub mod kernel;
pub mod modelforge;
pub mod panel;
pub mod parse;
pub mod sandbox;
pub mod store;

pub use error::{Error, Result};
