//! Fixed-catalog tool-planning harness.
//!
//! Everything needed to measure structured tool-use planning around a model:
//! the plan DSL ([`plan`]), the static tool catalog ([`catalog`]), structural
//! metrics ([`metrics`]), prompt construction ([`prompts`]), SFT dataset
//! construction with a leak-free split ([`dataset`]), a mock MCP executor
//! ([`executor`]), and chat-endpoint judging harnesses ([`llm`]).
//!
//! The harness consumes model outputs as text files and emits training data;
//! it never runs a neural network itself.

pub mod catalog;
pub mod dataset;
pub mod executor;
pub mod llm;
pub mod metrics;
pub mod plan;
pub mod prompts;
