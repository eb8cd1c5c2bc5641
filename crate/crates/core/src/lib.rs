//! Intent-based inoculation for zero-shot disinformation detection.
//!
//! A text is first analysed for malicious intent against a fixed taxonomy;
//! the analysis, together with a warning about hidden intent, is then
//! injected into the detection prompt. The crate also carries the baselines
//! and the evaluation harness used to compare the two.

pub mod classic;
pub mod corpus;
pub mod gateway;
pub mod metrics;
mod digest;
pub mod promptkit;
pub mod report;
pub mod stats;
pub mod outparse;
pub mod pipeline;
pub mod taxonomy;
