//! Coarse-to-fine, tool-augmented time-series anomaly detection.
//!
//! The crate is organised around one episode per window:
//!
//! 1. [`tools::localize_candidates`] proposes coarse candidate intervals,
//! 2. a Locator role writes an analysis plan,
//! 3. an Actor role turns the plan into a batch of [`tools::ToolCall`]s,
//! 4. a Detector role reads the tool evidence and emits [`protocol::AnomalyVerdict`]s,
//! 5. an Evaluator role may send the episode back to step 2, a bounded number of times.
//!
//! Roles are served by a [`protocol::ChatBackend`]: a remote chat-completions
//! service, a deterministic heuristic policy, or a record/replay fixture. Every
//! episode leaves an [`workflow::EpisodeTrace`] that can be replayed and scored
//! offline by [`reward`]. Point-level metrics live in [`eval`], and the
//! statistical reference detectors in [`baselines`].

pub mod baselines;
pub mod eval;
pub mod exec;
pub mod protocol;
pub mod reward;
pub mod series;
pub mod tools;
pub mod workflow;

mod numeric;

pub use series::{TimeSeries, Window};
