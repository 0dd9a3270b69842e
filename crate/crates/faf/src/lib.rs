//! Few-shot time series forecasting with feature-adaptive routing.
//!
//! The model splits what it learns into a shared generalized-knowledge
//! MLP (meta-updated with averaged gradients, fast-adapted per test
//! task), a bank of task-specific functional regions, and a softmax
//! ranking router that picks the top-k regions per input. Training adds
//! a load-balance penalty on region usage.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod exec;
pub mod fewshot;
pub mod model;
pub mod numerics;
pub mod runner;
pub mod synth;
pub mod training;

pub use error::{FafError, Result};
