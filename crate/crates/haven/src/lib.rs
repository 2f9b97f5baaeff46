//! HAVEN-style hallucination evaluation for video language models, plus a
//! desk-scale preference/fine-tuning lab.
//!
//! The crate has two halves:
//!
//! * **Evaluation harness** — load a question corpus ([`dataset`]), query
//!   any OpenAI-compatible vision endpoint with uniformly sampled frames
//!   ([`model_client`]), grade replies with an LLM judge ([`judge`]),
//!   aggregate accuracy/consistency metrics ([`metrics`]) and render CSV +
//!   Markdown reports ([`report`]). Everything is disk-cached and
//!   deterministic: reruns replay byte-identically without network calls.
//! * **Training lab** — a tiny analytic autoregressive policy used to
//!   study a segment-weighted direct-preference objective ([`tdpo`]) and
//!   low-rank supervised fine-tuning on static-frame samples ([`srft`]),
//!   with gradients verified against finite differences in the test suite.
//!
//! The `examples/` directory holds one runnable walkthrough per
//! capability; the `haven` binary exposes the same flows as subcommands.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod judge;
pub mod metrics;
pub mod mock;
pub mod model_client;
pub mod report;
pub mod srft;
pub mod tdpo;

pub use error::{Error, Result};
