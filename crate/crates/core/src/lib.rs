//! Adaptable multi-tuning: several fine-tuned feature extractors run in
//! parallel, a small policy network produces per-sample softmax weights over
//! them, and the weighted latents are concatenated into a linear classifier.
//! Everything is trained end to end with SGD over per-module learning-rate
//! groups.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fsutil;
pub mod gradsuite;
pub mod harness;
pub mod nn;
pub mod optim;
pub mod rng;

pub use error::{AmfError, Result};
