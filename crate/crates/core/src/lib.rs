//! Layered multi-task federated learning.
//!
//! A dense network is split, input to output, into pre-trained (frozen),
//! common, task-specific and personal layer groups. Common layers are
//! aggregated over every sampled client, task-specific layers only within a
//! task group, and personal layers never leave their client.

pub mod data;
pub mod error;
pub mod federation;
pub mod nn;
pub mod partition;
pub mod runner;
pub mod seed;

pub use error::{Error, Result};
