//! Dual-encoder contrastive training and exact cross-modal retrieval.
//!
//! A speech tower and an image tower map paired inputs into one embedding
//! space. Training minimizes a bidirectional in-batch softmax loss whose
//! negatives are pooled across simulated data-parallel replicas; retrieval
//! is exact maximum-inner-product search scored with Recall@K.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod contrastive;
pub mod datapipe;
pub mod encoders;
pub mod error;
pub mod kv;
pub mod optim;
pub mod pipeline;
pub mod retrieval;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
