//! Joint extraction of entity mentions, event triggers and argument roles.
//!
//! One bidirectional GRU encodes each sentence; three feed-forward heads
//! share that representation to tag entity mentions (BIO + Viterbi), classify
//! per-token event triggers, and assign argument roles to (trigger, mention)
//! pairs. Training optimizes a weighted joint negative log-likelihood with
//! Adadelta. See the `jointex` binary for the command-line surface.

pub mod corpus;
pub mod diag;
pub mod encoder;
pub mod entity;
pub mod error;
pub mod eval;
pub mod event;
pub mod features;
pub mod model;
pub mod schema;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
