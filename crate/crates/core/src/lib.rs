//! Moral-dilemma uncertainty harness.
//!
//! Generates binary dilemma corpora, scores them against a model backend
//! (an HTTP logprob endpoint or a small seeded transformer with
//! inference-time attention dropout), decomposes decision uncertainty
//! into total entropy, conditional entropy and mutual information, and
//! scores human/model alignment through AMCE regression.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod analysis;
pub mod backend;
pub mod error;
pub mod exec;
pub mod manifest;
pub mod prompt;
pub mod report;
pub mod scenario;
pub mod seed;
pub mod toymodel;
pub mod uncertainty;

pub use error::{Error, Result};
