//! UAV flight-state classification from RF baseband signals.
//!
//! The crate covers the whole pipeline: labelled signal synthesis with
//! state-conditional Doppler kinematics ([`signal`]), raw-IQ ingestion
//! ([`ingest`]), spectral preprocessing into multiple-instance bags
//! ([`preprocess`]), a Transformer-MIL generator and channel-attention CNN
//! discriminator ([`models`]) trained as an auxiliary-classifier cGAN
//! ([`training`]), and evaluation, ablation and complexity accounting
//! ([`eval`]). Everything runs on the small autodiff engine in [`tensor`].

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod models;
pub mod par;
pub mod preprocess;
pub mod rng;
pub mod signal;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
