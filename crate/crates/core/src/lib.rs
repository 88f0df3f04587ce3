//! Martingale foresight sampling for step-wise LLM decoding.
//!
//! [`search::decode`] runs the beam search; [`baselines`] holds φ-decoding
//! and plain chain-of-thought over the same [`model::SequenceModel`] trait.
//! [`runner`] drives whole datasets and [`metrics`] turns the results into
//! FLOPs-accounted reports.

pub mod baselines;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod process;
pub mod runner;
pub mod search;
pub mod seed;

pub use baselines::{ar_cot_decode, phi_decode, PhiConfig};
pub use search::{decode, DecodeConfig, DecodeResult, Method};
