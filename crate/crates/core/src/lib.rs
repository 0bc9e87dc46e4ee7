//! Synthetic smart-meter load profiles ("digital surrogates").
//!
//! The crate ingests 15-minute load data, types consumers by PCA + k-means++
//! on typical weeks, trains two generators (a bank of Gaussian HMMs and a
//! masked autoregressive Bernstein flow), builds a scaled standard-load-profile
//! baseline, and scores every surrogate set with a battery of fidelity metrics.

pub mod dataset;
pub mod daymatch;
pub mod encoding;
pub mod eval;
pub mod fsutil;
pub mod hmm;
pub mod mabf;
pub mod pipeline;
pub mod rng;
pub mod slp;
pub mod typing;

pub use dataset::{Category, LoadProfile, ScalingMode, ScalingParams, Season};
