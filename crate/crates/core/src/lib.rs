//! Classification of functional movement primitives from windows of
//! wearable-sensor time series.
//!
//! The crate covers the whole pipeline: recording ingestion and windowing
//! ([`data`]), statistical features ([`features`]) for the random-forest
//! ([`forest`]) and fully-connected baselines, a small layer engine with
//! hand-written backward passes ([`nn`]), the LSTM and CNN model families
//! ([`arch`]), training ([`train`]), metrics and analyses ([`eval`]) and a
//! synthetic data generator with known ground truth ([`synth`]).

pub mod arch;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod forest;
pub mod nn;
pub mod par;
pub mod primitive;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use primitive::{Primitive, StepLabel, N_PRIMITIVES};
