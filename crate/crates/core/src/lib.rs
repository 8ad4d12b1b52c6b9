//! Zero-shot recognition by generating pseudo feature representations.
//!
//! The pipeline learns one feature extractor per attribute on seen classes
//! ([`jafe`]), keeps confidently predicted attribute vectors in a
//! [`repository`], assembles synthetic representations for unseen classes
//! from their attribute descriptions ([`synthesis`]) and trains a softmax
//! class predictor on them ([`predictor`]).

pub mod error;
pub mod nn;

pub use error::{Error, Result};
pub mod dataset;
pub mod jafe;
pub mod repository;
pub mod synthesis;
pub mod predictor;
pub mod cmnist;
pub mod dataio;
pub mod eval;

pub use dataset::{Dataset, Sample};
