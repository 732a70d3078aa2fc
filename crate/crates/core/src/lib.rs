//! Reverse transliteration of romanized Malayalam, end to end: text handling,
//! a small autodiff engine, the attention Bi-LSTM model, sentence plumbing,
//! and evaluation metrics.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod tensor;
pub mod util;
pub mod vocab;

pub use error::{Error, Result};
