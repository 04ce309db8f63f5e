//! Reference implementation of a small vision-language model that answers
//! change questions with both a textual answer and a grounding mask, plus
//! its training losses and gradient checks.
//!
//! Everything runs on a minimal f64 tensor engine ([`tensor`], [`ops`],
//! [`nn`]) with no external numeric dependencies.

pub mod checkpoint;
pub mod error;
pub mod losses;
pub mod model;
pub mod nn;
pub mod ops;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
