//! Concept rule learner.
//!
//! A classifier that predicts binary concepts, feeds them through trainable
//! Boolean logical layers, and classifies with a linear head over the
//! resulting rule activations. Training uses a continuous relaxation of the
//! logical layers; the trained network can be read back as Boolean rules.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod logic;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod predictor;
pub mod rules;
pub mod train;

pub use error::{CrlError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/logic.md")]
    mod logic {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/rules.md")]
    mod rules {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
