//! Numerical core of vitbench: a small reverse-mode autodiff engine, a mini
//! Vision Transformer for binary classification, the training loop with
//! class-weighted loss, fold planning, augmentation, classification
//! statistics and Grad-CAM.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, image
//! decoding, configuration and the command line live in the `vitbench`
//! crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod exec;
pub mod interpret;
pub mod metrics;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
pub use tensor::Tensor;
