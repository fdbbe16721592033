//! Attention-mask module networks for visual question answering.
//!
//! Questions arrive as functional programs. Each program is compiled into a
//! network of small modules that exchange single-channel attention masks, so
//! every intermediate reasoning step can be inspected and scored.

pub mod autodiff;
pub mod error;
pub mod interp;
pub mod program;
pub mod scene;
pub mod trainer;
pub mod tensor;
pub mod vocab;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::Tensor;
