//! A unified per-pixel aggregation operator ("evolution") driven by a
//! rank-6 kernel, with generators that express convolution, local
//! self-attention (single and multi-head, with positional encodings),
//! involution and a few derived variants as instances of it.
//!
//! [`classic`] holds the direct operator definitions, [`kernel`] the unified
//! operator and its generators, and [`equivalence`] the harness that checks
//! one against the other.

#![forbid(unsafe_code)]

pub mod classic;
pub mod cli;
pub mod equivalence;
mod error;
pub mod io;
pub mod kernel;
pub mod tensor;

pub use error::{Error, Result};
pub use kernel::{ev_apply, EvolutionFunction, EvolutionKernel, Family};
pub use tensor::{prng_fill, Rng, Tensor};
