//! Mixed-bandwidth acoustic modeling.
//!
//! A single frame classifier handles both narrowband (8 kHz) and wideband
//! (16 kHz) speech. Two mechanisms let it absorb the bandwidth mismatch:
//!
//! - **Bandwidth embeddings**: a trainable vector per bandwidth, projected
//!   into the first dense layer as a per-bandwidth bias correction.
//! - **Parallel convolutions**: separate, unshared convolution stacks per
//!   bandwidth feeding shared dense layers.
//!
//! The crate covers the whole pipeline: WAV I/O and resampling ([`dsp`]),
//! log-mel features with context stacking ([`features`]), hand-written
//! differentiable kernels ([`nnops`]), the four model variants ([`model`]),
//! finite-difference gradient verification ([`gradcheck`]), SGD training
//! under the four data regimes ([`trainer`]), a synthetic two-bandwidth
//! corpus ([`synthcorpus`]) and scoring ([`eval`]).

pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
mod fsio;
pub mod gradcheck;
pub mod model;
pub mod nnops;
pub mod rng;
pub mod synthcorpus;
pub mod trainer;

pub use error::{Error, Result};
