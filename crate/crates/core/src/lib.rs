//! Permutation invariant and soft-minimum permutation training for
//! single-channel two-talker source separation.
//!
//! The crate is organised bottom-up: [`dsp`] (STFT and WAV IO), [`mixgen`]
//! (mixture datasets), [`permutation`] (assignments and error tables),
//! [`losses`] (hard and soft minimum objectives), [`separator`] (the LSTM mask
//! network with manual backpropagation), [`trainer`], [`bsseval`] and
//! [`experiment`], which ties them into reproducible runs.

pub mod bsseval;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod mixgen;
pub mod permutation;
pub mod separator;
pub mod trainer;

pub use error::{Error, Result};
