//! Heart-sound classification toolkit.
//!
//! The crate covers the whole pipeline at desk scale: waveform I/O and
//! subject-level splitting ([`signal_io`]), preprocessing and features
//! ([`dsp`]), offline and online augmentation ([`augment`]), diffusion-based
//! synthesis ([`diffusion`]), the concatenated-encoder classifier ([`model`]),
//! staged training ([`train`]) and evaluation ([`eval`]).

pub mod augment;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod model;
pub mod nn;
pub mod rng;
pub mod signal_io;
pub mod train;

pub use error::{Error, Flag, Flagged, Result};
