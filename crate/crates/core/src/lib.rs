//! Piano transcription by nonnegative factorization of magnitude spectrograms.
//!
//! The crate is organized bottom-up:
//!
//! * [`signal`]: WAV ingestion, STFT magnitude spectrograms, synthetic notes.
//! * [`tensor_ops`]: third-order tensor unfolding, Kronecker and Khatri-Rao products.
//! * [`nnfac`]: NNDSVD, (accelerated) HALS, multiplicative updates, sparsity.
//! * [`dictionary`]: rank-one note templates and codebooks.
//! * [`multichannel`]: simultaneous NMF, NTF and flexible PARAFAC2.
//! * [`pitch`]: frequency/MIDI conversion and autocorrelation f0 estimation.
//! * [`notes`]: threshold-based note detection and Standard MIDI File output.
//! * [`evalx`]: onset-tolerant scoring, ground-truth readers, inter-channel ratios.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod csv;
pub mod dictionary;
mod error;
pub mod evalx;
mod linalg;
pub mod multichannel;
pub mod nnfac;
pub mod notes;
pub mod pitch;
pub mod signal;
pub mod tensor_ops;

pub use error::{Error, Result};
