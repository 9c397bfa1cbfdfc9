//! Link-level OFDM simulator with pilot-aided channel estimation.
//!
//! The crate provides the transmit/receive chain, a WSSUS fading channel with
//! timing/frequency offsets and clipping, conventional interpolators (LS,
//! linear, MMSE and its variants), a complex extreme learning machine, and a
//! linear estimator whose weights are fitted online by least squares from
//! data collected inside each frame.

pub mod channel;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod numerics;
pub mod phy;
pub mod training;

pub use error::{Error, Result};
