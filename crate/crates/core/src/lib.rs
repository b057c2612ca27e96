//! Wi-Fi CSI feedback laboratory.
//!
//! The crate implements the full station-to-access-point beamforming feedback
//! chain for a MIMO-OFDM link: extraction of Givens angle parameters from SVD
//! beamforming targets, the IEEE 802.11 uniform-quantization baseline, a
//! trainable vector-quantized neural codec, temporal angle-difference feedback
//! (naive, parallel two-stage VQ, and unified VQ variants), an AP-side CSI
//! refinement network, and NMSE/EVM/throughput evaluation. Everything runs on
//! the CPU in f64 with deterministic seeding; a synthetic temporally-correlated
//! channel generator substitutes for measurement datasets.

pub mod autodiff;
pub mod baseline;
pub mod channel;
pub mod config;
pub mod error;
pub mod eval;
pub mod givens;
pub mod model;
pub mod pipeline;
pub mod refine;
pub mod train;
pub mod vqcodec;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
