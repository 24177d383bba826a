//! Link-level simulation of federated edge learning with FSK-based majority
//! vote (FSK-MV).
//!
//! Edge devices (EDs) encode the signs of their local stochastic gradients on
//! pairs of OFDM subcarriers. The transmissions superpose over independent
//! frequency-selective fading channels, and the edge server (ES) decides the
//! majority vote per coordinate by comparing the accumulated energy on the
//! two subcarriers of each pair. No channel state information is needed at
//! either end.
//!
//! Module map:
//!
//! * [`geometry`]: cell layout, fractional power control and the `λ` factor.
//! * [`waveform`]: CP-OFDM modulation, offset-tolerant demodulation, PMEPR.
//! * [`channel`]: tapped-delay-line Rayleigh fading, timing offsets and the
//!   superposition at the ES.
//! * [`oac`]: FSK-MV encoder/detector, the OBDA baseline and the ideal vote.
//! * [`learning`]: signSGD-MV training loop, partitions and reference models.
//! * [`analysis`]: closed-form detector statistics and the convergence bound.
//! * [`cli`]: experiment configuration and the experiment commands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod channel;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod learning;
pub mod oac;
pub mod rng;
pub mod waveform;

pub use error::{Error, Result};
