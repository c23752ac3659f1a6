//! Core algorithms for multi-color multi-user visible light communication with
//! layered encoding and constrained partial group decoding (CPGD).
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure function
//! of its inputs; file formats, configuration and the experiment driver live in
//! the `cpgd-sim` companion crate.
//!
//! Module map:
//!
//! - [`channel`]: scene geometry, Gaussian color spectra, filter gain matrix and
//!   Lambertian link gains.
//! - [`signaling`]: layer indexing and truncated-Gaussian layer inputs.
//! - [`rates`]: closed-form achievable rate of the VLC-MAC and the rate
//!   increment margin.
//! - [`cpgd`]: greedy max-min decoding order at one receiver position.
//! - [`decmap`]: decoding maps over the receiver plane, size reduction by
//!   clustering and array symmetry.
//! - [`assoc`]: transmitter-user association (genetic algorithm) and the
//!   iterative rate update.
//!
//! Rates are reported in bits per channel use. Entropies are computed in nats
//! internally.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod assoc;
pub mod channel;
pub mod cpgd;
pub mod decmap;
mod error;
pub mod math;
pub mod rates;
pub mod signaling;

pub use error::{Error, Result};
