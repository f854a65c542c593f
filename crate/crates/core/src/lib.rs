//! One-bit spatial sigma-delta precoding for massive MIMO downlinks.
//!
//! The crate is organised bottom-up:
//!
//! * [`channel`]: array geometry, channel models, constellations and decisions.
//! * [`modulator`]: the spatial sigma-delta modulators (basic, dithered,
//!   angle-steered, generalized) mapping a peak-limited vector to `{±1±j}^N`.
//! * [`precoder`]: MRT, ZF, nullspace-assisted ZF and symbol-level precoders
//!   producing the modulator input.
//! * [`optim`]: accelerated projected gradient solvers behind SLP and the
//!   nullspace search.
//! * [`analysis`]: closed-form noise variances, effective SNRs and error bounds.
//! * [`sim`]: the Monte Carlo engine and its CSV artifacts.
//! * [`cli`]: the batch runner used by the `sdprecode` binary.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod channel;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod modulator;
pub mod optim;
pub mod precoder;
pub mod sim;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
