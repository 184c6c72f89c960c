//! Deterministic simulation of classical and quantum Bernoulli factories.
//!
//! A factory turns flips of a coin with unknown bias `p` into a flip with
//! bias `f(p)`. The quantum variant may also consume quoins, the coherent
//! state `sqrt(p)|0> + sqrt(1-p)|1>`, measured in rotated bases or in pairs.
//!
//! * [`rng`]: seedable random streams, budgets and flip ledgers.
//! * [`quoin`]: the coin and quoin source for a hidden bias.
//! * [`protocol`]: composable protocol trees and the reference constructions.
//! * [`spb`]: compiler for targets with finitely many polynomially approached zeros and ones.
//! * [`interval`]: pinpointing and dyadic sampling for targets defined away from excluded points.
//! * [`verify`]: exact enumeration, closed forms and statistical checks.

// `!(x > 0.0)` style tests are used on purpose so that NaN takes the failing branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod interval;
pub mod numeric;
pub mod protocol;
pub mod quoin;
pub mod rng;
pub mod spb;
pub mod verify;

pub use error::{FactoryError, Result};
pub use protocol::{Protocol, Source};
pub use quoin::{BellOutcome, CoinSource, HiddenBias};
pub use rng::{BitSource, FlipLedger, RandomStream};
