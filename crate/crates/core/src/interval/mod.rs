//! Sampling targets that are only defined away from finitely many excluded
//! points: pinpoint the bias to a cover interval with error below `a^k(p)`,
//! approximate the target by interval constants, and assemble an exact sampler
//! from the dyadic series `f = sum_n 2^-n f_n`.

pub mod cover;
pub mod domain;
pub mod dyadic;
pub mod pinpoint;

pub use cover::{build_cover, CoverInterval, CoverSpec, Piece, PiecewiseTarget};
pub use domain::DomainSpec;
pub use dyadic::{
    approx_event, approx_event_with, dyadic_sample, dyadic_sample_traced, DyadicPlan, ResidualCheck,
};
pub use pinpoint::{pinpoint_interval, PinpointOutcome, PinpointPlan};
