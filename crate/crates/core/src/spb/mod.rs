//! Compiler from certified targets to exact samplers built from quoins.
//!
//! A target `f` is sandwiched between a lower and an upper bounding function
//! `L <= f <= U` with `U - L < 1/2`. Both come from Bernstein sums multiplied
//! by Heaviside-type factors `T_{m,M,z}` that vanish at the certified zeros and
//! ones. A coupled draw of the two events gives a coin of bias
//! `g = L / (1 - U + L)`, and `f = sum_k (3/4)^(k-1) (1/4) g_k` along the chain
//! `f_{k+1} = (4/3)(f_k - g_k / 4)`.

pub mod bounds;
pub mod certificate;
pub mod chain;
pub mod search;

pub use bounds::{
    eval_l, eval_u, g_coin, sample_coupled, BoundingLevel, BoundingParams, CouplingTally, Heaviside,
};
pub use certificate::{verify_spb, CriticalPoint, SpbCertificate, SpbReport, TargetFn};
pub use chain::{spb_sample, ChainLevel, SpbChain};
pub use search::{search_bounding_params, SearchConfig, SearchReport};

/// Points of the grid on which chain levels are represented: spacing 1/4096,
/// so every Bernstein node `j/n` with `n` a power of two up to 4096 is a grid point.
pub const FINE_POINTS: usize = 4097;
