//! Exact sampling of a target bounded away from 0 and 1 by `a^k`, through the
//! series `f = sum_n 2^-n f_n` of successively refined approximations.
//!
//! Certification is restricted to step targets. For those the nominal
//! residual `r_n = 2 r_(n-1) - f_n` stays at the piece constant, and the grid
//! audit bounds how far the realized residual can drift from it, given that
//! every `f_n` comes from pinpointing at a single high accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{FactoryError, Result};
use crate::interval::cover::{build_cover, probe_points, CoverSpec, PiecewiseTarget};
use crate::interval::domain::DomainSpec;
use crate::interval::pinpoint::{pinpoint_interval, PinpointPlan};
use crate::numeric::unit_grid;
use crate::quoin::CoinSource;

/// Worst margins of the residual bounds at one depth over the audit grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualCheck {
    pub depth: u32,
    /// `min (r_n - a^(k+n))` with `r_n` at the low end of its band.
    pub lower_margin: f64,
    /// `min (1 - a^(k+n) - r_n)` with `r_n` at the high end of its band.
    pub upper_margin: f64,
    /// Whether `f_(n+1)` is within `a^(k+n+1)` of the residual everywhere.
    pub next_accurate: bool,
}

impl ResidualCheck {
    pub fn holds(&self) -> bool {
        self.lower_margin > 0.0 && self.upper_margin > 0.0 && self.next_accurate
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicPlan {
    pub target: PiecewiseTarget,
    pub depth_budget: u32,
    pub pinpoint: PinpointPlan,
    pub residuals: Vec<ResidualCheck>,
}

impl DyadicPlan {
    /// Audits the residual bounds for depths `0..=depth_budget` and prepares
    /// the pinpointing plan.
    pub fn certify(target: &PiecewiseTarget, spec: &DomainSpec, depth_budget: u32) -> Result<Self> {
        spec.validate()?;
        target.check_against(spec)?;
        if depth_budget == 0 {
            return Err(FactoryError::Config(
                "depth budget must be at least 1".into(),
            ));
        }
        for (i, pc) in target.pieces.iter().enumerate() {
            let f = crate::spb::TargetFn::parse(&pc.f)?;
            let probe = probe_points(pc.lo, pc.hi);
            let c = f.eval(probe[0])?;
            if pc.lipschitz != 0.0 || probe.iter().any(|&p| f.eval(p).map_or(true, |v| v != c)) {
                return Err(FactoryError::Certification(format!(
                    "piece {i} on ({}, {}) is not constant; residual bounds are only certified for step targets",
                    pc.lo, pc.hi
                )));
            }
        }
        let cover = build_cover(target, spec, spec.k, 1 << 16)?;
        let values: Vec<f64> = cover.intervals.iter().map(|w| w.value).collect();
        let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().cloned().fold(f64::INFINITY, f64::min);

        let a_sup = unit_grid(4097)
            .into_iter()
            .map(|p| spec.a_poly(p))
            .fold(0.0, f64::max);
        let per_depth = (depth_budget + 1) as f64 * std::f64::consts::LN_2 / -a_sup.ln();
        let accuracy = spec.k + depth_budget + 3 + per_depth.floor() as u32;

        let residuals = audit(&cover, spec, depth_budget, accuracy, spread);
        if let Some(bad) = residuals.iter().find(|r| !r.holds()) {
            return Err(FactoryError::Certification(format!(
                "residual bound fails at depth {}: lower margin {:e}, upper margin {:e}, next step accurate: {}",
                bad.depth, bad.lower_margin, bad.upper_margin, bad.next_accurate
            )));
        }
        let pinpoint = PinpointPlan::new(spec, &cover, accuracy)?;
        Ok(DyadicPlan {
            target: target.clone(),
            depth_budget,
            pinpoint,
            residuals,
        })
    }

    pub fn accuracy(&self) -> u32 {
        self.pinpoint.accuracy
    }
}

/// Grid audit of the residual band. With `e = a^K * spread` bounding the
/// error of a single approximation, `|r_n - c| <= (2^n - 1) e`.
fn audit(
    cover: &CoverSpec,
    spec: &DomainSpec,
    depth_budget: u32,
    accuracy: u32,
    spread: f64,
) -> Vec<ResidualCheck> {
    let k = spec.k as f64;
    let big_k = accuracy as f64;
    let ln2 = std::f64::consts::LN_2;
    (0..=depth_budget)
        .map(|n| {
            let mut lower_margin = f64::INFINITY;
            let mut upper_margin = f64::INFINITY;
            let mut next_accurate = true;
            for w in &cover.intervals {
                let mut probe: Vec<f64> = unit_grid(1001)
                    .into_iter()
                    .map(|u| w.lo + (w.hi - w.lo) * u)
                    .collect();
                probe.retain(|&p| p > w.lo && p < w.hi);
                probe.extend(probe_points(w.lo, w.hi));
                for p in probe {
                    let la = spec.ln_a_poly(p);
                    let band = if n == 0 || spread == 0.0 {
                        0.0
                    } else {
                        ((2f64.powi(n as i32) - 1.0).ln() + big_k * la + spread.ln()).exp()
                    };
                    let edge = ((k + n as f64) * la).exp();
                    lower_margin = lower_margin.min(w.value - band - edge);
                    upper_margin = upper_margin.min(1.0 - edge - (w.value + band));
                    if n < depth_budget && spread > 0.0 {
                        // a^K spread + band = 2^n a^K spread < a^(k+n+1), in logs
                        let lhs = big_k * la + spread.ln() + n as f64 * ln2;
                        if lhs >= (k + n as f64 + 1.0) * la {
                            next_accurate = false;
                        }
                    }
                }
            }
            ResidualCheck {
                depth: n,
                lower_margin,
                upper_margin,
                next_accurate,
            }
        })
        .collect()
}

/// A bit whose bias is within `a^(accuracy - 1)(p)` of the target: pinpoint
/// the interval, then emit its constant.
pub fn approx_event_with(plan: &PinpointPlan, coins: &mut CoinSource) -> Result<bool> {
    let out = pinpoint_interval(plan, coins)?;
    let q = plan.cover.intervals[out.index].value;
    coins.known(q)
}

/// Builds the pinpointing plan for `cover` at accuracy `l + 1` and draws one
/// approximation bit.
pub fn approx_event(
    cover: &CoverSpec,
    l: u32,
    spec: &DomainSpec,
    coins: &mut CoinSource,
) -> Result<bool> {
    if cover.accuracy != l + 1 {
        return Err(FactoryError::Config(format!(
            "cover built for accuracy {} but approximation requested at {}",
            cover.accuracy,
            l + 1
        )));
    }
    let plan = PinpointPlan::new(spec, cover, l + 1)?;
    approx_event_with(&plan, coins)
}

/// Draws the depth `n` with probability `2^-n` and runs the depth-`n` approximation.
pub fn dyadic_sample_traced(plan: &DyadicPlan, coins: &mut CoinSource) -> Result<(bool, u32)> {
    let mut depth = 1;
    while !coins.fair_bit()? {
        depth += 1;
        if depth > plan.depth_budget {
            return Err(FactoryError::DepthExhausted {
                depth,
                limit: plan.depth_budget,
            });
        }
    }
    Ok((approx_event_with(&plan.pinpoint, coins)?, depth))
}

pub fn dyadic_sample(plan: &DyadicPlan, coins: &mut CoinSource) -> Result<bool> {
    dyadic_sample_traced(plan, coins).map(|(bit, _)| bit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::cover::Piece;

    #[test]
    fn step_target_certifies() {
        let spec = DomainSpec::new(vec![0.5], vec![0.5], 1).unwrap();
        let t = PiecewiseTarget::step(&spec, &[0.2, 0.8]).unwrap();
        let plan = DyadicPlan::certify(&t, &spec, 32).unwrap();
        assert!(plan.residuals.iter().all(|r| r.holds()));
        assert!(plan.accuracy() > 32);
    }

    #[test]
    fn varying_piece_rejected() {
        let spec = DomainSpec::new(vec![], vec![], 1).unwrap();
        let t = PiecewiseTarget {
            pieces: vec![Piece {
                lo: 0.0,
                hi: 1.0,
                f: "0.25 + p/2".into(),
                lipschitz: 0.5,
            }],
        };
        let err = DyadicPlan::certify(&t, &spec, 8).unwrap_err();
        assert!(matches!(err, FactoryError::Certification(_)));
    }

    #[test]
    fn constant_too_close_to_zero_rejected() {
        // a(p) = p(1 - p) exceeds 0.01 in the middle of the interval
        let spec = DomainSpec::new(vec![], vec![], 1).unwrap();
        let t = PiecewiseTarget::step(&spec, &[0.01]).unwrap();
        assert!(DyadicPlan::certify(&t, &spec, 8).is_err());
    }
}
