//! Piecewise targets and covers of their domain by open intervals carrying
//! constants that approximate the target to within `a^(l+1)`.

use serde::{Deserialize, Serialize};

use crate::error::{FactoryError, Result};
use crate::interval::domain::DomainSpec;
use crate::spb::TargetFn;

/// The target on one open piece `(lo, hi)` between exclusions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    /// Expression in `p`.
    pub f: String,
    pub lipschitz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseTarget {
    pub pieces: Vec<Piece>,
}

impl PiecewiseTarget {
    /// `value` on each piece of the domain.
    pub fn step(spec: &DomainSpec, values: &[f64]) -> Result<Self> {
        let pieces = spec.pieces();
        if pieces.len() != values.len() {
            return Err(FactoryError::Config(format!(
                "{} pieces but {} values",
                pieces.len(),
                values.len()
            )));
        }
        Ok(PiecewiseTarget {
            pieces: pieces
                .into_iter()
                .zip(values)
                .map(|((lo, hi), v)| Piece {
                    lo,
                    hi,
                    f: format!("{v:?}"),
                    lipschitz: 0.0,
                })
                .collect(),
        })
    }

    fn compiled(&self) -> Result<Vec<(Piece, TargetFn)>> {
        self.pieces
            .iter()
            .map(|pc| Ok((pc.clone(), TargetFn::parse(&pc.f)?)))
            .collect()
    }

    /// The target at `p`, or `None` at excluded points.
    pub fn eval(&self, p: f64) -> Result<Option<f64>> {
        for pc in &self.pieces {
            if pc.lo < p && p < pc.hi {
                return TargetFn::parse(&pc.f)?.eval(p).map(Some);
            }
        }
        Ok(None)
    }

    /// Checks that the pieces are exactly the domain's pieces.
    pub fn check_against(&self, spec: &DomainSpec) -> Result<()> {
        let want = spec.pieces();
        let ok = want.len() == self.pieces.len()
            && want
                .iter()
                .zip(&self.pieces)
                .all(|((lo, hi), pc)| *lo == pc.lo && *hi == pc.hi && pc.lipschitz >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(FactoryError::Config(
                "target pieces must match the gaps between exclusions".into(),
            ))
        }
    }
}

/// One open interval `W = (lo, hi)` with its constant and the closed cell
/// `[core_lo, core_hi]` inside it that the cover's cells tile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverInterval {
    pub lo: f64,
    pub hi: f64,
    pub core_lo: f64,
    pub core_hi: f64,
    pub value: f64,
}

impl CoverInterval {
    pub fn contains(&self, p: f64) -> bool {
        self.lo < p && p < self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverSpec {
    /// The cover guarantees `|f - q_i| < a^accuracy` on each interval.
    pub accuracy: u32,
    pub intervals: Vec<CoverInterval>,
    /// Parts of the domain left uncovered when subdivision hit its budget.
    pub uncovered: Vec<(f64, f64)>,
}

/// Points used to check a property over an open interval: a uniform grid plus
/// points approaching each end geometrically.
pub(crate) fn probe_points(lo: f64, hi: f64) -> Vec<f64> {
    let w = hi - lo;
    let mut pts: Vec<f64> = (1..64).map(|i| lo + w * i as f64 / 64.0).collect();
    for j in 7..48 {
        let d = w * (-(j as f64)).exp2();
        pts.push(lo + d);
        pts.push(hi - d);
    }
    pts
}

/// Splits each piece until every cell's open neighbourhood carries a constant
/// within `a^(l+1)` of the target, using the piece's Lipschitz bound.
///
/// Cells whose neighbourhood touches an exclusion never qualify when the
/// target varies, so subdivision near exclusions stops at `min_width` or
/// after `max_intervals` cells, and those cells are reported as uncovered.
pub fn build_cover(
    target: &PiecewiseTarget,
    spec: &DomainSpec,
    l: u32,
    max_intervals: usize,
) -> Result<CoverSpec> {
    spec.validate()?;
    target.check_against(spec)?;
    let accuracy = l + 1;
    let min_width = 2f64.powi(-30);
    let mut intervals = Vec::new();
    let mut uncovered = Vec::new();
    for (pc, f) in target.compiled()? {
        let mut stack = vec![(pc.lo, pc.hi)];
        while let Some((c0, c1)) = stack.pop() {
            let w = c1 - c0;
            let (lo, hi) = ((c0 - w / 8.0).max(pc.lo), (c1 + w / 8.0).min(pc.hi));
            let mid = 0.5 * (c0 + c1);
            let q = f.eval(mid)?;
            if !(0.0..=1.0).contains(&q) {
                return Err(FactoryError::Config(format!(
                    "target value {q} at {mid} is not a probability"
                )));
            }
            let fits = if pc.lipschitz == 0.0 {
                true
            } else {
                let reach = pc.lipschitz * (mid - lo).max(hi - mid);
                probe_points(lo, hi).iter().all(|&p| {
                    let a = spec.a_poly(p);
                    a == 0.0 || reach < a.powi(accuracy as i32)
                }) && spec.a_poly(lo) > 0.0
                    && spec.a_poly(hi) > 0.0
            };
            if fits {
                intervals.push(CoverInterval {
                    lo,
                    hi,
                    core_lo: c0,
                    core_hi: c1,
                    value: q,
                });
            } else if w < min_width || intervals.len() + stack.len() >= max_intervals {
                uncovered.push((c0, c1));
            } else {
                stack.push((mid, c1));
                stack.push((c0, mid));
            }
        }
    }
    intervals.sort_by(|a, b| a.core_lo.total_cmp(&b.core_lo));
    uncovered.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(CoverSpec {
        accuracy,
        intervals,
        uncovered,
    })
}
