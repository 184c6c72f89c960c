//! Exact outcome probabilities of bounded protocols by exhaustive replay.
//!
//! The protocol is re-run against a scripted driver. When it asks for a draw
//! past the end of the script, the run is abandoned and one extension of the
//! script per outcome is queued with its probability. Retry loops are summed
//! in closed form: the round itself is enumerated, and the loop decides heads
//! with probability `P(heads) / (P(heads) + P(tails))`.

use crate::error::{FactoryError, Result};
use crate::protocol::{Driver, Protocol, Source};
use crate::quoin::{bell_table, h_value, BellOutcome};
use crate::rng::LazyUniform;

const MAX_TRACES: usize = 1 << 22;
const MAX_RETRY_DEPTH: usize = 8;

/// Outcome distribution of one round of a retry loop, or of a whole protocol.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RoundDist {
    pub heads: f64,
    pub tails: f64,
    pub undecided: f64,
}

/// Exact probability of heads for a protocol without walk or series nodes.
pub fn exact_prob_enum(protocol: &Protocol, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(FactoryError::Config(format!("bias {p} outside [0, 1]")));
    }
    if protocol.has_unbounded_walk() {
        return Err(FactoryError::Unsupported(
            "ladder and series nodes are unbounded and not geometric; the oracle cannot enumerate them".into(),
        ));
    }
    protocol.validate()?;
    let dist = enumerate_round(&mut |d| protocol.run(d).map(Some), p, 0)?;
    Ok(dist.heads)
}

fn enumerate_round(
    round: &mut dyn FnMut(&mut dyn Driver) -> Result<Option<bool>>,
    p: f64,
    depth: usize,
) -> Result<RoundDist> {
    if depth > MAX_RETRY_DEPTH {
        return Err(FactoryError::Unsupported(
            "retry loops nested too deeply".into(),
        ));
    }
    let mut dist = RoundDist::default();
    let mut stack: Vec<(Vec<u8>, f64)> = vec![(Vec::new(), 1.0)];
    let mut traces = 0usize;
    while let Some((script, weight)) = stack.pop() {
        traces += 1;
        if traces > MAX_TRACES {
            return Err(FactoryError::Unsupported(format!(
                "more than {MAX_TRACES} traces"
            )));
        }
        let mut replay = Replay {
            script: &script,
            pos: 0,
            pending: None,
            p,
            depth,
        };
        let outcome = round(&mut replay);
        match (outcome, replay.pending.take()) {
            (Ok(Some(true)), _) => dist.heads += weight,
            (Ok(Some(false)), _) => dist.tails += weight,
            (Ok(None), _) => dist.undecided += weight,
            (Err(_), Some(branches)) => {
                for (i, q) in branches.iter().enumerate() {
                    if *q > 0.0 {
                        let mut next = script.clone();
                        next.push(i as u8);
                        stack.push((next, weight * q));
                    }
                }
            }
            (Err(e), None) => return Err(e),
        }
    }
    Ok(dist)
}

struct Replay<'a> {
    script: &'a [u8],
    pos: usize,
    pending: Option<Vec<f64>>,
    p: f64,
    depth: usize,
}

impl Replay<'_> {
    /// The scripted outcome index, or a request to branch over `probs`.
    fn next(&mut self, probs: impl FnOnce(&mut Self) -> Result<Vec<f64>>) -> Result<usize> {
        if self.pos < self.script.len() {
            let i = self.script[self.pos] as usize;
            self.pos += 1;
            return Ok(i);
        }
        let branches = probs(self)?;
        self.pending = Some(branches);
        Err(FactoryError::Unsupported("trace needs branching".into()))
    }

    fn source_prob(&self, source: &Source) -> f64 {
        match source {
            Source::PCoin | Source::Quoin => self.p,
            Source::HCoin { a } => h_value(*a, self.p),
            Source::FairBit => 0.5,
            Source::Heads => 1.0,
            Source::Tails => 0.0,
            Source::Known { q } => *q,
        }
    }
}

impl Driver for Replay<'_> {
    fn draw(&mut self, source: &Source) -> Result<bool> {
        let q = self.source_prob(source);
        Ok(self.next(|_| Ok(vec![1.0 - q, q]))? == 1)
    }

    fn bell(&mut self) -> Result<BellOutcome> {
        let p = self.p;
        let i = self.next(|_| Ok(bell_table(p).to_vec()))?;
        Ok(BellOutcome::ALL[i])
    }

    fn choose(&mut self, weights: &[f64]) -> Result<usize> {
        self.next(|_| Ok(weights.to_vec()))
    }

    fn retry(
        &mut self,
        round: &mut dyn FnMut(&mut dyn Driver) -> Result<Option<bool>>,
    ) -> Result<bool> {
        let i = self.next(|me| {
            let d = enumerate_round(round, me.p, me.depth + 1)?;
            let decided = d.heads + d.tails;
            if !(decided > 0.0) {
                return Err(FactoryError::Unsupported(
                    "retry loop never decides at this bias".into(),
                ));
            }
            Ok(vec![d.tails / decided, d.heads / decided])
        })?;
        Ok(i == 1)
    }

    fn lazy_less_than(&mut self, _u: &mut LazyUniform, _x: f64) -> Result<bool> {
        Err(FactoryError::Unsupported(
            "lazy uniform comparisons are not enumerable".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::*;

    #[test]
    fn two_flip_square() {
        let v = exact_prob_enum(&power_coin(p_coin(), 2), 0.5).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn g1_geometric_sum() {
        let v = exact_prob_enum(&g1_coin(), 0.3).unwrap();
        assert!((v - 0.84).abs() < 1e-12);
    }

    #[test]
    fn t_coin_small() {
        let v = exact_prob_enum(&t_coin(2, 1, 0.0), 0.5).unwrap();
        assert!((v - 0.75).abs() < 1e-15);
        let v = exact_prob_enum(&t_coin(2, 1, 0.0), 0.25).unwrap();
        assert!((v - 0.4375).abs() < 1e-15);
    }

    #[test]
    fn von_neumann_is_fair() {
        for &p in &[0.1, 0.5, 0.8] {
            let v = exact_prob_enum(&von_neumann(p_coin()), p).unwrap();
            assert!((v - 0.5).abs() < 1e-12);
        }
        assert!(exact_prob_enum(&von_neumann(p_coin()), 1.0).is_err());
    }

    #[test]
    fn walks_are_unsupported() {
        assert!(matches!(
            exact_prob_enum(&f_wedge_ladder(), 0.3),
            Err(FactoryError::Unsupported(_))
        ));
        assert!(matches!(
            exact_prob_enum(&f_wedge_series(), 0.3),
            Err(FactoryError::Unsupported(_))
        ));
    }

    #[test]
    fn mixes_sum_branches() {
        let proto = convex_mix(vec![0.25, 0.75], vec![p_coin(), negate(p_coin())]);
        let v = exact_prob_enum(&proto, 0.2).unwrap();
        assert!((v - (0.25 * 0.2 + 0.75 * 0.8)).abs() < 1e-15);
    }
}
