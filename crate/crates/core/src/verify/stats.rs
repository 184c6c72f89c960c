//! Monte Carlo runs and the statistical tests used to judge them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{FactoryError, Result};
use crate::protocol::Protocol;
use crate::quoin::{bell_table, CoinSource, HiddenBias};
use crate::rng::{FlipLedger, RandomStream};

/// Width of the pass/fail intervals, in standard deviations.
pub const SIGMA: f64 = 4.0;

/// Wilson score interval for `heads` successes in `n` trials at `z` standard deviations.
pub fn wilson_interval(heads: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (x, n) = (heads as f64, n as f64);
    let z2 = z * z;
    let center = (x + z2 / 2.0) / (n + z2);
    let half = z / (n + z2) * (x * (n - x) / n + z2 / 4.0).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Outcome of a batch of independent trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub trials: u64,
    /// Trials that produced an output bit.
    pub completed: u64,
    pub heads: u64,
    /// Trials stopped by the flip budget.
    pub exhausted: u64,
    /// Trials stopped by any other error, with the first such error.
    pub failed: u64,
    pub first_failure: Option<String>,
    pub ledger: FlipLedger,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub sigma: f64,
}

impl RunStats {
    fn from_tally(trials: u64, t: Tally) -> Self {
        let (wilson_low, wilson_high) = wilson_interval(t.heads, t.completed, SIGMA);
        RunStats {
            trials,
            completed: t.completed,
            heads: t.heads,
            exhausted: t.exhausted,
            failed: t.failed,
            first_failure: t.first_failure.map(|(_, msg)| msg),
            ledger: t.ledger,
            wilson_low,
            wilson_high,
            sigma: SIGMA,
        }
    }

    pub fn estimate(&self) -> f64 {
        if self.completed == 0 {
            f64::NAN
        } else {
            self.heads as f64 / self.completed as f64
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.wilson_low <= x && x <= self.wilson_high
    }

    /// Mean raw samples per trial, exhausted trials included.
    pub fn flips_mean(&self) -> f64 {
        self.ledger.total() as f64 / self.trials as f64
    }
}

#[derive(Default)]
struct Tally {
    completed: u64,
    heads: u64,
    exhausted: u64,
    failed: u64,
    /// Lowest failing trial index and its error.
    first_failure: Option<(u64, String)>,
    ledger: FlipLedger,
}

impl Tally {
    fn join(mut self, other: Tally) -> Tally {
        self.completed += other.completed;
        self.heads += other.heads;
        self.exhausted += other.exhausted;
        self.failed += other.failed;
        self.first_failure = match (self.first_failure, other.first_failure) {
            (Some(a), Some(b)) => Some(if a.0 <= b.0 { a } else { b }),
            (a, b) => a.or(b),
        };
        self.ledger.merge(&other.ledger);
        self
    }
}

/// Runs `trial` on `trials` independent coin sources. Trial `i` reads stream
/// `stream_base + i` of `master_seed`, so results do not depend on scheduling.
/// Budget exhaustion and other per-trial errors are counted, not propagated;
/// configuration errors are caught before any trial runs.
pub fn estimate_with<F>(
    bias: HiddenBias,
    trials: u64,
    master_seed: u64,
    stream_base: u64,
    budget: u64,
    trial: F,
) -> Result<RunStats>
where
    F: Fn(&mut CoinSource) -> Result<bool> + Sync,
{
    if trials == 0 {
        return Err(FactoryError::Config("trials must be at least 1".into()));
    }
    let tally = (0..trials)
        .into_par_iter()
        .fold(Tally::default, |mut acc, i| {
            let mut src = CoinSource::new(
                bias,
                RandomStream::new(master_seed, stream_base + i),
                budget,
            );
            match trial(&mut src) {
                Ok(b) => {
                    acc.completed += 1;
                    acc.heads += b as u64;
                    acc.ledger.merge(src.ledger());
                }
                Err(FactoryError::BudgetExhausted { ledger, .. }) => {
                    acc.exhausted += 1;
                    acc.ledger.merge(&ledger);
                }
                Err(e) => {
                    acc.failed += 1;
                    acc.ledger.merge(src.ledger());
                    if acc.first_failure.as_ref().is_none_or(|f| i < f.0) {
                        acc.first_failure = Some((i, e.to_string()));
                    }
                }
            }
            acc
        })
        .reduce(Tally::default, Tally::join);
    Ok(RunStats::from_tally(trials, tally))
}

pub fn estimate_bias(
    protocol: &Protocol,
    bias: HiddenBias,
    trials: u64,
    master_seed: u64,
    stream_base: u64,
    budget: u64,
) -> Result<RunStats> {
    protocol.validate()?;
    estimate_with(bias, trials, master_seed, stream_base, budget, |src| {
        protocol.run(src)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub heads_a: u64,
    pub n_a: u64,
    pub heads_b: u64,
    pub n_b: u64,
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
}

/// Pooled two-proportion z-test, two-sided.
pub fn two_proportion_test(
    heads_a: u64,
    n_a: u64,
    heads_b: u64,
    n_b: u64,
    alpha: f64,
) -> AgreementReport {
    let (xa, na, xb, nb) = (heads_a as f64, n_a as f64, heads_b as f64, n_b as f64);
    let pooled = (xa + xb) / (na + nb);
    let se = (pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb)).sqrt();
    let statistic = if se > 0.0 {
        (xa / na - xb / nb) / se
    } else {
        0.0
    };
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_value = if statistic == 0.0 {
        1.0
    } else {
        2.0 * (1.0 - normal.cdf(statistic.abs()))
    };
    AgreementReport {
        heads_a,
        n_a,
        heads_b,
        n_b,
        statistic,
        p_value,
        alpha,
        reject: p_value < alpha,
    }
}

/// Runs both protocols and compares their completed trials.
pub fn agreement_test(
    protocol_a: &Protocol,
    protocol_b: &Protocol,
    bias: HiddenBias,
    trials: u64,
    (seed_a, seed_b): (u64, u64),
    budget: u64,
    alpha: f64,
) -> Result<(AgreementReport, RunStats, RunStats)> {
    let a = estimate_bias(protocol_a, bias, trials, seed_a, 0, budget)?;
    let b = estimate_bias(protocol_b, bias, trials, seed_b, 0, budget)?;
    Ok((
        two_proportion_test(a.heads, a.completed, b.heads, b.completed, alpha),
        a,
        b,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellReport {
    pub trials: u64,
    /// Counts in the order PhiPlus, PhiMinus, PsiPlus, PsiMinus.
    pub counts: [u64; 4],
    pub expected: [f64; 4],
    pub statistic: f64,
    pub dof: u32,
    pub p_value: f64,
    /// An outcome of probability zero was observed.
    pub impossible_outcome: bool,
    pub alpha: f64,
    pub reject: bool,
}

/// Chi-square goodness of fit of Bell outcomes against the analytic table.
pub fn chi_square_bell(
    bias: HiddenBias,
    trials: u64,
    master_seed: u64,
    alpha: f64,
) -> Result<BellReport> {
    if trials == 0 {
        return Err(FactoryError::Config("trials must be at least 1".into()));
    }
    let mut src = CoinSource::new(bias, RandomStream::new(master_seed, 0), u64::MAX);
    let mut counts = [0u64; 4];
    for _ in 0..trials {
        counts[src.bell_measure()?.index()] += 1;
    }
    let probs = bell_table(bias.value());
    Ok(chi_square_counts(counts, probs, alpha))
}

pub fn chi_square_counts(counts: [u64; 4], probs: [f64; 4], alpha: f64) -> BellReport {
    let trials: u64 = counts.iter().sum();
    let n = trials as f64;
    let mut statistic = 0.0;
    let mut cells = 0u32;
    let mut impossible_outcome = false;
    let mut expected = [0.0; 4];
    for i in 0..4 {
        expected[i] = probs[i] * n;
        if probs[i] > 0.0 {
            cells += 1;
            let d = counts[i] as f64 - expected[i];
            statistic += d * d / expected[i];
        } else if counts[i] > 0 {
            impossible_outcome = true;
        }
    }
    let dof = cells.saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64)
            .expect("positive dof")
            .cdf(statistic)
    };
    BellReport {
        trials,
        counts,
        expected,
        statistic,
        dof,
        p_value,
        impossible_outcome,
        alpha,
        reject: impossible_outcome || p_value < alpha,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(30, 100, 4.0);
        assert!(lo < 0.3 && 0.3 < hi);
        let (lo, hi) = wilson_interval(0, 100, 4.0);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0);
    }

    #[test]
    fn identical_counts_have_p_value_one() {
        let r = two_proportion_test(500, 1000, 500, 1000, 0.01);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.reject);
    }

    #[test]
    fn impossible_cell_rejects() {
        let r = chi_square_counts([50, 25, 25, 1], [0.5, 0.25, 0.25, 0.0], 0.01);
        assert!(r.impossible_outcome && r.reject);
    }
}
