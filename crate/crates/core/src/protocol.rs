//! Composable exact-sampling programs and the hand-built factories.
//!
//! A [`Protocol`] is a tree that is run against a [`Driver`]. The sampling
//! driver is [`CoinSource`]; the enumeration oracle in `verify` is another.

use serde::{Deserialize, Serialize};

use crate::error::{FactoryError, Result};
use crate::quoin::{BellOutcome, CoinSource};
use crate::rng::{cumulative, sample_index, BitSource, LazyUniform};

/// Raw resources and constants a protocol can read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Source {
    PCoin,
    Quoin,
    HCoin {
        a: f64,
    },
    FairBit,
    Heads,
    Tails,
    /// A bit of known probability `q`, drawn from fair bits.
    Known {
        q: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BernsteinMode {
    A,
    B,
}

impl BernsteinMode {
    /// Acceptance probability for a Bernstein node value `v = f(k/n)`.
    pub fn threshold(self, v: f64) -> f64 {
        match self {
            BernsteinMode::A => (2.0 / 3.0) * v,
            BernsteinMode::B => 1.0 / 3.0 + (2.0 / 3.0) * v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum RetryRule {
    /// Run `inner` twice; on unequal results return the second.
    VonNeumann { inner: Box<Protocol> },
    /// Bell-measure pairs until PsiPlus (heads) or PhiMinus (tails).
    BellG1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Protocol {
    Primitive {
        source: Source,
    },
    Negate {
        inner: Box<Protocol>,
    },
    /// Heads iff `k` independent runs of `inner` are all heads. Stops at the first tails.
    AllOfK {
        k: u32,
        inner: Box<Protocol>,
    },
    Mix {
        weights: Vec<f64>,
        branches: Vec<Protocol>,
    },
    Retry {
        rule: RetryRule,
    },
    /// Parity walk on a two-rail ladder driven by `inner` coins; yields `1 - sqrt(1 - g)`.
    Ladder {
        inner: Box<Protocol>,
    },
    /// Series `sum_k q_k g^k` driven by `inner` coins; yields `1 - sqrt(1 - g)`.
    Series {
        inner: Box<Protocol>,
    },
    /// Flip `n` p-coins and accept with the mode's threshold of `values[heads]`.
    Bernstein {
        n: u32,
        mode: BernsteinMode,
        values: Vec<f64>,
    },
}

/// What a protocol needs from whoever runs it.
pub trait Driver {
    fn draw(&mut self, source: &Source) -> Result<bool>;

    fn bell(&mut self) -> Result<BellOutcome>;

    /// 0-based index chosen with the given finite weights.
    fn choose(&mut self, weights: &[f64]) -> Result<usize>;

    /// Repeats `round` until it returns a decision.
    fn retry(
        &mut self,
        round: &mut dyn FnMut(&mut dyn Driver) -> Result<Option<bool>>,
    ) -> Result<bool>;

    /// `U < x` for a lazily expanded uniform shared across calls.
    fn lazy_less_than(&mut self, u: &mut LazyUniform, x: f64) -> Result<bool>;
}

impl Protocol {
    pub fn run(&self, d: &mut dyn Driver) -> Result<bool> {
        match self {
            Protocol::Primitive { source } => d.draw(source),
            Protocol::Negate { inner } => Ok(!inner.run(d)?),
            Protocol::AllOfK { k, inner } => {
                for _ in 0..*k {
                    if !inner.run(d)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Protocol::Mix { weights, branches } => {
                if weights.len() != branches.len() {
                    return Err(FactoryError::Config(
                        "mix weights and branches differ in length".into(),
                    ));
                }
                let i = d.choose(weights)?;
                branches[i].run(d)
            }
            Protocol::Retry { rule } => match rule {
                RetryRule::VonNeumann { inner } => d.retry(&mut |d| {
                    let first = inner.run(d)?;
                    let second = inner.run(d)?;
                    Ok(if first != second { Some(second) } else { None })
                }),
                RetryRule::BellG1 => d.retry(&mut |d| {
                    Ok(match d.bell()? {
                        BellOutcome::PsiPlus => Some(true),
                        BellOutcome::PhiMinus => Some(false),
                        _ => None,
                    })
                }),
            },
            Protocol::Series { inner } => {
                // Index k ~ q_k is drawn lazily alongside the coins: coin j is
                // flipped once k >= j is known, and k = j is then tested.
                let mut u = LazyUniform::new();
                let mut tail = 0.5;
                let mut j = 1u64;
                loop {
                    if !inner.run(d)? {
                        return Ok(false);
                    }
                    if d.lazy_less_than(&mut u, 1.0 - tail)? {
                        return Ok(true);
                    }
                    tail *= (2 * j + 1) as f64 / (2 * j + 2) as f64;
                    j += 1;
                }
            }
            Protocol::Ladder { inner } => {
                if !inner.run(d)? {
                    return Ok(false);
                }
                let mut height = 1u64;
                let mut odd = false;
                loop {
                    if inner.run(d)? {
                        if d.draw(&Source::FairBit)? {
                            height += 1;
                        } else {
                            height -= 1;
                            if height == 0 {
                                return Ok(!odd);
                            }
                        }
                    } else {
                        odd = !odd;
                    }
                }
            }
            Protocol::Bernstein { n, mode, values } => {
                if values.len() != *n as usize + 1 {
                    return Err(FactoryError::Config(format!(
                        "bernstein node of degree {n} needs {} values, got {}",
                        n + 1,
                        values.len()
                    )));
                }
                let mut heads = 0;
                for _ in 0..*n {
                    if d.draw(&Source::PCoin)? {
                        heads += 1;
                    }
                }
                d.draw(&Source::Known {
                    q: mode.threshold(values[heads]),
                })
            }
        }
    }

    /// True if the tree contains a walk or series node.
    pub fn has_unbounded_walk(&self) -> bool {
        match self {
            Protocol::Ladder { .. } | Protocol::Series { .. } => true,
            Protocol::Primitive { .. } | Protocol::Bernstein { .. } => false,
            Protocol::Negate { inner } | Protocol::AllOfK { inner, .. } => {
                inner.has_unbounded_walk()
            }
            Protocol::Mix { branches, .. } => branches.iter().any(Protocol::has_unbounded_walk),
            Protocol::Retry { rule } => match rule {
                RetryRule::VonNeumann { inner } => inner.has_unbounded_walk(),
                RetryRule::BellG1 => false,
            },
        }
    }

    /// Checks parameters that serde cannot.
    pub fn validate(&self) -> Result<()> {
        let prob = |x: f64, what: &str| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(FactoryError::Config(format!("{what} {x} outside [0, 1]")))
            }
        };
        match self {
            Protocol::Primitive { source } => match source {
                Source::HCoin { a } => prob(*a, "rotation parameter"),
                Source::Known { q } => prob(*q, "known probability"),
                _ => Ok(()),
            },
            Protocol::Negate { inner }
            | Protocol::Ladder { inner }
            | Protocol::Series { inner } => inner.validate(),
            Protocol::AllOfK { k, inner } => {
                if *k == 0 {
                    return Err(FactoryError::Config("all-of-k needs k >= 1".into()));
                }
                inner.validate()
            }
            Protocol::Mix { weights, branches } => {
                if weights.is_empty() || weights.len() != branches.len() {
                    return Err(FactoryError::Config(
                        "mix needs one weight per branch".into(),
                    ));
                }
                for w in weights {
                    prob(*w, "mix weight")?;
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(FactoryError::Config(format!("mix weights sum to {total}")));
                }
                branches.iter().try_for_each(Protocol::validate)
            }
            Protocol::Retry { rule } => match rule {
                RetryRule::VonNeumann { inner } => inner.validate(),
                RetryRule::BellG1 => Ok(()),
            },
            Protocol::Bernstein { n, values, .. } => {
                if *n == 0 || values.len() != *n as usize + 1 {
                    return Err(FactoryError::Config(
                        "bernstein needs n >= 1 and n + 1 values".into(),
                    ));
                }
                values.iter().try_for_each(|v| prob(*v, "bernstein value"))
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Protocol> {
        // tagged enums lose positions, so syntax is checked separately
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| {
            FactoryError::Config(format!(
                "protocol JSON at line {} column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        let proto: Protocol = serde_json::from_value(value)
            .map_err(|e| FactoryError::Config(format!("protocol JSON: {e}")))?;
        proto.validate()?;
        Ok(proto)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("protocol trees always serialize")
    }
}

impl Driver for CoinSource {
    fn draw(&mut self, source: &Source) -> Result<bool> {
        match source {
            Source::PCoin => self.p_coin(),
            Source::Quoin => self.measure_quoin(),
            Source::HCoin { a } => self.h_coin(*a),
            Source::FairBit => self.fair_bit(),
            Source::Heads => Ok(true),
            Source::Tails => Ok(false),
            Source::Known { q } => self.known(*q),
        }
    }

    fn bell(&mut self) -> Result<BellOutcome> {
        self.bell_measure()
    }

    fn choose(&mut self, weights: &[f64]) -> Result<usize> {
        Ok(sample_index(cumulative(weights), self.bits())? - 1)
    }

    fn retry(
        &mut self,
        round: &mut dyn FnMut(&mut dyn Driver) -> Result<Option<bool>>,
    ) -> Result<bool> {
        loop {
            let before = self.ledger().total();
            if let Some(b) = round(self)? {
                return Ok(b);
            }
            // an undecided round that drew nothing is deterministic and would repeat forever
            if self.ledger().total() == before {
                return Err(FactoryError::Unsupported(
                    "retry round drew no randomness and decided nothing".into(),
                ));
            }
        }
    }

    fn lazy_less_than(&mut self, u: &mut LazyUniform, x: f64) -> Result<bool> {
        u.less_than(x, self.bits())
    }
}

// ---- builders for the named factories ----

pub fn primitive(source: Source) -> Protocol {
    Protocol::Primitive { source }
}

pub fn p_coin() -> Protocol {
    primitive(Source::PCoin)
}

pub fn quoin() -> Protocol {
    primitive(Source::Quoin)
}

pub fn h_coin(a: f64) -> Protocol {
    primitive(Source::HCoin { a })
}

pub fn negate(inner: Protocol) -> Protocol {
    Protocol::Negate {
        inner: Box::new(inner),
    }
}

/// Fair bit from a biased coin: the second flip of the first unequal pair.
pub fn von_neumann(inner: Protocol) -> Protocol {
    Protocol::Retry {
        rule: RetryRule::VonNeumann {
            inner: Box::new(inner),
        },
    }
}

pub fn power_coin(inner: Protocol, k: u32) -> Protocol {
    Protocol::AllOfK {
        k,
        inner: Box::new(inner),
    }
}

/// Coin with bias `4p(1-p)` from Bell measurements.
pub fn g1_coin() -> Protocol {
    Protocol::Retry {
        rule: RetryRule::BellG1,
    }
}

pub fn f_wedge_series() -> Protocol {
    Protocol::Series {
        inner: Box::new(g1_coin()),
    }
}

pub fn f_wedge_ladder() -> Protocol {
    Protocol::Ladder {
        inner: Box::new(g1_coin()),
    }
}

/// `(1 - (1 - h_z)^m)^M`: M blocks, each needing a one among m h_z-coins.
pub fn t_coin(m: u32, big_m: u32, z: f64) -> Protocol {
    power_coin(negate(power_coin(negate(h_coin(z)), m)), big_m)
}

pub fn bernstein_coin(values: Vec<f64>, mode: BernsteinMode) -> Protocol {
    let n = values.len().saturating_sub(1) as u32;
    Protocol::Bernstein { n, mode, values }
}

/// Tabulates `f(k/n)` for `k = 0..=n`.
pub fn bernstein_values(f: impl Fn(f64) -> f64, n: u32) -> Vec<f64> {
    (0..=n).map(|k| f(k as f64 / n as f64)).collect()
}

pub fn convex_mix(weights: Vec<f64>, branches: Vec<Protocol>) -> Protocol {
    Protocol::Mix { weights, branches }
}

// ---- the index distribution of the f-wedge series ----

/// `q_k = C(2k, k) / ((2k - 1) 4^k)`, computed as `t_{k-1} / (2k)` with `t_j = C(2j, j) / 4^j`.
pub fn qk_weight(k: u64) -> f64 {
    assert!(k >= 1);
    qk_tail(k - 1) / (2 * k) as f64
}

/// `t_j = C(2j, j) / 4^j = 1 - sum_{k <= j} q_k`.
pub fn qk_tail(j: u64) -> f64 {
    let mut t = 1.0;
    for i in 0..j {
        t *= (2 * i + 1) as f64 / (2 * i + 2) as f64;
    }
    t
}

/// Partial sums of `q_k`, as an endless iterator.
pub fn qk_partial_sums() -> impl Iterator<Item = f64> {
    let mut tail = 1.0;
    let mut j = 0u64;
    std::iter::from_fn(move || {
        tail *= (2 * j + 1) as f64 / (2 * j + 2) as f64;
        j += 1;
        Some(1.0 - tail)
    })
}

pub fn qk_index(src: &mut BitSource) -> Result<usize> {
    sample_index(qk_partial_sums(), src)
}
