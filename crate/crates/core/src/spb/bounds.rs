//! Bounding pairs and the coupled sampler behind the g-coin.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{FactoryError, Result};
use crate::numeric::binomial_row;
use crate::protocol::BernsteinMode;
use crate::quoin::{h_value, CoinSource};
use crate::rng::LazyUniform;
use crate::spb::certificate::SpbCertificate;

/// A factor `T_{m,M,z}(p) = (1 - (1 - h_z(p))^m)^M` placed at `at`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heaviside {
    pub at: f64,
    pub m: u32,
    #[serde(rename = "M")]
    pub big_m: u32,
}

impl Heaviside {
    pub fn value(&self, p: f64) -> f64 {
        t_value(self.m, self.big_m, h_value(self.at, p))
    }

    /// M blocks of up to m h-coins; a block passes on its first one.
    pub fn sample(&self, src: &mut CoinSource) -> Result<bool> {
        for _ in 0..self.big_m {
            let mut passed = false;
            for _ in 0..self.m {
                if src.h_coin(self.at)? {
                    passed = true;
                    break;
                }
            }
            if !passed {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// The interval `{p : h_at(p) <= 1/m}` around `at`, where the factor is small.
    pub fn interval(&self) -> (f64, f64) {
        let level = 1.0 / self.m as f64;
        let edge = |mut inside: f64, mut outside: f64| {
            if h_value(self.at, outside) <= level {
                return outside;
            }
            for _ in 0..100 {
                let mid = 0.5 * (inside + outside);
                if h_value(self.at, mid) <= level {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            inside
        };
        (edge(self.at, 0.0), edge(self.at, 1.0))
    }
}

pub(crate) fn t_value(m: u32, big_m: u32, h: f64) -> f64 {
    (1.0 - (1.0 - h).powi(m as i32)).powi(big_m as i32)
}

/// Bernstein degree and Heaviside factors of one bounding pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingParams {
    pub n: u32,
    pub zero_heavisides: Vec<Heaviside>,
    pub one_heavisides: Vec<Heaviside>,
    /// Points of the verification grid the pair was accepted on.
    pub grid: usize,
}

/// A bounding pair ready for evaluation and sampling: the parameters plus the
/// target's values at the Bernstein nodes `j/n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingLevel {
    pub params: BoundingParams,
    pub node_values: Vec<f64>,
}

impl BoundingLevel {
    pub fn new(params: BoundingParams, node_values: Vec<f64>) -> Result<Self> {
        if node_values.len() != params.n as usize + 1 {
            return Err(FactoryError::Config(format!(
                "degree {} needs {} node values, got {}",
                params.n,
                params.n + 1,
                node_values.len()
            )));
        }
        if node_values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(FactoryError::Config(
                "node values must lie in [0, 1]".into(),
            ));
        }
        Ok(BoundingLevel {
            params,
            node_values,
        })
    }

    /// Bernstein sum of the node values.
    pub fn bernstein(&self, p: f64) -> f64 {
        binomial_row(self.params.n as u64, p)
            .iter()
            .zip(&self.node_values)
            .map(|(b, v)| b * v)
            .sum()
    }

    pub fn zero_product(&self, p: f64) -> f64 {
        self.params
            .zero_heavisides
            .iter()
            .map(|t| t.value(p))
            .product()
    }

    pub fn one_product(&self, p: f64) -> f64 {
        self.params
            .one_heavisides
            .iter()
            .map(|t| t.value(p))
            .product()
    }

    /// `A_n(p) * prod T_z(p)`
    pub fn lower(&self, p: f64) -> f64 {
        (2.0 / 3.0) * self.bernstein(p) * self.zero_product(p)
    }

    /// `B_n(p) * prod T_w(p) + 1 - prod T_w(p)`
    pub fn upper(&self, p: f64) -> f64 {
        let b = 1.0 / 3.0 + (2.0 / 3.0) * self.bernstein(p);
        let t = self.one_product(p);
        b * t + 1.0 - t
    }

    /// `L / (1 - U + L)`
    pub fn g(&self, p: f64) -> f64 {
        let l = self.lower(p);
        l / (1.0 - self.upper(p) + l)
    }
}

/// Node values `f(j/n)` taken from the certificate's expression.
pub fn node_values_from(cert: &SpbCertificate, n: u32) -> Result<Vec<f64>> {
    let target = cert.target()?;
    (0..=n)
        .map(|j| target.eval(j as f64 / n as f64).map(|v| v.clamp(0.0, 1.0)))
        .collect()
}

pub fn eval_l(params: &BoundingParams, cert: &SpbCertificate, p: f64) -> Result<f64> {
    Ok(BoundingLevel::new(params.clone(), node_values_from(cert, params.n)?)?.lower(p))
}

pub fn eval_u(params: &BoundingParams, cert: &SpbCertificate, p: f64) -> Result<f64> {
    Ok(BoundingLevel::new(params.clone(), node_values_from(cert, params.n)?)?.upper(p))
}

/// Counts of coupled draws, shared across threads.
#[derive(Debug, Default)]
pub struct CouplingTally {
    pub draws: AtomicU64,
    pub both: AtomicU64,
    pub only_upper: AtomicU64,
    pub neither: AtomicU64,
    /// Lower event without the upper one. Must stay zero.
    pub violations: AtomicU64,
}

impl CouplingTally {
    fn record(&self, l: bool, u: bool) {
        self.draws.fetch_add(1, Ordering::Relaxed);
        let slot = match (l, u) {
            (true, true) => &self.both,
            (false, true) => &self.only_upper,
            (false, false) => &self.neither,
            (true, false) => &self.violations,
        };
        slot.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> [u64; 5] {
        [
            &self.draws,
            &self.both,
            &self.only_upper,
            &self.neither,
            &self.violations,
        ]
        .map(|a| a.load(Ordering::Relaxed))
    }
}

/// One joint draw `(l_event, u_event)` with `P(l) = L(p)`, `P(u) = U(p)`.
///
/// Both events read the same n p-coins and the same lazy uniform, so the
/// lower acceptance implies the upper one. The zero-side product is only
/// sampled when it can change `l`, and the one-side product only when it can
/// change `u`.
pub fn sample_coupled(level: &BoundingLevel, src: &mut CoinSource) -> Result<(bool, bool)> {
    let mut heads = 0usize;
    for _ in 0..level.params.n {
        if src.p_coin()? {
            heads += 1;
        }
    }
    let v = level.node_values[heads];
    let mut u = LazyUniform::new();
    let a_accept = u.less_than(BernsteinMode::A.threshold(v), src.bits())?;
    let b_accept = a_accept || u.less_than(BernsteinMode::B.threshold(v), src.bits())?;

    let mut l_event = a_accept;
    for t in &level.params.zero_heavisides {
        if !l_event {
            break;
        }
        l_event = t.sample(src)?;
    }
    let mut u_event = b_accept;
    if !u_event {
        let mut all = true;
        for t in &level.params.one_heavisides {
            if !t.sample(src)? {
                all = false;
                break;
            }
        }
        u_event = !all;
    }
    Ok((l_event, u_event))
}

/// Coin of bias `L / (1 - U + L)`: both events give heads, neither gives
/// tails, only the upper event retries.
pub fn g_coin(
    level: &BoundingLevel,
    src: &mut CoinSource,
    tally: Option<&CouplingTally>,
) -> Result<bool> {
    loop {
        let (l, u) = sample_coupled(level, src)?;
        if let Some(t) = tally {
            t.record(l, u);
        }
        if l {
            return Ok(true);
        }
        if !u {
            return Ok(false);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_half() -> BoundingLevel {
        BoundingLevel::new(
            BoundingParams {
                n: 1,
                zero_heavisides: vec![],
                one_heavisides: vec![],
                grid: 0,
            },
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn constant_half_bounds() {
        let lv = constant_half();
        for &p in &[0.0, 0.3, 1.0] {
            assert!((lv.lower(p) - 1.0 / 3.0).abs() < 1e-15);
            assert!((lv.upper(p) - 2.0 / 3.0).abs() < 1e-15);
            assert!((lv.g(p) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn heaviside_vanishes_at_centre() {
        let t = Heaviside {
            at: 0.5,
            m: 8,
            big_m: 2,
        };
        assert_eq!(t.value(0.5), 0.0);
        let (lo, hi) = t.interval();
        assert!(lo < 0.5 && 0.5 < hi);
        assert!((h_value(0.5, lo) - 0.125).abs() < 1e-9);
        let edge = Heaviside {
            at: 0.0,
            m: 4,
            big_m: 1,
        };
        let (lo, hi) = edge.interval();
        assert_eq!(lo, 0.0);
        assert!((hi - 0.25).abs() < 1e-9);
    }

    #[test]
    fn square_lower_is_zero_at_half() {
        let cert = SpbCertificate {
            f: "(2*p-1)^2".into(),
            lipschitz: 4.0,
            zeros: vec![],
            ones: vec![],
        };
        let params = BoundingParams {
            n: 8,
            zero_heavisides: vec![Heaviside {
                at: 0.5,
                m: 32,
                big_m: 1,
            }],
            one_heavisides: vec![],
            grid: 0,
        };
        assert_eq!(eval_l(&params, &cert, 0.5).unwrap(), 0.0);
        let bare = BoundingParams {
            zero_heavisides: vec![],
            ..params
        };
        let a = eval_l(&bare, &cert, 0.3).unwrap();
        let b = eval_u(&bare, &cert, 0.3).unwrap();
        assert!((b - a - 1.0 / 3.0).abs() < 1e-12);
    }
}
