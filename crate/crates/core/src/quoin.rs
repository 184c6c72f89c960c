//! Quoin measurements: computational basis, the rotated basis H(a), and the
//! Bell basis on a pair of identical quoins. Only classical outcomes leave
//! this module.

use serde::{Deserialize, Serialize};

use crate::error::{FactoryError, Result};
use crate::rng::{bernoulli_f64, BitSource, FlipLedger, RandomStream, Resource};

/// Probability that measuring the quoin in the H(a) basis gives outcome one:
/// `(sqrt(p(1-a)) - sqrt(a(1-p)))^2`.
pub fn h_value(a: f64, p: f64) -> f64 {
    let x = (p * (1.0 - a)).sqrt() - (a * (1.0 - p)).sqrt();
    (x * x).clamp(0.0, 1.0)
}

/// Outcome probabilities of a Bell measurement on two copies of the quoin,
/// in the order `[PhiPlus, PhiMinus, PsiPlus, PsiMinus]`.
pub fn bell_table(p: f64) -> [f64; 4] {
    let d = 2.0 * p - 1.0;
    [0.5, d * d / 2.0, 2.0 * p * (1.0 - p), 0.0]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BellOutcome {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellOutcome {
    pub const ALL: [BellOutcome; 4] = [
        BellOutcome::PhiPlus,
        BellOutcome::PhiMinus,
        BellOutcome::PsiPlus,
        BellOutcome::PsiMinus,
    ];

    pub fn index(self) -> usize {
        match self {
            BellOutcome::PhiPlus => 0,
            BellOutcome::PhiMinus => 1,
            BellOutcome::PsiPlus => 2,
            BellOutcome::PsiMinus => 3,
        }
    }
}

/// The unknown parameter of a coin. Protocol code never reads it.
#[derive(Clone, Copy, Debug)]
pub struct HiddenBias {
    p: f64,
}

impl HiddenBias {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(FactoryError::Config(format!("bias {p} outside [0, 1]")));
        }
        Ok(HiddenBias { p })
    }

    pub(crate) fn value(&self) -> f64 {
        self.p
    }
}

/// Supplies coins, quoins and fair bits for one hidden bias, charging each
/// raw sample to a ledger under a budget.
#[derive(Clone, Debug)]
pub struct CoinSource {
    bias: HiddenBias,
    bits: BitSource,
}

impl CoinSource {
    pub fn new(bias: HiddenBias, stream: RandomStream, budget: u64) -> Self {
        CoinSource {
            bias,
            bits: BitSource::new(stream, budget),
        }
    }

    pub fn bits(&mut self) -> &mut BitSource {
        &mut self.bits
    }

    pub fn ledger(&self) -> &FlipLedger {
        self.bits.ledger()
    }

    pub fn take_ledger(&mut self) -> FlipLedger {
        self.bits.take_ledger()
    }

    /// A classical flip; heads with probability p.
    pub fn p_coin(&mut self) -> Result<bool> {
        self.bits.charge(Resource::PCoin, 1)?;
        let p = self.bias.p;
        Ok(self.bits.stream_mut().uniform_below(p))
    }

    /// Computational-basis measurement; heads (outcome 0) with probability p.
    pub fn measure_quoin(&mut self) -> Result<bool> {
        self.bits.charge(Resource::Quoin, 1)?;
        let p = self.bias.p;
        Ok(self.bits.stream_mut().uniform_below(p))
    }

    /// Measurement in the H(a) basis; returns true (outcome one) with probability `h_a(p)`.
    pub fn h_coin(&mut self, a: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&a) {
            return Err(FactoryError::Config(format!(
                "rotation parameter {a} outside [0, 1]"
            )));
        }
        self.bits.charge(Resource::HCoin(a), 1)?;
        let h = h_value(a, self.bias.p);
        Ok(self.bits.stream_mut().uniform_below(h))
    }

    /// Bell measurement on two fresh quoins.
    pub fn bell_measure(&mut self) -> Result<BellOutcome> {
        self.bits.charge(Resource::Quoin, 2)?;
        let p = self.bias.p;
        let stream = self.bits.stream_mut();
        // PhiPlus has probability 1/2; given not PhiPlus, PsiPlus has probability 4p(1-p)
        if stream.next_bit() {
            return Ok(BellOutcome::PhiPlus);
        }
        let g = (4.0 * p * (1.0 - p)).clamp(0.0, 1.0);
        if stream.uniform_below(g) {
            Ok(BellOutcome::PsiPlus)
        } else {
            Ok(BellOutcome::PhiMinus)
        }
    }

    pub fn fair_bit(&mut self) -> Result<bool> {
        self.bits.fair_bit()
    }

    /// A bit with known probability `q`, drawn from fair bits.
    pub fn known(&mut self, q: f64) -> Result<bool> {
        bernoulli_f64(q, &mut self.bits)
    }

    pub(crate) fn bias_value(&self) -> f64 {
        self.bias.value()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(p: f64, seed: u64) -> CoinSource {
        CoinSource::new(
            HiddenBias::new(p).unwrap(),
            RandomStream::new(seed, 0),
            u64::MAX,
        )
    }

    #[test]
    fn degenerate_quoins() {
        let mut one = source(1.0, 1);
        let mut zero = source(0.0, 2);
        for _ in 0..1000 {
            assert!(one.measure_quoin().unwrap());
            assert!(!zero.measure_quoin().unwrap());
        }
        assert_eq!(one.ledger().quoin, 1000);
    }

    #[test]
    fn h_at_own_parameter_is_zero() {
        for &p in &[0.0, 0.1, 0.37, 0.5, 0.9, 1.0] {
            assert_eq!(h_value(p, p), 0.0);
        }
        assert!((h_value(0.25, 0.75) - 0.25).abs() < 1e-15);
        assert!((h_value(0.0, 0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn bell_table_sums_to_one() {
        for i in 0..=1000 {
            let p = i as f64 / 1000.0;
            let t = bell_table(p);
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bell_never_singlet() {
        let mut s = source(0.3, 3);
        for _ in 0..10_000 {
            assert_ne!(s.bell_measure().unwrap(), BellOutcome::PsiMinus);
        }
        assert_eq!(s.ledger().quoin, 20_000);
    }

    #[test]
    fn bad_bias_rejected() {
        assert!(HiddenBias::new(1.5).is_err());
        assert!(HiddenBias::new(f64::NAN).is_err());
    }
}
