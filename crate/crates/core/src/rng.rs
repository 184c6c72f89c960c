//! Seeded random streams, resource accounting and exact sampling of known
//! probabilities from fair bits.

use std::collections::BTreeMap;
use std::fmt;

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{FactoryError, Result};

const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;

/// Counter-based generator addressed by `(master_seed, stream_id)`.
///
/// Streams with the same address replay the same words. Distinct stream ids
/// select independent ChaCha streams under the same key.
#[derive(Clone, Debug)]
pub struct RandomStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
    bit_buf: u64,
    bits_left: u32,
}

impl RandomStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        RandomStream {
            master_seed,
            stream_id,
            rng,
            bit_buf: 0,
            bits_left: 0,
        }
    }

    /// A sibling stream under the same master seed.
    pub fn derive(&self, stream_id: u64) -> Self {
        RandomStream::new(self.master_seed, stream_id)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Position in the underlying stream, in 32-bit words.
    pub fn counter(&self) -> u64 {
        self.rng.get_word_pos() as u64
    }

    pub fn next_word(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn next_bit(&mut self) -> bool {
        if self.bits_left == 0 {
            self.bit_buf = self.rng.next_u64();
            self.bits_left = 64;
        }
        let b = self.bit_buf & 1 == 1;
        self.bit_buf >>= 1;
        self.bits_left -= 1;
        b
    }

    /// Exact test `U < x` for a uniform `U` and `x` read as the exact dyadic
    /// rational stored in the double. Consumes 64-bit words until decided.
    pub fn uniform_below(&mut self, x: f64) -> bool {
        if !(x > 0.0) {
            return false;
        }
        if x >= 1.0 {
            return true;
        }
        let mut rem = x;
        loop {
            let scaled = rem * TWO_POW_64;
            let chunk = scaled as u64;
            rem = scaled - chunk as f64;
            let w = self.next_word();
            if w != chunk {
                return w < chunk;
            }
            if rem == 0.0 {
                return false;
            }
        }
    }
}

/// Resource kinds tracked by the ledger.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Resource {
    PCoin,
    Quoin,
    HCoin(f64),
    FairBit,
}

/// Per-run counts of consumed raw samples.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlipLedger {
    pub p_coin: u64,
    pub quoin: u64,
    pub fair_bit: u64,
    // keyed by the bit pattern of a; for a >= 0 this orders like the value
    h_coin: BTreeMap<u64, u64>,
}

impl FlipLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, kind: Resource, count: u64) {
        match kind {
            Resource::PCoin => self.p_coin += count,
            Resource::Quoin => self.quoin += count,
            Resource::FairBit => self.fair_bit += count,
            Resource::HCoin(a) => *self.h_coin.entry(a.to_bits()).or_insert(0) += count,
        }
    }

    pub fn merge(&mut self, other: &FlipLedger) {
        self.p_coin += other.p_coin;
        self.quoin += other.quoin;
        self.fair_bit += other.fair_bit;
        for (k, v) in &other.h_coin {
            *self.h_coin.entry(*k).or_insert(0) += v;
        }
    }

    pub fn h_coin(&self, a: f64) -> u64 {
        self.h_coin.get(&a.to_bits()).copied().unwrap_or(0)
    }

    pub fn h_coin_total(&self) -> u64 {
        self.h_coin.values().sum()
    }

    /// Quoins measured in any basis.
    pub fn quoins_consumed(&self) -> u64 {
        self.quoin + self.h_coin_total()
    }

    pub fn total(&self) -> u64 {
        self.p_coin + self.quoin + self.fair_bit + self.h_coin_total()
    }

    /// `(label, count)` pairs in a fixed order.
    pub fn entries(&self) -> Vec<(String, u64)> {
        let mut out = vec![
            ("p-coin".to_string(), self.p_coin),
            ("quoin".to_string(), self.quoin),
        ];
        for (k, v) in &self.h_coin {
            out.push((format!("h-coin({})", f64::from_bits(*k)), *v));
        }
        out.push(("fair-bit".to_string(), self.fair_bit));
        out
    }
}

impl Serialize for FlipLedger {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let entries = self.entries();
        let mut map = serializer.serialize_map(Some(entries.len()))?;
        for (k, v) in entries {
            map.serialize_entry(&k, &v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for FlipLedger {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct LedgerVisitor;

        impl<'de> Visitor<'de> for LedgerVisitor {
            type Value = FlipLedger;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from resource label to count")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut access: A,
            ) -> std::result::Result<FlipLedger, A::Error> {
                let mut ledger = FlipLedger::new();
                while let Some((label, count)) = access.next_entry::<String, u64>()? {
                    let kind = parse_label(&label).ok_or_else(|| {
                        de::Error::custom(format!("unknown resource label `{label}`"))
                    })?;
                    ledger.record(kind, count);
                }
                Ok(ledger)
            }
        }

        deserializer.deserialize_map(LedgerVisitor)
    }
}

fn parse_label(label: &str) -> Option<Resource> {
    match label {
        "p-coin" => Some(Resource::PCoin),
        "quoin" => Some(Resource::Quoin),
        "fair-bit" => Some(Resource::FairBit),
        _ => {
            let inner = label.strip_prefix("h-coin(")?.strip_suffix(')')?;
            inner.parse::<f64>().ok().map(Resource::HCoin)
        }
    }
}

/// A random stream together with its ledger and a per-trial budget on raw samples.
#[derive(Clone, Debug)]
pub struct BitSource {
    stream: RandomStream,
    ledger: FlipLedger,
    budget: u64,
    used: u64,
}

impl BitSource {
    pub fn new(stream: RandomStream, budget: u64) -> Self {
        BitSource {
            stream,
            ledger: FlipLedger::new(),
            budget,
            used: 0,
        }
    }

    pub fn unlimited(stream: RandomStream) -> Self {
        Self::new(stream, u64::MAX)
    }

    pub fn ledger(&self) -> &FlipLedger {
        &self.ledger
    }

    pub fn take_ledger(&mut self) -> FlipLedger {
        self.used = 0;
        std::mem::take(&mut self.ledger)
    }

    pub fn stream(&self) -> &RandomStream {
        &self.stream
    }

    pub fn stream_mut(&mut self) -> &mut RandomStream {
        &mut self.stream
    }

    /// Counts `count` samples of `kind`, failing if that would exceed the budget.
    pub fn charge(&mut self, kind: Resource, count: u64) -> Result<()> {
        if self.used.saturating_add(count) > self.budget {
            return Err(FactoryError::BudgetExhausted {
                limit: self.budget,
                ledger: self.ledger.clone(),
            });
        }
        self.used += count;
        self.ledger.record(kind, count);
        Ok(())
    }

    pub fn fair_bit(&mut self) -> Result<bool> {
        self.charge(Resource::FairBit, 1)?;
        Ok(self.stream.next_bit())
    }
}

/// One step of a binary expansion of a number in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Digit {
    Zero,
    One,
    /// All remaining digits are zero.
    RestZero,
    /// All remaining digits are one (used for the value 1).
    RestOne,
}

/// Lazily produced binary digits of a probability.
pub trait BinaryExpansion {
    fn next_digit(&mut self) -> Result<Digit>;
}

/// Digits of a double, read as the exact dyadic rational it stores.
#[derive(Clone, Debug)]
pub struct DyadicExpansion {
    rem: f64,
    one: bool,
}

impl DyadicExpansion {
    pub fn new(q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(FactoryError::Expansion(format!(
                "probability {q} outside [0, 1]"
            )));
        }
        Ok(DyadicExpansion {
            rem: q,
            one: q == 1.0,
        })
    }
}

impl BinaryExpansion for DyadicExpansion {
    fn next_digit(&mut self) -> Result<Digit> {
        if self.one {
            return Ok(Digit::RestOne);
        }
        if self.rem == 0.0 {
            return Ok(Digit::RestZero);
        }
        // doubling and subtracting one are exact for values in [0, 1)
        let d = self.rem * 2.0;
        if d >= 1.0 {
            self.rem = d - 1.0;
            Ok(Digit::One)
        } else {
            self.rem = d;
            Ok(Digit::Zero)
        }
    }
}

/// Digits of `num / den` by long division.
#[derive(Clone, Debug)]
pub struct RationalExpansion {
    num: u128,
    den: u128,
    one: bool,
}

impl RationalExpansion {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 || num > den {
            return Err(FactoryError::Expansion(format!(
                "{num}/{den} is not a probability"
            )));
        }
        Ok(RationalExpansion {
            num: num as u128,
            den: den as u128,
            one: num == den,
        })
    }
}

impl BinaryExpansion for RationalExpansion {
    fn next_digit(&mut self) -> Result<Digit> {
        if self.one {
            return Ok(Digit::RestOne);
        }
        if self.num == 0 {
            return Ok(Digit::RestZero);
        }
        let d = 2 * self.num;
        if d >= self.den {
            self.num = d - self.den;
            Ok(Digit::One)
        } else {
            self.num = d;
            Ok(Digit::Zero)
        }
    }
}

/// Digits of a real known only through enclosures `lo <= x <= hi`.
///
/// The closure is asked for an enclosure of width at most `2^-bits`. A digit is
/// emitted once both ends agree on it; if refinement stalls at `max_bits` the
/// expansion fails.
pub struct EnclosureExpansion<F: FnMut(u32) -> (f64, f64)> {
    enclose: F,
    digits: u32,
    max_bits: u32,
}

impl<F: FnMut(u32) -> (f64, f64)> EnclosureExpansion<F> {
    pub fn new(enclose: F, max_bits: u32) -> Self {
        EnclosureExpansion {
            enclose,
            digits: 0,
            max_bits,
        }
    }
}

impl<F: FnMut(u32) -> (f64, f64)> BinaryExpansion for EnclosureExpansion<F> {
    fn next_digit(&mut self) -> Result<Digit> {
        let j = self.digits + 1;
        let mut bits = j + 2;
        loop {
            let (lo, hi) = (self.enclose)(bits);
            if !(lo <= hi) || lo < 0.0 || hi > 1.0 {
                return Err(FactoryError::Expansion(format!(
                    "invalid enclosure [{lo}, {hi}]"
                )));
            }
            if lo == hi && lo == 0.0 {
                return Ok(Digit::RestZero);
            }
            if lo == 1.0 {
                return Ok(Digit::RestOne);
            }
            let scale = (j as f64).exp2();
            let dl = ((lo * scale).floor() as u64) & 1;
            let dh = ((hi * scale).floor() as u64) & 1;
            if dl == dh && (hi - lo) * scale < 1.0 {
                self.digits = j;
                return Ok(if dl == 1 { Digit::One } else { Digit::Zero });
            }
            if bits >= self.max_bits {
                return Err(FactoryError::Expansion(format!(
                    "digit {j} undetermined at {bits} bits"
                )));
            }
            bits = (bits + 8).min(self.max_bits);
        }
    }
}

/// Returns 1 with probability exactly `q` by comparing fair bits with the
/// digits of `q`. At least one fair bit is always drawn.
pub fn bernoulli_known(q: &mut dyn BinaryExpansion, src: &mut BitSource) -> Result<bool> {
    let mut drawn = false;
    loop {
        match q.next_digit()? {
            Digit::RestZero => {
                if !drawn {
                    src.fair_bit()?;
                }
                return Ok(false);
            }
            Digit::RestOne => {
                if !drawn {
                    src.fair_bit()?;
                }
                return Ok(true);
            }
            d => {
                let b = src.fair_bit()?;
                drawn = true;
                let digit = d == Digit::One;
                if b != digit {
                    // b = 0 < digit = 1 means the uniform fell below q
                    return Ok(!b);
                }
            }
        }
    }
}

/// `bernoulli_known` for a double treated as an exact dyadic rational.
pub fn bernoulli_f64(q: f64, src: &mut BitSource) -> Result<bool> {
    let mut e = DyadicExpansion::new(q)?;
    bernoulli_known(&mut e, src)
}

/// A uniform on [0, 1) whose binary digits are drawn as fair bits on demand
/// and kept, so it can be compared against several thresholds.
#[derive(Clone, Debug, Default)]
pub struct LazyUniform {
    bits: Vec<bool>,
}

impl LazyUniform {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bits_drawn(&self) -> usize {
        self.bits.len()
    }

    /// Exact test `U < x` with `x` a double read as a dyadic rational.
    pub fn less_than(&mut self, x: f64, src: &mut BitSource) -> Result<bool> {
        let mut e = DyadicExpansion::new(x.clamp(0.0, 1.0))?;
        self.less_than_expansion(&mut e, src)
    }

    pub fn less_than_expansion(
        &mut self,
        x: &mut dyn BinaryExpansion,
        src: &mut BitSource,
    ) -> Result<bool> {
        let mut i = 0;
        loop {
            let digit = match x.next_digit()? {
                Digit::RestZero => return Ok(false),
                Digit::RestOne => return Ok(true),
                d => d == Digit::One,
            };
            if i == self.bits.len() {
                let b = src.fair_bit()?;
                self.bits.push(b);
            }
            let b = self.bits[i];
            if b != digit {
                return Ok(!b);
            }
            i += 1;
        }
    }
}

/// Samples a 1-based index `k` with probability `S_k - S_{k-1}`, given the
/// partial sums `S_1, S_2, ...` (possibly infinitely many).
///
/// Partial sums are clamped to be non-decreasing; a sum above `1 + tol` is a
/// configuration error. A finite sequence must end at 1 within `tol`.
pub fn sample_index<I>(partial_sums: I, src: &mut BitSource) -> Result<usize>
where
    I: IntoIterator<Item = f64>,
{
    const TOL: f64 = 1e-9;
    let mut u = LazyUniform::new();
    let mut prev = 0.0f64;
    let mut last = 0;
    for (i, s) in partial_sums.into_iter().enumerate() {
        if !(s <= 1.0 + TOL) {
            return Err(FactoryError::Config(format!(
                "partial sum {s} at index {} exceeds 1",
                i + 1
            )));
        }
        let s = s.max(prev).min(1.0);
        prev = s;
        last = i + 1;
        if s > 0.0 && u.less_than(s, src)? {
            return Ok(i + 1);
        }
    }
    if last > 0 && prev >= 1.0 - TOL {
        // remaining mass is rounding error; attribute it to the last index
        return Ok(last);
    }
    Err(FactoryError::Config(format!(
        "weights sum to {prev}, not 1"
    )))
}

/// Partial sums of a weight sequence.
pub fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// Parses a seed given in decimal or as `0x`-prefixed hex.
pub fn parse_seed(s: &str) -> Result<u64> {
    let t = s.trim();
    let parsed = if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16)
    } else {
        t.parse::<u64>()
    };
    parsed.map_err(|e| FactoryError::Config(format!("bad seed `{s}`: {e}")))
}
